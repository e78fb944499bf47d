//! Recombination of shard output into a full-posterior approximation.
//!
//! Two routes share the surrogate product `Σ_k f_k(θ) ≈ log π(θ | X)`:
//!
//! * **RF-MH** runs one more random-walk chain directly on the product.
//! * **RF-IS** treats each shard's thinned chain as an importance sample from
//!   its scaled subposterior, weights atom θ_t^k by
//!   `exp{Σ_j f_j(θ_t^k) − λ_k f_k(θ_t^k)}`, keeps the smallest set of largest
//!   weights carrying mass `p`, and pools the shards in proportion to their
//!   effective sample sizes.
//!
//! Scale factors λ_k can be fixed or chosen from cheap moment summaries so
//! that each scaled subposterior covers a two-sigma region of the posterior.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::forest::Forest;
use crate::model::{Dataset, Model, ParamPoint, ShardSpec};
use crate::sampler::{rwmh, ChainOutput, MhConfig, SamplerError};
use crate::seed::rng_from_seed;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CombineError {
    #[error("need at least 2 observations for a moment summary, got {0}")]
    TooFewObservations(usize),
    #[error("sample variance is zero")]
    ZeroVariance,
    #[error("sigma_hat must be positive in every dimension")]
    NonPositiveSigma,
    #[error("summaries disagree on dimension")]
    DimensionMismatch,
    #[error("no overlap between shard {shard} and product surrogate")]
    NoOverlap { shard: usize },
    #[error("shard {shard} has no samples to weight")]
    NoSamples { shard: usize },
    #[error("no surrogates given")]
    NoSurrogates,
    #[error("truncation probability must lie in (0, 1], got {0}")]
    BadTruncation(f64),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
}

/// An approximation `f_k(θ) ≈ log γ_k(θ)`.
pub trait LogSurrogate: Sync {
    fn log_value(&self, theta: &[f64]) -> f64;

    /// Whether θ is inside the region the surrogate was fitted on.
    fn covers(&self, _theta: &[f64]) -> bool {
        true
    }
}

impl LogSurrogate for Forest {
    fn log_value(&self, theta: &[f64]) -> f64 {
        self.predict(theta)
    }

    fn covers(&self, theta: &[f64]) -> bool {
        self.in_training_box(theta)
    }
}

/// The exact shard log density, for checking the pipeline without regression
/// error.
#[derive(Debug, Clone, Copy)]
pub struct ExactLogGamma<'a> {
    pub model: &'a dyn Model,
    pub shard: &'a ShardSpec,
}

impl LogSurrogate for ExactLogGamma<'_> {
    fn log_value(&self, theta: &[f64]) -> f64 {
        self.shard.log_gamma(self.model, theta)
    }
}

/// Zero on the model's support and `-∞` off it. Forests extrapolate as
/// constants, so samplers driven by them need this mask to respect the
/// support.
#[derive(Debug, Clone, Copy)]
pub struct SupportMask<'a>(pub &'a dyn Model);

impl LogSurrogate for SupportMask<'_> {
    fn log_value(&self, theta: &[f64]) -> f64 {
        if self.0.in_support(theta) {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    }
}

/// Moment summary `(θ̂, σ̂)` of a posterior: location and per-dimension
/// spread.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleSummary {
    pub theta_hat: ParamPoint,
    pub sigma_hat: Vec<f64>,
}

/// Maximum-likelihood summary for `N(μ, σ²)` data with θ = (μ, σ²):
/// `θ̂ = (x̄, Σ(x−x̄)²/N)` and `σ̂ = (√(θ̂₂/N), √(2θ̂₂²/N))`.
pub fn mle_summary_gaussian(data: &Dataset) -> Result<MleSummary, CombineError> {
    let n = data.len();
    if n < 2 {
        return Err(CombineError::TooFewObservations(n));
    }
    let nf = n as f64;
    let mean = data.first_coords().sum::<f64>() / nf;
    let var = data.first_coords().map(|x| (x - mean).powi(2)).sum::<f64>() / nf;
    if !(var > 0.0) {
        return Err(CombineError::ZeroVariance);
    }
    Ok(MleSummary {
        theta_hat: ParamPoint(vec![mean, var]),
        sigma_hat: vec![(var / nf).sqrt(), (2.0 * var * var / nf).sqrt()],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaMethod {
    Fixed,
    MleMarkov,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaPlan {
    pub method: LambdaMethod,
    pub lambdas: Vec<f64>,
    /// λ_{k,j}; `+∞` (written as `null`) where shard k is centred exactly on
    /// the posterior in dimension j.
    #[serde(
        serialize_with = "ser_inf_matrix",
        deserialize_with = "de_inf_matrix",
        default
    )]
    pub per_dim_lambdas: Option<Vec<Vec<f64>>>,
}

impl LambdaPlan {
    pub fn fixed(k: usize, lambda: f64) -> Self {
        LambdaPlan {
            method: LambdaMethod::Fixed,
            lambdas: vec![lambda; k],
            per_dim_lambdas: None,
        }
    }
}

fn ser_inf_matrix<S: Serializer>(m: &Option<Vec<Vec<f64>>>, s: S) -> Result<S::Ok, S::Error> {
    let mapped: Option<Vec<Vec<Option<f64>>>> = m.as_ref().map(|rows| {
        rows.iter()
            .map(|r| r.iter().map(|v| v.is_finite().then_some(*v)).collect())
            .collect()
    });
    mapped.serialize(s)
}

fn de_inf_matrix<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<Vec<f64>>>, D::Error> {
    let raw: Option<Vec<Vec<Option<f64>>>> = Option::deserialize(d)?;
    Ok(raw.map(|rows| {
        rows.into_iter()
            .map(|r| r.into_iter().map(|v| v.unwrap_or(f64::INFINITY)).collect())
            .collect()
    }))
}

/// Scale factors from moment summaries.
///
/// Per dimension, `δ_k = max{|θ̂_k − θ̂ − 2σ̂|, |θ̂_k − θ̂ + 2σ̂|}` and
/// `λ_{k,j} = (δ_k / σ̂_k)^{-2}`; shard k then uses the smallest λ_{k,j}. A
/// zero δ contributes `+∞`; if every dimension does, λ_k falls back to 1.
pub fn choose_lambda(
    full: &MleSummary,
    shards: &[MleSummary],
) -> Result<LambdaPlan, CombineError> {
    let d = full.theta_hat.dim();
    if full.sigma_hat.len() != d {
        return Err(CombineError::DimensionMismatch);
    }
    if full.sigma_hat.iter().any(|s| !(*s > 0.0)) {
        return Err(CombineError::NonPositiveSigma);
    }
    let mut lambdas = Vec::with_capacity(shards.len());
    let mut per_dim = Vec::with_capacity(shards.len());
    for shard in shards {
        if shard.theta_hat.dim() != d || shard.sigma_hat.len() != d {
            return Err(CombineError::DimensionMismatch);
        }
        if shard.sigma_hat.iter().any(|s| !(*s > 0.0)) {
            return Err(CombineError::NonPositiveSigma);
        }
        let row: Vec<f64> = (0..d)
            .map(|j| {
                let offset = shard.theta_hat[j] - full.theta_hat[j];
                let two_sigma = 2.0 * full.sigma_hat[j];
                let delta = (offset - two_sigma).abs().max((offset + two_sigma).abs());
                if delta == 0.0 {
                    f64::INFINITY
                } else {
                    (shard.sigma_hat[j] / delta).powi(2)
                }
            })
            .collect();
        let min = row.iter().copied().fold(f64::INFINITY, f64::min);
        lambdas.push(if min.is_finite() { min } else { 1.0 });
        per_dim.push(row);
    }
    Ok(LambdaPlan {
        method: LambdaMethod::MleMarkov,
        lambdas,
        per_dim_lambdas: Some(per_dim),
    })
}

/// RF-MH: random-walk MH on `Σ_k f_k(θ)`.
pub fn rf_mh(surrogates: &[&dyn LogSurrogate], cfg: &MhConfig) -> Result<ChainOutput, CombineError> {
    if surrogates.is_empty() {
        return Err(CombineError::NoSurrogates);
    }
    let target = |theta: &[f64]| surrogate_sum(surrogates, theta);
    Ok(rwmh(target, cfg, None)?)
}

fn surrogate_sum(surrogates: &[&dyn LogSurrogate], theta: &[f64]) -> f64 {
    let mut total = 0.0;
    for s in surrogates {
        total += s.log_value(theta);
    }
    if total.is_nan() {
        f64::NEG_INFINITY
    } else {
        total
    }
}

/// Self-normalized importance weights of shard `k`'s samples (0-based `k`)
/// against the surrogate product. Log weights are max-shifted before
/// exponentiation.
pub fn rf_is_weights(
    samples: &[ParamPoint],
    surrogates: &[&dyn LogSurrogate],
    lambda_k: f64,
    k: usize,
) -> Result<Vec<f64>, CombineError> {
    if samples.is_empty() {
        return Err(CombineError::NoSamples { shard: k + 1 });
    }
    let log_w: Vec<f64> = samples
        .par_iter()
        .map(|theta| log_weight(theta, surrogates, lambda_k, k))
        .collect();
    normalize_log_weights(&log_w).ok_or(CombineError::NoOverlap { shard: k + 1 })
}

fn log_weight(theta: &[f64], surrogates: &[&dyn LogSurrogate], lambda_k: f64, k: usize) -> f64 {
    let mut total = 0.0;
    for (j, s) in surrogates.iter().enumerate() {
        let v = s.log_value(theta);
        if j == k {
            let coef = 1.0 - lambda_k;
            if coef != 0.0 {
                total += coef * v;
            } else if !v.is_finite() {
                total += v;
            }
        } else {
            total += v;
        }
    }
    if total.is_nan() {
        f64::NEG_INFINITY
    } else {
        total
    }
}

/// `exp(l − max l)` normalized to sum 1; `None` if every entry is `-∞`.
pub fn normalize_log_weights(log_w: &[f64]) -> Option<Vec<f64>> {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return None;
    }
    let mut w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= sum);
    Some(w)
}

/// Result of keeping the heaviest atoms up to mass p.
#[derive(Debug, Clone, PartialEq)]
pub struct Truncation {
    /// Number of atoms kept, i_k.
    pub kept: usize,
    /// Original positions of the kept atoms, heaviest first.
    pub order: Vec<usize>,
    /// Kept weights re-normalized over the kept prefix.
    pub weights: Vec<f64>,
}

/// Sorts weights in decreasing order (ties by position) and keeps the shortest
/// prefix whose mass reaches `p`. Zero weights are never kept.
pub fn truncate_weights(weights: &[f64], p: f64) -> Truncation {
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    let positive = order.iter().take_while(|&&i| weights[i] > 0.0).count();
    let mut cum = 0.0;
    let mut kept = positive;
    for (n, &i) in order.iter().take(positive).enumerate() {
        cum += weights[i];
        if cum >= p {
            kept = n + 1;
            break;
        }
    }
    order.truncate(kept);
    let mass: f64 = order.iter().map(|&i| weights[i]).sum();
    let weights = order.iter().map(|&i| weights[i] / mass).collect();
    Truncation {
        kept,
        order,
        weights,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedAtom {
    pub theta: ParamPoint,
    pub weight: f64,
    /// 1-based shard the atom came from.
    pub shard: Option<usize>,
}

/// A discrete probability measure `Σ w̃_ℓ δ_{θ_ℓ}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedAtoms {
    pub atoms: Vec<WeightedAtom>,
    pub source_shard: Option<usize>,
    pub ess: Option<f64>,
}

impl WeightedAtoms {
    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.atoms.first().map_or(0, |a| a.theta.dim())
    }

    pub fn weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.atoms.iter().map(|a| a.weight)
    }

    /// Weighted mean per dimension.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim()];
        for a in &self.atoms {
            for (mj, x) in m.iter_mut().zip(a.theta.iter()) {
                *mj += a.weight * x;
            }
        }
        m
    }

    /// Weighted variance per dimension.
    pub fn variance(&self) -> Vec<f64> {
        let mean = self.mean();
        let mut v = vec![0.0; self.dim()];
        for a in &self.atoms {
            for j in 0..v.len() {
                v[j] += a.weight * (a.theta[j] - mean[j]).powi(2);
            }
        }
        v
    }

    /// The atom with the largest weight.
    pub fn heaviest(&self) -> Option<&WeightedAtom> {
        self.atoms
            .iter()
            .reduce(|best, a| if a.weight > best.weight { a } else { best })
    }
}

/// `ESS = i / (1 + V)` with `V` the population variance of `{i·w̃_ℓ}`.
pub fn ess(atoms: &WeightedAtoms) -> f64 {
    ess_of_weights(atoms.atoms.iter().map(|a| a.weight))
}

fn ess_of_weights(weights: impl Iterator<Item = f64> + Clone) -> f64 {
    let i = weights.clone().count() as f64;
    if i == 0.0 {
        return 0.0;
    }
    let mean = weights.clone().map(|w| i * w).sum::<f64>() / i;
    let var = weights.map(|w| (i * w - mean).powi(2)).sum::<f64>() / i;
    (i / (1.0 + var)).clamp(1.0, i)
}

/// Builds shard `k`'s truncated measure (1-based `k`) with its ESS.
pub fn truncated_atoms(samples: &[ParamPoint], weights: &[f64], p: f64, k: usize) -> WeightedAtoms {
    let t = truncate_weights(weights, p);
    let atoms: Vec<WeightedAtom> = t
        .order
        .iter()
        .zip(&t.weights)
        .map(|(&i, &w)| WeightedAtom {
            theta: samples[i].clone(),
            weight: w,
            shard: Some(k),
        })
        .collect();
    let mut out = WeightedAtoms {
        atoms,
        source_shard: Some(k),
        ess: None,
    };
    out.ess = Some(ess(&out));
    out
}

/// `π̂ ∝ Σ_k ESS_k · π̃_k`. Atoms are ordered by source shard, so the result
/// does not depend on the order shards are passed in.
pub fn pool(per_shard: &[WeightedAtoms]) -> WeightedAtoms {
    let mut shards: Vec<&WeightedAtoms> = per_shard.iter().collect();
    shards.sort_by_key(|s| s.source_shard);
    let total_ess: f64 = shards.iter().map(|s| s.ess.unwrap_or_else(|| ess(s))).sum();
    let mut atoms = Vec::with_capacity(shards.iter().map(|s| s.len()).sum());
    for s in &shards {
        let e = s.ess.unwrap_or_else(|| ess(s));
        for a in &s.atoms {
            atoms.push(WeightedAtom {
                theta: a.theta.clone(),
                weight: e * a.weight / total_ess,
                shard: a.shard.or(s.source_shard),
            });
        }
    }
    let sum: f64 = atoms.iter().map(|a| a.weight).sum();
    atoms.iter_mut().for_each(|a| a.weight /= sum);
    let mut pooled = WeightedAtoms {
        atoms,
        source_shard: None,
        ess: None,
    };
    pooled.ess = Some(ess(&pooled));
    pooled
}

/// Multinomial resampling of `n` equally weighted draws.
pub fn resample(pooled: &WeightedAtoms, n: usize, seed: u64) -> Vec<ParamPoint> {
    let dist = WeightedIndex::new(pooled.weights()).expect("pooled weights are positive");
    let mut rng = rng_from_seed(seed);
    (0..n)
        .map(|_| pooled.atoms[dist.sample(&mut rng)].theta.clone())
        .collect()
}

/// Everything RF-IS produces.
#[derive(Debug, Clone, PartialEq)]
pub struct RfIsOutput {
    pub per_shard: Vec<WeightedAtoms>,
    pub pooled: WeightedAtoms,
    /// Fraction of weighting queries that fell outside some surrogate's
    /// training box.
    pub outside_fraction: f64,
}

/// Full RF-IS pipeline: weight, truncate at `p`, ESS, pool.
pub fn rf_is(
    shard_samples: &[Vec<ParamPoint>],
    surrogates: &[&dyn LogSurrogate],
    lambdas: &[f64],
    p: f64,
) -> Result<RfIsOutput, CombineError> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(CombineError::BadTruncation(p));
    }
    if surrogates.is_empty() {
        return Err(CombineError::NoSurrogates);
    }
    let per_shard: Vec<WeightedAtoms> = shard_samples
        .par_iter()
        .enumerate()
        .map(|(k, samples)| {
            let w = rf_is_weights(samples, surrogates, lambdas[k], k)?;
            let atoms = truncated_atoms(samples, &w, p, k + 1);
            if atoms.len() == 1 {
                log::warn!(
                    "shard {} kept a single atom; its samples barely overlap the product surrogate",
                    k + 1
                );
            }
            Ok(atoms)
        })
        .collect::<Result<_, CombineError>>()?;

    let mut queries = 0usize;
    let mut outside = 0usize;
    for samples in shard_samples {
        for theta in samples {
            for s in surrogates {
                queries += 1;
                if !s.covers(theta) {
                    outside += 1;
                }
            }
        }
    }
    let pooled = pool(&per_shard);
    Ok(RfIsOutput {
        per_shard,
        pooled,
        outside_fraction: if queries > 0 {
            outside as f64 / queries as f64
        } else {
            0.0
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GaussianMeanModel, ShardSpec};
    use proptest::prelude::*;

    struct Const(f64);
    impl LogSurrogate for Const {
        fn log_value(&self, _: &[f64]) -> f64 {
            self.0
        }
    }

    struct Quadratic {
        center: f64,
        curvature: f64,
        shift: f64,
    }
    impl LogSurrogate for Quadratic {
        fn log_value(&self, t: &[f64]) -> f64 {
            -0.5 * self.curvature * (t[0] - self.center).powi(2) + self.shift
        }
    }

    fn pts(xs: &[f64]) -> Vec<ParamPoint> {
        xs.iter().map(|&x| ParamPoint(vec![x])).collect()
    }

    fn atoms(ws: &[f64], shard: usize) -> WeightedAtoms {
        let samples = pts(&(0..ws.len()).map(|i| i as f64).collect::<Vec<_>>());
        truncated_atoms(&samples, ws, 1.0, shard)
    }

    #[test]
    fn mle_summary_of_two_points() {
        let s = mle_summary_gaussian(&Dataset::from_scalars(vec![-1.0, 1.0])).unwrap();
        assert_eq!(s.theta_hat.0, vec![0.0, 1.0]);
        assert!((s.sigma_hat[0] - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((s.sigma_hat[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mle_summary_rejects_degenerate_data() {
        let flat = Dataset::from_scalars(vec![2.5; 20]);
        assert_eq!(mle_summary_gaussian(&flat), Err(CombineError::ZeroVariance));
        let single = Dataset::from_scalars(vec![2.5]);
        assert_eq!(
            mle_summary_gaussian(&single),
            Err(CombineError::TooFewObservations(1))
        );
    }

    fn summary(theta: &[f64], sigma: &[f64]) -> MleSummary {
        MleSummary {
            theta_hat: ParamPoint(theta.to_vec()),
            sigma_hat: sigma.to_vec(),
        }
    }

    #[test]
    fn lambda_one_dimensional_cases() {
        let full = summary(&[0.0], &[1.0]);
        let plan = choose_lambda(&full, &[summary(&[1.0], &[3.0])]).unwrap();
        assert!((plan.lambdas[0] - 1.0).abs() < 1e-15);

        let full = summary(&[0.7], &[0.25]);
        let plan = choose_lambda(&full, &[summary(&[0.7], &[0.5])]).unwrap();
        assert!((plan.lambdas[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn lambda_takes_the_smallest_dimension() {
        // θ̂_k = θ̂ gives δ = 2σ̂ = 1, so λ_{k,j} = σ̂_{k,j}².
        let full = summary(&[0.0, 0.0], &[0.5, 0.5]);
        let shard = summary(&[0.0, 0.0], &[0.4f64.sqrt(), 0.9f64.sqrt()]);
        let plan = choose_lambda(&full, &[shard]).unwrap();
        let row = &plan.per_dim_lambdas.as_ref().unwrap()[0];
        assert!((row[0] - 0.4).abs() < 1e-12 && (row[1] - 0.9).abs() < 1e-12);
        assert!((plan.lambdas[0] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn infinite_lambdas_serialize_as_null() {
        let plan = LambdaPlan {
            method: LambdaMethod::MleMarkov,
            lambdas: vec![1.0],
            per_dim_lambdas: Some(vec![vec![f64::INFINITY, 0.5]]),
        };
        let text = serde_json::to_string(&plan).unwrap();
        assert!(text.contains("[null,0.5]"));
        assert_eq!(serde_json::from_str::<LambdaPlan>(&text).unwrap(), plan);
        let bad = summary(&[0.0], &[0.0]);
        assert_eq!(choose_lambda(&bad, &[]), Err(CombineError::NonPositiveSigma));
    }

    #[test]
    fn lambda_infinite_dimension_is_skipped() {
        let full = MleSummary {
            theta_hat: ParamPoint(vec![0.0, 0.0]),
            sigma_hat: vec![1e-300, 1.0],
        };
        let shard = summary(&[2e-300, 0.0], &[1.0, 1.0]);
        // Dimension 0: δ = 4e-300, so λ_{k,0} overflows to +∞ and dimension 1
        // (δ = 2, λ = 0.25) governs.
        let plan = choose_lambda(&full, &[shard]).unwrap();
        assert!((plan.lambdas[0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn lambda_is_scale_equivariant() {
        let full = summary(&[0.3, 1.0], &[0.1, 0.2]);
        let shards = [summary(&[0.5, 0.7], &[0.3, 0.5]), summary(&[0.1, 1.4], &[0.2, 0.9])];
        let base = choose_lambda(&full, &shards).unwrap();
        let c = 7.5;
        let scale = |s: &MleSummary| MleSummary {
            theta_hat: ParamPoint(s.theta_hat.iter().map(|v| v * c).collect()),
            sigma_hat: s.sigma_hat.iter().map(|v| v * c).collect(),
        };
        let scaled = choose_lambda(&scale(&full), &shards.iter().map(scale).collect::<Vec<_>>())
            .unwrap();
        for (a, b) in base.lambdas.iter().zip(&scaled.lambdas) {
            assert!((a - b).abs() < 1e-12 * a);
        }
    }

    #[test]
    fn single_shard_unit_lambda_gives_uniform_weights() {
        let s = Quadratic {
            center: 0.3,
            curvature: 4.0,
            shift: 0.0,
        };
        let samples = pts(&[-1.0, 0.0, 0.5, 2.0]);
        let w = rf_is_weights(&samples, &[&s], 1.0, 0).unwrap();
        assert!(w.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn weights_match_closed_form_density_ratio() {
        // Two shards of a conjugate Gaussian mean model with exact log γ.
        let model = GaussianMeanModel {
            noise_var: 1.0,
            prior_mean: 0.5,
            prior_var: 4.0,
        };
        let shard = |vals: Vec<f64>, index: usize| ShardSpec {
            index,
            n_shards: 2,
            source_indices: vec![],
            data: Dataset::from_scalars(vals),
            lambda: 1.0,
        };
        let s1 = shard(vec![0.2, -0.4, 1.1], 1);
        let s2 = shard(vec![0.9, 0.3, 0.0, -0.2], 2);
        let exact: [&dyn LogSurrogate; 2] = [
            &ExactLogGamma {
                model: &model,
                shard: &s1,
            },
            &ExactLogGamma {
                model: &model,
                shard: &s2,
            },
        ];
        let samples = pts(&[-0.5, 0.0, 0.3, 0.8, 1.4]);
        let lambda = 0.6;
        let w = rf_is_weights(&samples, &exact, lambda, 0).unwrap();

        // Oracle: γ_1 and γ_2 are Gaussian in μ; the ratio full/γ_1^λ has
        // log-density −½ a μ² + b μ with a, b from the sufficient statistics.
        let prec = |n: f64| n / model.noise_var + 0.5 / model.prior_var;
        let lin = |sum: f64| sum / model.noise_var + 0.5 * model.prior_mean / model.prior_var;
        let (a1, b1) = (prec(3.0), lin(0.9));
        let (a2, b2) = (prec(4.0), lin(1.0));
        let a = (1.0 - lambda) * a1 + a2;
        let b = (1.0 - lambda) * b1 + b2;
        let raw: Vec<f64> = samples
            .iter()
            .map(|p| (-0.5 * a * p[0] * p[0] + b * p[0]).exp())
            .collect();
        let sum: f64 = raw.iter().sum();
        for (got, want) in w.iter().zip(raw.iter().map(|r| r / sum)) {
            assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        }
    }

    #[test]
    fn all_neg_infinite_is_no_overlap() {
        let s = Const(f64::NEG_INFINITY);
        let err = rf_is_weights(&pts(&[0.0, 1.0]), &[&s, &s], 0.5, 1).unwrap_err();
        assert_eq!(err, CombineError::NoOverlap { shard: 2 });
    }

    #[test]
    fn truncation_examples() {
        let w = [0.05, 0.5, 0.15, 0.3];
        let t = truncate_weights(&w, 0.9);
        assert_eq!(t.kept, 3);
        assert_eq!(t.order, vec![1, 3, 2]);
        let expected = [0.5 / 0.95, 0.3 / 0.95, 0.15 / 0.95];
        for (a, b) in t.weights.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((t.weights[0] - 0.5263).abs() < 1e-4);
        assert!((t.weights[1] - 0.3158).abs() < 1e-4);
        assert!((t.weights[2] - 0.1579).abs() < 1e-4);
        assert_eq!(truncate_weights(&w, 0.99).kept, 4);
        assert_eq!(truncate_weights(&w, 1.0).kept, 4);
    }

    #[test]
    fn ess_examples() {
        assert_eq!(ess(&atoms(&[0.25; 4], 1)), 4.0);
        let two = atoms(&[0.75, 0.25], 1);
        assert!((ess(&two) - 1.6).abs() < 1e-12);
        let n = 50;
        let mut ws = vec![1e-12; n];
        ws[0] = 1.0 - 1e-12 * (n - 1) as f64;
        assert!((ess(&atoms(&ws, 1)) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn pool_single_shard_is_identity() {
        let a = atoms(&[0.6, 0.3, 0.1], 1);
        let pooled = pool(std::slice::from_ref(&a));
        for (x, y) in pooled.atoms.iter().zip(&a.atoms) {
            assert_eq!(x.theta, y.theta);
            assert!((x.weight - y.weight).abs() < 1e-15);
        }
    }

    #[test]
    fn pool_equal_ess_averages() {
        let a = atoms(&[0.5, 0.5], 1);
        let mut b = atoms(&[0.5, 0.5], 2);
        b.ess = a.ess;
        let pooled = pool(&[a, b]);
        assert!(pooled.weights().all(|w| (w - 0.25).abs() < 1e-15));
    }

    #[test]
    fn pool_degenerate_ess_keeps_dominant_shard() {
        let mut a = atoms(&[0.7, 0.3], 1);
        let mut b = atoms(&[0.5, 0.5], 2);
        a.ess = Some(100.0);
        b.ess = Some(1e-12);
        let pooled = pool(&[a, b]);
        let mass1: f64 = pooled
            .atoms
            .iter()
            .filter(|x| x.shard == Some(1))
            .map(|x| x.weight)
            .sum();
        assert!((mass1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn resample_single_atom_and_determinism() {
        let a = atoms(&[1.0], 1);
        let draws = resample(&a, 10, 3);
        assert!(draws.iter().all(|p| p[0] == 0.0));
        let b = atoms(&[0.2, 0.3, 0.5], 1);
        assert_eq!(resample(&b, 100, 7), resample(&b, 100, 7));
    }

    #[test]
    fn resample_uniform_counts() {
        let m = 10;
        let n = 100_000;
        let a = atoms(&vec![1.0 / m as f64; m], 1);
        let mut counts = vec![0usize; m];
        for p in resample(&a, n, 11) {
            counts[p[0] as usize] += 1;
        }
        let expect = n as f64 / m as f64;
        let sd = (n as f64 * (1.0 / m as f64) * (1.0 - 1.0 / m as f64)).sqrt();
        for c in counts {
            assert!((c as f64 - expect).abs() < 4.0 * sd);
        }
    }

    #[test]
    fn constant_surrogates_accept_everything() {
        let cfg = MhConfig {
            n_iters: 1_000,
            burn_in: 0,
            thin: 1,
            step_scale: vec![1.0],
            init: ParamPoint(vec![0.0]),
            seed: 1,
            adapt_during_burnin: false,
        };
        let (a, b) = (Const(-3.0), Const(2.0));
        let out = rf_mh(&[&a, &b], &cfg).unwrap();
        assert_eq!(out.acceptance_rate, 1.0);
    }

    proptest! {
        #[test]
        fn weights_are_shift_invariant(
            xs in prop::collection::vec(-3.0f64..3.0, 1..40),
            shift in -50.0f64..50.0,
            lambda in 0.05f64..2.0,
            p in 0.5f64..1.0,
        ) {
            let samples = pts(&xs);
            let base = [
                Quadratic { center: 0.2, curvature: 2.0, shift: 0.0 },
                Quadratic { center: -0.4, curvature: 1.0, shift: 0.0 },
            ];
            let moved = [
                Quadratic { center: 0.2, curvature: 2.0, shift },
                Quadratic { center: -0.4, curvature: 1.0, shift },
            ];
            let b: Vec<&dyn LogSurrogate> = base.iter().map(|q| q as &dyn LogSurrogate).collect();
            let m: Vec<&dyn LogSurrogate> = moved.iter().map(|q| q as &dyn LogSurrogate).collect();
            let w0 = rf_is_weights(&samples, &b, lambda, 0).unwrap();
            let w1 = rf_is_weights(&samples, &m, lambda, 0).unwrap();
            for (a, c) in w0.iter().zip(&w1) {
                prop_assert!((a - c).abs() < 1e-9);
            }
            let t0 = truncated_atoms(&samples, &w0, p, 1);
            let t1 = truncated_atoms(&samples, &w1, p, 1);
            prop_assert!((t0.ess.unwrap() - t1.ess.unwrap()).abs() < 1e-6 * t0.len() as f64);
        }

        #[test]
        fn truncation_monotone_in_p(
            raw in prop::collection::vec(0.001f64..1.0, 1..60),
            p1 in 0.01f64..1.0,
            p2 in 0.01f64..1.0,
        ) {
            let sum: f64 = raw.iter().sum();
            let w: Vec<f64> = raw.iter().map(|v| v / sum).collect();
            let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
            prop_assert!(truncate_weights(&w, lo).kept <= truncate_weights(&w, hi).kept);
            let full = truncate_weights(&w, 1.0);
            prop_assert_eq!(full.kept, w.len());
        }

        #[test]
        fn ess_between_one_and_count(raw in prop::collection::vec(1e-9f64..1.0, 1..80)) {
            let sum: f64 = raw.iter().sum();
            let w: Vec<f64> = raw.iter().map(|v| v / sum).collect();
            let a = atoms(&w, 1);
            let e = ess(&a);
            prop_assert!(e >= 1.0 && e <= a.len() as f64);
        }

        #[test]
        fn pool_ignores_shard_order(
            w1 in prop::collection::vec(0.01f64..1.0, 1..10),
            w2 in prop::collection::vec(0.01f64..1.0, 1..10),
            w3 in prop::collection::vec(0.01f64..1.0, 1..10),
        ) {
            let norm = |w: &Vec<f64>| {
                let s: f64 = w.iter().sum();
                w.iter().map(|v| v / s).collect::<Vec<_>>()
            };
            let a = atoms(&norm(&w1), 1);
            let b = atoms(&norm(&w2), 2);
            let c = atoms(&norm(&w3), 3);
            let p1 = pool(&[a.clone(), b.clone(), c.clone()]);
            let p2 = pool(&[c, a, b]);
            prop_assert_eq!(p1, p2);
        }
    }
}

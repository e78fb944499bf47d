//! Comparison combiners: consensus Monte Carlo and the product of per-shard
//! kernel density estimates.
//!
//! Both consume aligned, unscaled (λ = 1) shard chains.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::model::ParamPoint;
use crate::seed::rng_from_seed;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum BaselineError {
    #[error("no shard chains given")]
    Empty,
    #[error("shard {shard} has {got} draws, expected {expected}")]
    UnequalLengths {
        shard: usize,
        expected: usize,
        got: usize,
    },
    #[error("shard {shard} draws disagree on dimension")]
    DimensionMismatch { shard: usize },
    #[error("sample covariance of shard {shard} is singular")]
    SingularCovariance { shard: usize },
    #[error("combined precision is singular")]
    SingularPrecision,
    #[error("need at least {needed} draws per shard, got {got}")]
    TooFewDraws { needed: usize, got: usize },
    #[error("bandwidth must be positive in every dimension")]
    BadBandwidth,
}

/// K aligned chains of equal length T, one per shard.
#[derive(Debug, Clone, PartialEq)]
pub struct SubchainSet {
    chains: Vec<Vec<ParamPoint>>,
    dim: usize,
}

impl SubchainSet {
    pub fn new(chains: Vec<Vec<ParamPoint>>) -> Result<Self, BaselineError> {
        let first = chains.first().ok_or(BaselineError::Empty)?;
        let t = first.len();
        let dim = first.first().map_or(0, |p| p.dim());
        for (k, chain) in chains.iter().enumerate() {
            if chain.len() != t {
                return Err(BaselineError::UnequalLengths {
                    shard: k + 1,
                    expected: t,
                    got: chain.len(),
                });
            }
            if chain.iter().any(|p| p.dim() != dim) {
                return Err(BaselineError::DimensionMismatch { shard: k + 1 });
            }
        }
        Ok(SubchainSet { chains, dim })
    }

    pub fn n_shards(&self) -> usize {
        self.chains.len()
    }

    pub fn len(&self) -> usize {
        self.chains[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn chains(&self) -> &[Vec<ParamPoint>] {
        &self.chains
    }
}

fn sample_covariance(chain: &[ParamPoint], d: usize) -> DMatrix<f64> {
    let n = chain.len() as f64;
    let mut mean = DVector::zeros(d);
    for p in chain {
        mean += DVector::from_column_slice(p);
    }
    mean /= n;
    let mut cov = DMatrix::zeros(d, d);
    for p in chain {
        let z = DVector::from_column_slice(p) - &mean;
        cov += &z * z.transpose();
    }
    cov / (n - 1.0)
}

/// Consensus Monte Carlo: `θ_t = (Σ_k W_k)^{-1} Σ_k W_k θ_t^k` with `W_k` the
/// inverse sample covariance of shard k.
pub fn consensus_combine(chains: &SubchainSet) -> Result<Vec<ParamPoint>, BaselineError> {
    let d = chains.dim();
    if chains.len() < 2 {
        return Err(BaselineError::TooFewDraws {
            needed: 2,
            got: chains.len(),
        });
    }
    let precisions: Vec<DMatrix<f64>> = chains
        .chains()
        .iter()
        .enumerate()
        .map(|(k, chain)| {
            sample_covariance(chain, d)
                .try_inverse()
                .filter(|m| m.iter().all(|v| v.is_finite()))
                .ok_or(BaselineError::SingularCovariance { shard: k + 1 })
        })
        .collect::<Result<_, _>>()?;
    let total = precisions
        .iter()
        .fold(DMatrix::zeros(d, d), |acc, w| acc + w);
    let total_inv = total
        .try_inverse()
        .ok_or(BaselineError::SingularPrecision)?;

    Ok((0..chains.len())
        .into_par_iter()
        .map(|t| {
            let mut acc = DVector::zeros(d);
            for (w, chain) in precisions.iter().zip(chains.chains()) {
                acc += w * DVector::from_column_slice(&chain[t]);
            }
            ParamPoint((&total_inv * acc).as_slice().to_vec())
        })
        .collect())
}

/// Per-dimension rule-of-thumb bandwidth `h_j = T^{-1/(d+4)} · σ̄_j`, with
/// σ̄_j the shard chains' standard deviations averaged over shards.
pub fn silverman_bandwidth(chains: &SubchainSet) -> Vec<f64> {
    let d = chains.dim();
    let t = chains.len() as f64;
    let factor = t.powf(-1.0 / (d as f64 + 4.0));
    let mut h = vec![0.0; d];
    for chain in chains.chains() {
        for (j, hj) in h.iter_mut().enumerate() {
            let mean = chain.iter().map(|p| p[j]).sum::<f64>() / t;
            let var = chain.iter().map(|p| (p[j] - mean).powi(2)).sum::<f64>() / (t - 1.0);
            *hj += var.sqrt();
        }
    }
    h.iter()
        .map(|s| factor * s / chains.n_shards() as f64)
        .collect()
}

/// Metropolis-within-Gibbs over the kernel index vector `(t_1, …, t_K)` of
/// the product of K equal-weight Gaussian mixtures.
///
/// The mixture weight of an index vector is
/// `Π_k N(θ_{t_k}^k; θ̄, h²)`, `θ̄` the mean of the selected centres; given
/// the indices a draw is `N(θ̄, h²/K)`.
pub struct KdeProductSampler<'a> {
    chains: &'a SubchainSet,
    inv_two_h2: Vec<f64>,
    draw_sd: Vec<f64>,
    indices: Vec<usize>,
    current: f64,
    rng: ChaCha8Rng,
    mean: Vec<f64>,
}

impl<'a> KdeProductSampler<'a> {
    pub fn new(chains: &'a SubchainSet, bandwidth: &[f64], seed: u64) -> Result<Self, BaselineError> {
        if chains.len() < 2 {
            return Err(BaselineError::TooFewDraws {
                needed: 2,
                got: chains.len(),
            });
        }
        if bandwidth.len() != chains.dim() || bandwidth.iter().any(|h| !(*h > 0.0)) {
            return Err(BaselineError::BadBandwidth);
        }
        let k = chains.n_shards() as f64;
        let mut rng = rng_from_seed(seed);
        let indices = (0..chains.n_shards())
            .map(|_| rng.random_range(0..chains.len()))
            .collect();
        let mut sampler = KdeProductSampler {
            chains,
            inv_two_h2: bandwidth.iter().map(|h| 0.5 / (h * h)).collect(),
            draw_sd: bandwidth.iter().map(|h| h / k.sqrt()).collect(),
            indices,
            current: 0.0,
            rng,
            mean: vec![0.0; chains.dim()],
        };
        sampler.current = sampler.log_weight();
        Ok(sampler)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    fn log_weight(&mut self) -> f64 {
        let k = self.indices.len() as f64;
        self.mean.iter_mut().for_each(|m| *m = 0.0);
        for (chain, &t) in self.chains.chains().iter().zip(&self.indices) {
            for (m, x) in self.mean.iter_mut().zip(chain[t].iter()) {
                *m += x / k;
            }
        }
        let mut total = 0.0;
        for (chain, &t) in self.chains.chains().iter().zip(&self.indices) {
            for (j, x) in chain[t].iter().enumerate() {
                total -= (x - self.mean[j]).powi(2) * self.inv_two_h2[j];
            }
        }
        total
    }

    /// One pass over all K coordinates.
    pub fn sweep(&mut self) {
        let t_len = self.chains.len();
        for k in 0..self.indices.len() {
            let old = self.indices[k];
            self.indices[k] = self.rng.random_range(0..t_len);
            let proposed = self.log_weight();
            let log_u: f64 = self.rng.random::<f64>().ln();
            if log_u < proposed - self.current {
                self.current = proposed;
            } else {
                self.indices[k] = old;
            }
        }
    }

    /// A draw from the Gaussian component selected by the current indices.
    pub fn draw(&mut self) -> ParamPoint {
        self.log_weight();
        let mean = self.mean.clone();
        ParamPoint(
            mean.iter()
                .zip(&self.draw_sd)
                .map(|(m, sd)| {
                    let z: f64 = self.rng.sample(StandardNormal);
                    m + sd * z
                })
                .collect(),
        )
    }
}

const KDE_WARMUP_SWEEPS: usize = 200;

/// Draws `n_out` points from the product of the shards' KDEs, running
/// `n_gibbs_sweeps` index sweeps between consecutive draws.
pub fn kde_product_sample(
    chains: &SubchainSet,
    bandwidth: &[f64],
    n_out: usize,
    n_gibbs_sweeps: usize,
    seed: u64,
) -> Result<Vec<ParamPoint>, BaselineError> {
    let mut sampler = KdeProductSampler::new(chains, bandwidth, seed)?;
    for _ in 0..KDE_WARMUP_SWEEPS {
        sampler.sweep();
    }
    let sweeps = n_gibbs_sweeps.max(1);
    Ok((0..n_out)
        .map(|_| {
            for _ in 0..sweeps {
                sampler.sweep();
            }
            sampler.draw()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(xs: &[[f64; 2]]) -> Vec<ParamPoint> {
        xs.iter().map(|x| ParamPoint(x.to_vec())).collect()
    }

    fn random_chain(seed: u64, n: usize, center: [f64; 2], sd: f64) -> Vec<ParamPoint> {
        let mut rng = rng_from_seed(seed);
        (0..n)
            .map(|_| {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                ParamPoint(vec![center[0] + sd * a, center[1] + sd * (0.5 * a + b)])
            })
            .collect()
    }

    #[test]
    fn single_shard_consensus_is_identity() {
        let c = random_chain(1, 200, [0.3, -1.0], 0.7);
        let set = SubchainSet::new(vec![c.clone()]).unwrap();
        for (a, b) in consensus_combine(&set).unwrap().iter().zip(&c) {
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_shards_reproduce_the_chain() {
        let c = random_chain(2, 100, [1.0, 2.0], 0.4);
        let set = SubchainSet::new(vec![c.clone(), c.clone(), c.clone()]).unwrap();
        for (a, b) in consensus_combine(&set).unwrap().iter().zip(&c) {
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn equal_variances_average_pointwise() {
        let a: Vec<ParamPoint> = [0.0, 1.0, 2.0, 3.0].iter().map(|&x| ParamPoint(vec![x])).collect();
        let b: Vec<ParamPoint> = [5.0, 2.0, 4.0, 3.0].iter().map(|&x| ParamPoint(vec![x])).collect();
        let set = SubchainSet::new(vec![a.clone(), b.clone()]).unwrap();
        let out = consensus_combine(&set).unwrap();
        for ((o, x), y) in out.iter().zip(&a).zip(&b) {
            assert!((o[0] - 0.5 * (x[0] + y[0])).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_covariance_names_the_shard() {
        let good = random_chain(3, 50, [0.0, 0.0], 1.0);
        let flat = chain(&[[1.0, 1.0]; 50]);
        let set = SubchainSet::new(vec![good, flat]).unwrap();
        assert_eq!(
            consensus_combine(&set),
            Err(BaselineError::SingularCovariance { shard: 2 })
        );
    }

    #[test]
    fn unequal_lengths_rejected() {
        let err = SubchainSet::new(vec![
            random_chain(1, 10, [0.0, 0.0], 1.0),
            random_chain(2, 9, [0.0, 0.0], 1.0),
        ])
        .unwrap_err();
        assert!(matches!(err, BaselineError::UnequalLengths { shard: 2, .. }));
    }

    #[test]
    fn kde_single_shard_matches_chain_moments() {
        let c = random_chain(5, 2_000, [1.5, -0.5], 0.5);
        let set = SubchainSet::new(vec![c.clone()]).unwrap();
        let h = silverman_bandwidth(&set);
        let out = kde_product_sample(&set, &h, 20_000, 1, 9).unwrap();
        for j in 0..2 {
            let chain_mean = c.iter().map(|p| p[j]).sum::<f64>() / c.len() as f64;
            let chain_var =
                c.iter().map(|p| (p[j] - chain_mean).powi(2)).sum::<f64>() / c.len() as f64;
            let m = out.iter().map(|p| p[j]).sum::<f64>() / out.len() as f64;
            let v = out.iter().map(|p| (p[j] - m).powi(2)).sum::<f64>() / out.len() as f64;
            assert!((m - chain_mean).abs() < 0.03, "mean {m} vs {chain_mean}");
            // KDE variance = sample variance + h².
            let expected = chain_var + h[j] * h[j];
            assert!((v - expected).abs() < 0.05 * expected, "var {v} vs {expected}");
        }
    }

    #[test]
    fn kde_constant_chains_concentrate() {
        let c = chain(&[[2.0, -1.0]; 10]);
        let set = SubchainSet::new(vec![c.clone(), c.clone(), c]).unwrap();
        let h = [0.3, 0.3];
        let out = kde_product_sample(&set, &h, 5_000, 2, 1).unwrap();
        let m0 = out.iter().map(|p| p[0]).sum::<f64>() / out.len() as f64;
        let v0 = out.iter().map(|p| (p[0] - m0).powi(2)).sum::<f64>() / out.len() as f64;
        assert!((m0 - 2.0).abs() < 0.02);
        assert!((v0 - 0.09 / 3.0).abs() < 0.003);

        let tiny = kde_product_sample(&set, &[1e-9, 1e-9], 100, 1, 2).unwrap();
        assert!(tiny.iter().all(|p| (p[0] - 2.0).abs() < 1e-6 && (p[1] + 1.0).abs() < 1e-6));
    }

    #[test]
    fn kde_deterministic_given_seed() {
        let set = SubchainSet::new(vec![
            random_chain(1, 30, [0.0, 0.0], 1.0),
            random_chain(2, 30, [0.5, 0.0], 1.0),
        ])
        .unwrap();
        let h = silverman_bandwidth(&set);
        assert_eq!(
            kde_product_sample(&set, &h, 50, 2, 4).unwrap(),
            kde_product_sample(&set, &h, 50, 2, 4).unwrap()
        );
    }

    #[test]
    fn kde_index_chain_matches_enumeration() {
        let a = chain(&[[0.0, 0.0], [1.0, 0.5], [2.5, -1.0]]);
        let b = chain(&[[0.5, 0.0], [1.5, 1.0], [-1.0, 0.5]]);
        let h = [1.2, 0.9];
        // Product of the two kernels integrated over θ, up to a constant.
        let mut exact = [[0.0; 3]; 3];
        for (i, x) in a.iter().enumerate() {
            for (j, y) in b.iter().enumerate() {
                let e: f64 = (0..2).map(|d| (x[d] - y[d]).powi(2) / (4.0 * h[d] * h[d])).sum();
                exact[i][j] = (-e).exp();
            }
        }
        let z: f64 = exact.iter().flatten().sum();
        let set = SubchainSet::new(vec![a, b]).unwrap();
        let mut sampler = KdeProductSampler::new(&set, &h, 21).unwrap();
        let sweeps = 1_000_000;
        let mut counts = [[0usize; 3]; 3];
        for _ in 0..sweeps {
            sampler.sweep();
            let t = sampler.indices();
            counts[t[0]][t[1]] += 1;
        }
        for i in 0..3 {
            for j in 0..3 {
                let freq = counts[i][j] as f64 / sweeps as f64;
                assert!((freq - exact[i][j] / z).abs() < 0.01, "({i},{j}) {freq} vs {}", exact[i][j] / z);
            }
        }
    }
}

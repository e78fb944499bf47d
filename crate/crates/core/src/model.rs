//! Datasets, observation models and data shards.
//!
//! A shard's log-density is
//!
//! ```text
//! log γ_k(θ) = (1/K)·log π₀(θ) + Σ_{x ∈ X_k} log p(x | θ)
//! ```
//!
//! and the scaled subposterior a shard chain targets is `λ_k · log γ_k(θ)`.
//! Normalizing constants are never computed. Everything is evaluated in log
//! space; off-support parameters evaluate to `-∞`.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::ops::{Deref, DerefMut};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, LogNormal, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::seed::rng_from_seed;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("dataset must contain at least one observation")]
    EmptyDataset,
    #[error("observation dimension must be at least 1")]
    ZeroDimension,
    #[error("{len} values cannot be split into observations of dimension {dim}")]
    RaggedObservations { len: usize, dim: usize },
    #[error("shard count must be at least 1")]
    ZeroShards,
    #[error("{n} observations cannot be split into {k} equal shards")]
    UnevenShards { n: usize, k: usize },
    #[error("non-finite observation at line {line}")]
    NonFinite { line: usize },
    #[error("malformed dataset at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("parameter has dimension {got}, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// A point θ in parameter space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamPoint(pub Vec<f64>);

impl ParamPoint {
    pub fn new(coords: Vec<f64>) -> Self {
        ParamPoint(coords)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ParamPoint {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamPoint {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for ParamPoint {
    fn from(v: Vec<f64>) -> Self {
        ParamPoint(v)
    }
}

impl From<&[f64]> for ParamPoint {
    fn from(v: &[f64]) -> Self {
        ParamPoint(v.to_vec())
    }
}

/// Ordered observations of a common dimension, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    obs_dim: usize,
    values: Vec<f64>,
}

impl Dataset {
    pub fn new(obs_dim: usize, values: Vec<f64>) -> Result<Self, ModelError> {
        if obs_dim == 0 {
            return Err(ModelError::ZeroDimension);
        }
        if !values.len().is_multiple_of(obs_dim) {
            return Err(ModelError::RaggedObservations {
                len: values.len(),
                dim: obs_dim,
            });
        }
        Ok(Dataset { obs_dim, values })
    }

    /// One-dimensional observations.
    pub fn from_scalars(values: Vec<f64>) -> Self {
        Dataset { obs_dim: 1, values }
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.obs_dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn observation(&self, i: usize) -> &[f64] {
        &self.values[i * self.obs_dim..(i + 1) * self.obs_dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.obs_dim)
    }

    /// Raw row-major values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// The observations at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut values = Vec::with_capacity(indices.len() * self.obs_dim);
        for &i in indices {
            values.extend_from_slice(self.observation(i));
        }
        Dataset {
            obs_dim: self.obs_dim,
            values,
        }
    }

    /// First coordinate of every observation.
    pub fn first_coords(&self) -> impl Iterator<Item = f64> + '_ {
        self.iter().map(|x| x[0])
    }

    /// Writes one observation per line, preceded by a `# d=<dim>` header.
    pub fn write_text<W: Write>(&self, mut out: W) -> Result<(), ModelError> {
        writeln!(out, "# d={}", self.obs_dim)?;
        for x in self.iter() {
            let line: Vec<String> = x.iter().map(|v| format!("{v:?}")).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let file = fs::File::create(path)?;
        self.write_text(std::io::BufWriter::new(file))
    }

    /// Parses the text format written by [`Dataset::write_text`]. The header is
    /// optional; without it the dimension is taken from the first data line.
    /// Values on a line may be separated by whitespace or commas.
    pub fn read_text<R: BufRead>(input: R) -> Result<Self, ModelError> {
        let mut declared: Option<usize> = None;
        let mut obs_dim: Option<usize> = None;
        let mut values = Vec::new();
        for (idx, line) in input.lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            if let Some(comment) = trimmed.strip_prefix('#') {
                if let Some(d) = comment.trim().strip_prefix("d=") {
                    let d: usize = d.trim().parse().map_err(|_| ModelError::Parse {
                        line: line_no,
                        message: format!("bad dimension header {trimmed:?}"),
                    })?;
                    declared = Some(d);
                }
                continue;
            }
            let row: Vec<f64> = trimmed
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<f64>().map_err(|_| ModelError::Parse {
                        line: line_no,
                        message: format!("not a number: {s:?}"),
                    })
                })
                .collect::<Result<_, _>>()?;
            if row.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFinite { line: line_no });
            }
            let expected = *obs_dim.get_or_insert(declared.unwrap_or(row.len()));
            if row.len() != expected {
                return Err(ModelError::Parse {
                    line: line_no,
                    message: format!("expected {expected} values, found {}", row.len()),
                });
            }
            values.extend(row);
        }
        let dim = obs_dim.or(declared).unwrap_or(1);
        if values.is_empty() {
            return Err(ModelError::EmptyDataset);
        }
        Dataset::new(dim, values)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let file = fs::File::open(path)?;
        Dataset::read_text(BufReader::new(file))
    }
}

/// How the second argument of `N(m, 2)` in the built-in models is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceConvention {
    /// `N(m, s)` has variance `s`.
    #[default]
    Variance,
    /// `N(m, s)` has standard deviation `s`.
    Stddev,
}

impl VarianceConvention {
    pub fn to_variance(self, spread: f64) -> f64 {
        match self {
            VarianceConvention::Variance => spread,
            VarianceConvention::Stddev => spread * spread,
        }
    }
}

/// A parametric observation model with a (possibly improper) prior.
///
/// `log_prior` and `log_lik` must be finite on the support and `-∞` off it.
pub trait Model: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    /// Parameter dimension d.
    fn dim(&self) -> usize;

    fn in_support(&self, theta: &[f64]) -> bool;

    /// Unnormalized log prior density.
    fn log_prior(&self, theta: &[f64]) -> f64;

    /// log p(x | θ) for one observation.
    fn log_lik(&self, x: &[f64], theta: &[f64]) -> f64;

    /// A supported starting point and per-dimension random-walk scales for a
    /// chain over `data` tempered by `lambda`.
    fn initial_state(&self, data: &Dataset, lambda: f64) -> (ParamPoint, Vec<f64>);

    /// Σ_i log p(x_i | θ), `-∞` off the support.
    fn log_lik_sum(&self, data: &Dataset, theta: &[f64]) -> f64 {
        if !self.in_support(theta) {
            return f64::NEG_INFINITY;
        }
        data.iter().map(|x| self.log_lik(x, theta)).sum()
    }

    /// Full-data unnormalized log posterior.
    fn log_posterior(&self, data: &Dataset, theta: &[f64]) -> f64 {
        if !self.in_support(theta) {
            return f64::NEG_INFINITY;
        }
        self.log_prior(theta) + self.log_lik_sum(data, theta)
    }
}

pub fn normal_ln_pdf(x: f64, mean: f64, variance: f64) -> f64 {
    let z = x - mean;
    -0.5 * (LN_2PI + variance.ln() + z * z / variance)
}

fn ln_add_exp(a: f64, b: f64) -> f64 {
    let hi = a.max(b);
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + ((a - hi).exp() + (b - hi).exp()).ln()
}

fn mean_and_var(xs: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
    for x in xs {
        n += 1.0;
        let delta = x - mean;
        mean += delta / n;
        m2 += delta * (x - mean);
    }
    if n > 0.0 {
        (mean, m2 / n)
    } else {
        (0.0, 0.0)
    }
}

/// `X ~ ½ N(θ₁, v) + ½ N(θ₁ + θ₂, v)` with a flat prior. Bimodal in θ.
#[derive(Debug, Clone)]
pub struct MixtureModel {
    pub variance: f64,
}

impl MixtureModel {
    pub fn new(spread: f64, convention: VarianceConvention) -> Self {
        MixtureModel {
            variance: convention.to_variance(spread),
        }
    }
}

impl Model for MixtureModel {
    fn name(&self) -> &str {
        "bimodal"
    }
    fn dim(&self) -> usize {
        2
    }
    fn in_support(&self, theta: &[f64]) -> bool {
        theta.iter().all(|v| v.is_finite())
    }
    fn log_prior(&self, theta: &[f64]) -> f64 {
        if self.in_support(theta) {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    }
    fn log_lik(&self, x: &[f64], theta: &[f64]) -> f64 {
        let a = normal_ln_pdf(x[0], theta[0], self.variance);
        let b = normal_ln_pdf(x[0], theta[0] + theta[1], self.variance);
        ln_add_exp(a, b) - std::f64::consts::LN_2
    }
    fn initial_state(&self, data: &Dataset, lambda: f64) -> (ParamPoint, Vec<f64>) {
        let (mean, _) = mean_and_var(data.first_coords());
        let n = data.len().max(1) as f64;
        let step = 2.0 * (self.variance / (n * lambda)).sqrt();
        (ParamPoint(vec![mean, 0.0]), vec![step, 2.0 * step])
    }
}

/// `X ~ N(√θ₁ + √θ₂, v)` on `θ ≥ 0` with a flat prior. Unidentifiable, so the
/// posterior is a curved ridge.
#[derive(Debug, Clone)]
pub struct MoonModel {
    pub variance: f64,
}

impl MoonModel {
    pub fn new(spread: f64, convention: VarianceConvention) -> Self {
        MoonModel {
            variance: convention.to_variance(spread),
        }
    }
}

impl Model for MoonModel {
    fn name(&self) -> &str {
        "moon"
    }
    fn dim(&self) -> usize {
        2
    }
    fn in_support(&self, theta: &[f64]) -> bool {
        theta.iter().all(|v| v.is_finite() && *v >= 0.0)
    }
    fn log_prior(&self, theta: &[f64]) -> f64 {
        if self.in_support(theta) {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    }
    fn log_lik(&self, x: &[f64], theta: &[f64]) -> f64 {
        if !self.in_support(theta) {
            return f64::NEG_INFINITY;
        }
        normal_ln_pdf(x[0], theta[0].sqrt() + theta[1].sqrt(), self.variance)
    }
    fn initial_state(&self, data: &Dataset, lambda: f64) -> (ParamPoint, Vec<f64>) {
        let (mean, _) = mean_and_var(data.first_coords());
        let n = data.len().max(1) as f64;
        let sd_sum = (self.variance / (n * lambda)).sqrt();
        // √θ₁ + √θ₂ sits around max(x̄, 0) plus a posterior sd or two.
        let s = mean.max(0.0) + sd_sum;
        let half = 0.5 * s;
        let init = half * half;
        let step = (s * s * 0.25).max(1e-8);
        (ParamPoint(vec![init, init]), vec![step, step])
    }
}

/// `X ~ N(μ, σ²)` with θ = (μ, σ²) and a flat prior on `σ² > 0`.
#[derive(Debug, Clone, Default)]
pub struct GaussianModel;

impl Model for GaussianModel {
    fn name(&self) -> &str {
        "gaussian"
    }
    fn dim(&self) -> usize {
        2
    }
    fn in_support(&self, theta: &[f64]) -> bool {
        theta[0].is_finite() && theta[1].is_finite() && theta[1] > 0.0
    }
    fn log_prior(&self, theta: &[f64]) -> f64 {
        if self.in_support(theta) {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    }
    fn log_lik(&self, x: &[f64], theta: &[f64]) -> f64 {
        if !self.in_support(theta) {
            return f64::NEG_INFINITY;
        }
        normal_ln_pdf(x[0], theta[0], theta[1])
    }
    fn log_lik_sum(&self, data: &Dataset, theta: &[f64]) -> f64 {
        if !self.in_support(theta) {
            return f64::NEG_INFINITY;
        }
        let (mu, var) = (theta[0], theta[1]);
        let mut sq = 0.0;
        for x in data.first_coords() {
            let z = x - mu;
            sq += z * z;
        }
        -0.5 * (data.len() as f64 * (LN_2PI + var.ln()) + sq / var)
    }
    fn initial_state(&self, data: &Dataset, lambda: f64) -> (ParamPoint, Vec<f64>) {
        let (mean, var) = mean_and_var(data.first_coords());
        let var = if var > 0.0 { var } else { 1.0 };
        let n = data.len().max(1) as f64;
        let step = vec![
            (var / (n * lambda)).sqrt(),
            (2.0 * var * var / (n * lambda)).sqrt(),
        ];
        (ParamPoint(vec![mean, var]), step)
    }
}

/// `X ~ N(μ, σ₀²)` with known noise variance and a `N(m₀, τ²)` prior on μ.
/// Conjugate, so its posterior is available in closed form for checks.
#[derive(Debug, Clone)]
pub struct GaussianMeanModel {
    pub noise_var: f64,
    pub prior_mean: f64,
    pub prior_var: f64,
}

impl GaussianMeanModel {
    /// Closed-form posterior `(mean, variance)` of μ given `data`.
    pub fn posterior(&self, data: &Dataset) -> (f64, f64) {
        let n = data.len() as f64;
        let sum: f64 = data.first_coords().sum();
        let precision = 1.0 / self.prior_var + n / self.noise_var;
        let mean = (self.prior_mean / self.prior_var + sum / self.noise_var) / precision;
        (mean, 1.0 / precision)
    }
}

impl Model for GaussianMeanModel {
    fn name(&self) -> &str {
        "gaussian_mean"
    }
    fn dim(&self) -> usize {
        1
    }
    fn in_support(&self, theta: &[f64]) -> bool {
        theta[0].is_finite()
    }
    fn log_prior(&self, theta: &[f64]) -> f64 {
        normal_ln_pdf(theta[0], self.prior_mean, self.prior_var)
    }
    fn log_lik(&self, x: &[f64], theta: &[f64]) -> f64 {
        normal_ln_pdf(x[0], theta[0], self.noise_var)
    }
    fn initial_state(&self, data: &Dataset, lambda: f64) -> (ParamPoint, Vec<f64>) {
        let (mean, _) = mean_and_var(data.first_coords());
        let n = data.len().max(1) as f64;
        (
            ParamPoint(vec![mean]),
            vec![2.4 * (self.noise_var / (n * lambda)).sqrt()],
        )
    }
}

/// One data shard X_k with its scale factor λ_k.
#[derive(Debug, Clone)]
pub struct ShardSpec {
    /// 1-based shard index k.
    pub index: usize,
    /// Total number of shards K.
    pub n_shards: usize,
    pub data: Dataset,
    /// Positions of this shard's observations in the full dataset.
    pub source_indices: Vec<usize>,
    pub lambda: f64,
}

impl ShardSpec {
    /// log γ_k(θ) = (1/K)·log π₀(θ) + Σ_{x ∈ X_k} log p(x | θ).
    pub fn log_gamma(&self, model: &dyn Model, theta: &[f64]) -> f64 {
        log_gamma(model, self, theta)
    }

    /// λ_k · log γ_k(θ).
    pub fn log_scaled_subposterior(&self, model: &dyn Model, theta: &[f64]) -> f64 {
        log_scaled_subposterior(model, self, theta)
    }
}

/// Randomly permutes the observation indices and cuts them into `k` equal
/// consecutive blocks. All shards start with λ = 1.
pub fn shard_data(data: &Dataset, k: usize, seed: u64) -> Result<Vec<ShardSpec>, ModelError> {
    if k == 0 {
        return Err(ModelError::ZeroShards);
    }
    let n = data.len();
    if !n.is_multiple_of(k) {
        return Err(ModelError::UnevenShards { n, k });
    }
    let m = n / k;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from_seed(seed));
    Ok(order
        .chunks(m.max(1))
        .take(k)
        .enumerate()
        .map(|(i, block)| ShardSpec {
            index: i + 1,
            n_shards: k,
            data: data.select(block),
            source_indices: block.to_vec(),
            lambda: 1.0,
        })
        .collect())
}

pub fn log_gamma(model: &dyn Model, shard: &ShardSpec, theta: &[f64]) -> f64 {
    if !model.in_support(theta) {
        return f64::NEG_INFINITY;
    }
    let prior = model.log_prior(theta) / shard.n_shards as f64;
    if shard.data.is_empty() {
        return prior;
    }
    prior + model.log_lik_sum(&shard.data, theta)
}

pub fn log_scaled_subposterior(model: &dyn Model, shard: &ShardSpec, theta: &[f64]) -> f64 {
    let v = log_gamma(model, shard, theta);
    if shard.lambda == 1.0 {
        v
    } else {
        shard.lambda * v
    }
}

/// Where synthetic observations come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// Draws from the bimodal mixture at `true_theta`.
    Mixture { true_theta: Vec<f64>, variance: f64 },
    /// `N(mean, variance)` draws.
    Normal { mean: f64, variance: f64 },
    /// `exp(N(mu, sigma²))` draws.
    LogNormal { mu: f64, sigma: f64 },
}

/// Sidecar metadata written next to a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSidecar {
    pub model: String,
    pub true_theta: Vec<f64>,
    pub seed: u64,
}

impl DataSource {
    pub fn generate(&self, n: usize, seed: u64) -> Dataset {
        let mut rng = rng_from_seed(seed);
        let values: Vec<f64> = match self {
            DataSource::Mixture {
                true_theta,
                variance,
            } => {
                let sd = variance.sqrt();
                (0..n)
                    .map(|_| {
                        let z: f64 = rng.sample(StandardNormal);
                        let mean = if rng.random::<bool>() {
                            true_theta[0]
                        } else {
                            true_theta[0] + true_theta[1]
                        };
                        mean + sd * z
                    })
                    .collect()
            }
            DataSource::Normal { mean, variance } => {
                let dist = Normal::new(*mean, variance.sqrt()).expect("finite normal parameters");
                (0..n).map(|_| dist.sample(&mut rng)).collect()
            }
            DataSource::LogNormal { mu, sigma } => {
                let dist = LogNormal::new(*mu, *sigma).expect("finite log-normal parameters");
                (0..n).map(|_| dist.sample(&mut rng)).collect()
            }
        };
        Dataset::from_scalars(values)
    }
}

pub fn save_sidecar(path: impl AsRef<Path>, sidecar: &DataSidecar) -> Result<(), ModelError> {
    let mut text = serde_json::to_string_pretty(sidecar)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

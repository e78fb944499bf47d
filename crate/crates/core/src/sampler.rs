//! Random-walk Metropolis–Hastings with a recorded proposal trace.
//!
//! Besides the retained chain, every post-burn-in proposal with a finite log
//! density is recorded together with its (unscaled) log density. That trace
//! is the training set for the forest surrogates.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::model::{Model, ParamPoint, ShardSpec};
use crate::seed::rng_from_seed;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SamplerError {
    #[error("initial point off support")]
    InitialOffSupport,
    #[error("burn-in ({burn_in}) must be below the iteration count ({n_iters})")]
    BurnInTooLong { burn_in: usize, n_iters: usize },
    #[error("thinning stride must be at least 1")]
    ZeroThin,
    #[error("step scale must be positive and finite in every dimension")]
    BadStepScale,
    #[error("step scale has {got} entries for a {expected}-dimensional state")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MhConfig {
    /// Total iterations, burn-in included.
    pub n_iters: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Per-dimension proposal standard deviations.
    pub step_scale: Vec<f64>,
    pub init: ParamPoint,
    pub seed: u64,
    pub adapt_during_burnin: bool,
}

impl MhConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        // burn_in == n_iters is the degenerate empty budget and is allowed.
        if self.burn_in > self.n_iters {
            return Err(SamplerError::BurnInTooLong {
                burn_in: self.burn_in,
                n_iters: self.n_iters,
            });
        }
        if self.thin == 0 {
            return Err(SamplerError::ZeroThin);
        }
        if self.step_scale.len() != self.init.dim() {
            return Err(SamplerError::DimensionMismatch {
                expected: self.init.dim(),
                got: self.step_scale.len(),
            });
        }
        if self.step_scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(SamplerError::BadStepScale);
        }
        Ok(())
    }

    /// Number of retained states, `⌊(n_iters − burn_in) / thin⌋`.
    pub fn retained_len(&self) -> usize {
        (self.n_iters - self.burn_in) / self.thin
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub retained: Vec<ParamPoint>,
    /// Post-burn-in proposals and their byproduct log densities.
    pub trace: Vec<(ParamPoint, f64)>,
    /// Post-burn-in acceptance rate.
    pub acceptance_rate: f64,
    /// Step scale in force after burn-in.
    pub final_step: Vec<f64>,
}

/// Optimal-scaling acceptance targets: 0.44 in one dimension, 0.234 above.
pub fn target_acceptance(dim: usize) -> f64 {
    if dim <= 1 {
        0.44
    } else {
        0.234
    }
}

/// One Robbins–Monro step on the log scale: `s ← s · exp(gain · (a − a*))`.
pub fn adapt_step(step: &[f64], acceptance: f64, target: f64, gain: f64) -> Vec<f64> {
    let factor = (gain * (acceptance - target)).exp();
    step.iter().map(|s| s * factor).collect()
}

const ADAPT_BATCH: usize = 50;

/// Burn-in step-size adaptation.
///
/// Acceptance is tallied in batches of 50 proposals and the global scale is
/// nudged toward the target rate with gain `1/√batch`. At a quarter and at
/// half of the burn-in the per-dimension proportions are reset from the
/// empirical spread of the states visited since the last reset.
#[derive(Debug, Clone)]
pub struct StepAdapter {
    step: Vec<f64>,
    target: f64,
    burn_in: usize,
    batches: usize,
    accepted_in_batch: usize,
    proposed_in_batch: usize,
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl StepAdapter {
    pub fn new(step: Vec<f64>, burn_in: usize) -> Self {
        let d = step.len();
        StepAdapter {
            target: target_acceptance(d),
            step,
            burn_in,
            batches: 0,
            accepted_in_batch: 0,
            proposed_in_batch: 0,
            count: 0.0,
            mean: vec![0.0; d],
            m2: vec![0.0; d],
        }
    }

    pub fn step(&self) -> &[f64] {
        &self.step
    }

    /// Records iteration `iter` (0-based, inside burn-in) and its outcome.
    pub fn observe(&mut self, iter: usize, accepted: bool, state: &[f64]) {
        self.proposed_in_batch += 1;
        if accepted {
            self.accepted_in_batch += 1;
        }
        self.count += 1.0;
        for (j, &x) in state.iter().enumerate() {
            let delta = x - self.mean[j];
            self.mean[j] += delta / self.count;
            self.m2[j] += delta * (x - self.mean[j]);
        }
        if self.proposed_in_batch == ADAPT_BATCH {
            self.batches += 1;
            let rate = self.accepted_in_batch as f64 / ADAPT_BATCH as f64;
            let gain = 1.0 / (self.batches as f64).sqrt();
            self.step = adapt_step(&self.step, rate, self.target, gain);
            self.accepted_in_batch = 0;
            self.proposed_in_batch = 0;
        }
        let checkpoint = iter + 1;
        if self.burn_in >= 8 * ADAPT_BATCH
            && (checkpoint == self.burn_in / 4 || checkpoint == self.burn_in / 2)
        {
            self.reshape();
        }
    }

    fn reshape(&mut self) {
        let d = self.step.len() as f64;
        let scale = 2.38 / d.sqrt();
        for j in 0..self.step.len() {
            let sd = (self.m2[j] / self.count).sqrt();
            if sd.is_finite() && sd > 0.0 {
                self.step[j] = scale * sd;
            }
        }
        self.count = 0.0;
        self.mean.iter_mut().for_each(|m| *m = 0.0);
        self.m2.iter_mut().for_each(|m| *m = 0.0);
    }
}

/// Core sampler. `eval` returns `(log target, byproduct log density)` for a
/// point; the byproduct is what gets written into the trace.
pub fn rwmh_joint<F>(mut eval: F, cfg: &MhConfig) -> Result<ChainOutput, SamplerError>
where
    F: FnMut(&[f64]) -> (f64, f64),
{
    cfg.validate()?;
    let d = cfg.init.dim();
    let mut rng = rng_from_seed(cfg.seed);
    let mut current = cfg.init.clone();
    let (mut current_target, _) = eval(&current);
    if !current_target.is_finite() {
        return Err(SamplerError::InitialOffSupport);
    }

    let production = cfg.n_iters - cfg.burn_in;
    let mut retained = Vec::with_capacity(cfg.retained_len());
    let mut trace = Vec::with_capacity(production);
    let mut adapter = StepAdapter::new(cfg.step_scale.clone(), cfg.burn_in);
    let mut step = cfg.step_scale.clone();
    let mut proposal = vec![0.0; d];
    let mut accepted_after_burn_in = 0usize;

    for iter in 0..cfg.n_iters {
        for j in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            proposal[j] = current[j] + step[j] * z;
        }
        let (target, byproduct) = eval(&proposal);
        let burning = iter < cfg.burn_in;
        let log_u: f64 = rng.random::<f64>().ln();
        let accept = target.is_finite() && log_u < target - current_target;

        if !burning && target.is_finite() && byproduct.is_finite() {
            trace.push((ParamPoint::from(&proposal[..]), byproduct));
        }
        if accept {
            current.copy_from_slice(&proposal);
            current_target = target;
        }
        if burning {
            if cfg.adapt_during_burnin {
                adapter.observe(iter, accept, &current);
                step.copy_from_slice(adapter.step());
            }
        } else {
            if accept {
                accepted_after_burn_in += 1;
            }
            let k = iter - cfg.burn_in;
            if (k + 1).is_multiple_of(cfg.thin) {
                retained.push(current.clone());
            }
        }
    }

    let acceptance_rate = if production > 0 {
        accepted_after_burn_in as f64 / production as f64
    } else {
        0.0
    };
    Ok(ChainOutput {
        retained,
        trace,
        acceptance_rate,
        final_step: step,
    })
}

/// Random-walk MH on `log_target`. The trace records `byproduct_log` at each
/// proposal, or the target itself when none is given.
pub fn rwmh<F>(
    log_target: F,
    cfg: &MhConfig,
    byproduct_log: Option<&dyn Fn(&[f64]) -> f64>,
) -> Result<ChainOutput, SamplerError>
where
    F: Fn(&[f64]) -> f64,
{
    match byproduct_log {
        Some(by) => rwmh_joint(
            |theta| {
                let t = log_target(theta);
                let b = if t.is_finite() { by(theta) } else { f64::NEG_INFINITY };
                (t, b)
            },
            cfg,
        ),
        None => rwmh_joint(
            |theta| {
                let t = log_target(theta);
                (t, t)
            },
            cfg,
        ),
    }
}

/// Samples shard k's scaled subposterior `λ_k·log γ_k`, tracing the unscaled
/// `log γ_k` with a single density evaluation per proposal.
pub fn sample_shard(
    model: &dyn Model,
    shard: &ShardSpec,
    cfg: &MhConfig,
) -> Result<ChainOutput, SamplerError> {
    let lambda = shard.lambda;
    rwmh_joint(
        |theta| {
            let v = shard.log_gamma(model, theta);
            (lambda * v, v)
        },
        cfg,
    )
}

/// Keeps positions 0, stride, 2·stride, … of `chain`.
pub fn thin_retained(chain: &[ParamPoint], stride: usize) -> Vec<ParamPoint> {
    assert!(stride >= 1, "thinning stride must be at least 1");
    chain.iter().step_by(stride).cloned().collect()
}

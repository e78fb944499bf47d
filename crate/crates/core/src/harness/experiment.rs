use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::metrics::{sample_file, Diagnostics, MetricsReport};
use super::timing::{timed, StageTimes, TimingReport};
use crate::baselines::{consensus_combine, kde_product_sample, silverman_bandwidth, SubchainSet};
use crate::combine::{
    choose_lambda, mle_summary_gaussian, resample, rf_is, rf_mh, LambdaMethod, LambdaPlan, LogSurrogate,
    RfIsOutput, SupportMask,
};
use crate::forest::{train, Forest, TrainingSet};
use crate::io::{save_atoms, save_points, save_trace};
use crate::model::{save_sidecar, shard_data, DataSidecar, Dataset, Model, ParamPoint, ShardSpec};
use crate::sampler::{rwmh, sample_shard, ChainOutput, MhConfig};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Data,
    Sharding,
    Lambda,
    Mcmc,
    Training,
    Weighting,
    RfMh,
    Baselines,
    Oracle,
    Metrics,
    Output,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Config => "config",
            Stage::Data => "data",
            Stage::Sharding => "sharding",
            Stage::Lambda => "lambda",
            Stage::Mcmc => "mcmc",
            Stage::Training => "training",
            Stage::Weighting => "weighting",
            Stage::RfMh => "rf-mh",
            Stage::Baselines => "baselines",
            Stage::Oracle => "oracle",
            Stage::Metrics => "metrics",
            Stage::Output => "output",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage} stage failed: {source}")]
pub struct HarnessError {
    pub stage: Stage,
    #[source]
    pub source: Box<dyn std::error::Error + Send + Sync>,
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, HarnessError>;
}

impl<T, E: std::error::Error + Send + Sync + 'static> AtStage<T> for Result<T, E> {
    fn at(self, stage: Stage) -> Result<T, HarnessError> {
        self.map_err(|e| HarnessError {
            stage,
            source: Box::new(e),
        })
    }
}

/// Per-shard effective sample size after truncation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EssEntry {
    pub shard: usize,
    pub n_samples: usize,
    pub kept: usize,
    pub ess: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub metrics: MetricsReport,
    pub timing: TimingReport,
    pub lambda_plan: LambdaPlan,
    pub rfis: RfIsOutput,
    /// Equal-weight samples per method, oracle included.
    pub samples: BTreeMap<String, Vec<ParamPoint>>,
    pub shard_chains: Vec<Vec<ParamPoint>>,
    pub data: Dataset,
}

fn chain_config(model: &dyn Model, shard: &ShardSpec, cfg: &ExperimentConfig, seed: u64) -> MhConfig {
    let (init, step_scale) = model.initial_state(&shard.data, shard.lambda);
    MhConfig {
        n_iters: cfg.mcmc.n_iters,
        burn_in: cfg.mcmc.burn_in,
        thin: cfg.mcmc.thin,
        step_scale,
        init,
        seed,
        adapt_during_burnin: cfg.mcmc.adapt,
    }
}

fn run_chains(
    model: &dyn Model,
    shards: &[ShardSpec],
    cfg: &ExperimentConfig,
    label: &str,
) -> Result<Vec<ChainOutput>, HarnessError> {
    shards
        .par_iter()
        .map(|s| {
            let mh = chain_config(model, s, cfg, derive_seed(cfg.master_seed, label, s.index as u64));
            sample_shard(model, s, &mh)
        })
        .collect::<Result<Vec<_>, _>>()
        .at(Stage::Mcmc)
}

/// Long full-data random-walk run used as the reference posterior.
pub fn oracle_samples(
    model: &dyn Model,
    data: &Dataset,
    cfg: &ExperimentConfig,
) -> Result<Vec<ParamPoint>, HarnessError> {
    let (init, step_scale) = model.initial_state(data, 1.0);
    let runs = (0..cfg.oracle.chains as u64)
        .into_par_iter()
        .map(|c| {
            let mh = MhConfig {
                n_iters: cfg.oracle.n_iters,
                burn_in: cfg.oracle.burn_in,
                thin: cfg.oracle.thin,
                step_scale: step_scale.clone(),
                init: init.clone(),
                seed: derive_seed(cfg.master_seed, "oracle", c),
                adapt_during_burnin: true,
            };
            rwmh(|t| model.log_posterior(data, t), &mh, None).map(|o| o.retained)
        })
        .collect::<Result<Vec<_>, _>>()
        .at(Stage::Oracle)?;
    Ok(runs.into_iter().flatten().collect())
}

fn outside_fraction(points: &[ParamPoint], forests: &[Forest]) -> f64 {
    let total = points.len() * forests.len();
    if total == 0 {
        return 0.0;
    }
    let outside: usize = points
        .iter()
        .map(|p| forests.iter().filter(|f| !f.in_training_box(p)).count())
        .sum();
    outside as f64 / total as f64
}

fn load_or_generate_data(cfg: &ExperimentConfig, out: &Path) -> Result<Dataset, HarnessError> {
    if let Some(path) = &cfg.data_path {
        return Dataset::load(path).at(Stage::Data);
    }
    let seed = derive_seed(cfg.master_seed, "data", 0);
    let data = cfg.data_source().generate(cfg.n_obs, seed);
    data.save(out.join("data.txt")).at(Stage::Output)?;
    let sidecar = DataSidecar {
        model: cfg.experiment.as_str().to_string(),
        true_theta: cfg.true_theta.clone(),
        seed,
    };
    save_sidecar(out.join("data.json"), &sidecar).at(Stage::Output)?;
    Ok(data)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let mut s = serde_json::to_string_pretty(value).at(Stage::Output)?;
    s.push('\n');
    fs::write(path, s).at(Stage::Output)
}

/// Runs the whole pipeline for one configuration and writes every artefact
/// into `cfg.out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome, HarnessError> {
    cfg.validate().at(Stage::Config)?;
    let out = cfg.out_dir.as_path();
    fs::create_dir_all(out).at(Stage::Output)?;
    cfg.save(out.join("config.toml")).at(Stage::Output)?;

    let model = cfg.build_model();
    let model = model.as_ref();
    let d = model.dim();
    let data = load_or_generate_data(cfg, out)?;
    let mut shards =
        shard_data(&data, cfg.n_shards, derive_seed(cfg.master_seed, "shard", 0)).at(Stage::Sharding)?;
    log::info!("{}: N = {}, K = {}", cfg.experiment.as_str(), data.len(), shards.len());

    let plan = match cfg.lambda.method {
        LambdaMethod::Fixed => LambdaPlan::fixed(shards.len(), cfg.lambda.value),
        LambdaMethod::MleMarkov => {
            let full = mle_summary_gaussian(&data).at(Stage::Lambda)?;
            let per_shard = shards
                .iter()
                .map(|s| mle_summary_gaussian(&s.data))
                .collect::<Result<Vec<_>, _>>()
                .at(Stage::Lambda)?;
            choose_lambda(&full, &per_shard).at(Stage::Lambda)?
        }
    };
    for (s, &l) in shards.iter_mut().zip(&plan.lambdas) {
        s.lambda = l;
    }
    log::info!("lambdas: {:?}", plan.lambdas);

    let (chains, t_mcmc) = timed(|| run_chains(model, &shards, cfg, "chain"));
    let chains = chains?;
    let shard_samples: Vec<Vec<ParamPoint>> = chains.iter().map(|c| c.retained.clone()).collect();

    let (forests, t_train) = timed(|| {
        chains
            .par_iter()
            .enumerate()
            .map(|(k, c)| {
                let set = TrainingSet::new(&c.trace)?;
                train(&set, &cfg.forest.params(derive_seed(cfg.master_seed, "forest", k as u64 + 1)))
            })
            .collect::<Result<Vec<Forest>, _>>()
    });
    let forests = forests.at(Stage::Training)?;
    let surrogates: Vec<&dyn LogSurrogate> = forests.iter().map(|f| f as &dyn LogSurrogate).collect();

    let (weighted, t_weight) = timed(|| {
        rf_is(&shard_samples, &surrogates, &plan.lambdas, cfg.truncation_p).map(|r| {
            let draws = resample(&r.pooled, cfg.n_resample, derive_seed(cfg.master_seed, "resample", 0));
            (r, draws)
        })
    });
    let (rfis, rfis_draws) = weighted.at(Stage::Weighting)?;

    let (rfmh_out, t_rfmh) = timed(|| {
        let init = rfis
            .pooled
            .heaviest()
            .map(|a| a.theta.clone())
            .expect("pooled RF-IS measure is non-empty");
        let scale = 2.38 / (d as f64).sqrt();
        let step_scale = rfis
            .pooled
            .variance()
            .iter()
            .map(|v| (scale * v.sqrt()).max(1e-8))
            .collect();
        let mh = MhConfig {
            n_iters: cfg.mcmc.n_iters,
            burn_in: cfg.mcmc.burn_in,
            thin: cfg.mcmc.thin,
            step_scale,
            init,
            seed: derive_seed(cfg.master_seed, "rfmh", 0),
            adapt_during_burnin: true,
        };
        let mask = SupportMask(model);
        let mut masked = surrogates.clone();
        masked.push(&mask);
        rf_mh(&masked, &mh)
    });
    let rfmh_out = rfmh_out.at(Stage::RfMh)?;

    // The baselines combine untempered subposterior chains.
    let (base_samples, t_base_mcmc) = if plan.lambdas.iter().all(|&l| l == 1.0) {
        (shard_samples.clone(), t_mcmc)
    } else {
        let mut plain = shards.clone();
        for s in &mut plain {
            s.lambda = 1.0;
        }
        let (c, t) = timed(|| run_chains(model, &plain, cfg, "plain_chain"));
        (c?.into_iter().map(|c| c.retained).collect(), t)
    };
    let subchains = SubchainSet::new(base_samples).at(Stage::Baselines)?;
    let (cmc, t_cmc) = timed(|| consensus_combine(&subchains));
    let cmc = cmc.at(Stage::Baselines)?;
    let (nonpara, t_kde) = timed(|| {
        let h = silverman_bandwidth(&subchains);
        kde_product_sample(
            &subchains,
            &h,
            subchains.len(),
            cfg.kde_sweeps,
            derive_seed(cfg.master_seed, "nonpara", 0),
        )
    });
    let nonpara = nonpara.at(Stage::Baselines)?;

    let (oracle, t_oracle) = timed(|| oracle_samples(model, &data, cfg));
    let oracle = oracle?;

    let mut samples = BTreeMap::new();
    samples.insert("rfis".to_string(), rfis_draws);
    samples.insert("rfmh".to_string(), rfmh_out.retained.clone());
    samples.insert("cmc".to_string(), cmc);
    samples.insert("nonpara".to_string(), nonpara);
    samples.insert("oracle".to_string(), oracle);

    let ess: Vec<EssEntry> = rfis
        .per_shard
        .iter()
        .zip(&shard_samples)
        .enumerate()
        .map(|(k, (atoms, s))| EssEntry {
            shard: k + 1,
            n_samples: s.len(),
            kept: atoms.len(),
            ess: atoms.ess.unwrap_or(f64::NAN),
        })
        .collect();
    let diagnostics = Diagnostics {
        lambdas: plan.lambdas.clone(),
        shard_ess: ess.iter().map(|e| e.ess).collect(),
        rfis_outside_fraction: rfis.outside_fraction,
        rfmh_outside_fraction: outside_fraction(&rfmh_out.retained, &forests),
        rfmh_acceptance: rfmh_out.acceptance_rate,
        shard_acceptance: chains.iter().map(|c| c.acceptance_rate).collect(),
        kde_bandwidth: silverman_bandwidth(&subchains),
    };
    let metrics = MetricsReport::compute(
        cfg.experiment.as_str(),
        &samples,
        &cfg.mode_centers,
        cfg.mode_radius,
        Some(diagnostics),
    )
    .at(Stage::Metrics)?;

    let mut timing = TimingReport {
        oracle_seconds: t_oracle,
        ..Default::default()
    };
    let m = &mut timing.methods;
    m.insert("rfis".into(), StageTimes::new(Some(t_mcmc), Some(t_train), Some(t_weight), None));
    m.insert("rfmh".into(), StageTimes::new(Some(t_mcmc), Some(t_train), None, Some(t_rfmh)));
    m.insert("cmc".into(), StageTimes::new(Some(t_base_mcmc), None, None, Some(t_cmc)));
    m.insert("nonpara".into(), StageTimes::new(Some(t_base_mcmc), None, None, Some(t_kde)));

    for (name, pts) in &samples {
        save_points(out.join(sample_file(name)), pts, d).at(Stage::Output)?;
    }
    save_points(out.join("rfmh_chain.csv"), &rfmh_out.retained, d).at(Stage::Output)?;
    save_atoms(out.join("pooled_atoms.csv"), &rfis.pooled).at(Stage::Output)?;
    for (k, c) in chains.iter().enumerate() {
        save_points(out.join(format!("chain_k{}.csv", k + 1)), &c.retained, d).at(Stage::Output)?;
        if cfg.write_traces {
            save_trace(out.join(format!("trace_k{}.csv", k + 1)), &c.trace, d).at(Stage::Output)?;
        }
    }
    if cfg.save_forests {
        for (k, f) in forests.iter().enumerate() {
            f.save(out.join(format!("forest_k{}.json", k + 1))).at(Stage::Output)?;
        }
    }
    write_json(&out.join("lambda_plan.json"), &plan)?;
    write_json(&out.join("ess.json"), &ess)?;
    metrics.save(out.join("metrics.json")).at(Stage::Output)?;
    timing.save(out).at(Stage::Output)?;

    Ok(ExperimentOutcome {
        metrics,
        timing,
        lambda_plan: plan,
        rfis,
        samples,
        shard_chains: shard_samples,
        data,
    })
}

/// Recomputes `metrics.json` in `dir` from the sample files there, keeping
/// run diagnostics from any earlier report.
pub fn recompute_metrics(dir: &Path) -> Result<MetricsReport, HarnessError> {
    let cfg = ExperimentConfig::load(dir.join("config.toml")).at(Stage::Config)?;
    let samples = super::metrics::load_method_samples(dir).at(Stage::Metrics)?;
    let previous = MetricsReport::load(dir.join("metrics.json")).ok();
    let report = MetricsReport::compute(
        cfg.experiment.as_str(),
        &samples,
        &cfg.mode_centers,
        cfg.mode_radius,
        previous.and_then(|p| p.diagnostics),
    )
    .at(Stage::Metrics)?;
    report.save(dir.join("metrics.json")).at(Stage::Output)?;
    Ok(report)
}

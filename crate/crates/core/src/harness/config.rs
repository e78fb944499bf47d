use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::combine::LambdaMethod;
use crate::forest::ForestParams;
use crate::model::{
    DataSource, GaussianMeanModel, GaussianModel, MixtureModel, Model, MoonModel,
    VarianceConvention,
};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot write config: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    /// Two-component mixture with a bimodal posterior.
    Bimodal,
    /// Unidentifiable sum-of-roots model with a crescent posterior.
    Moon,
    /// Gaussian model fitted to (by default) log-normal data.
    Misspec,
    /// Conjugate Gaussian mean model with a closed-form posterior.
    Conjugate,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Bimodal => "bimodal",
            ExperimentKind::Moon => "moon",
            ExperimentKind::Misspec => "misspec",
            ExperimentKind::Conjugate => "conjugate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFamily {
    /// Draws from the experiment's own model at `true_theta`.
    Model,
    Normal,
    Lognormal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainBudget {
    pub n_iters: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub adapt: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleBudget {
    pub n_iters: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Independent chains pooled into the reference sample.
    pub chains: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestSettings {
    pub n_trees: usize,
    pub min_leaf: usize,
    pub subsample_size: usize,
}

impl ForestSettings {
    pub fn params(&self, seed: u64) -> ForestParams {
        ForestParams {
            n_trees: self.n_trees,
            min_leaf: self.min_leaf,
            subsample_size: self.subsample_size,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSettings {
    pub method: LambdaMethod,
    /// Used when `method = "fixed"`.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub n_obs: usize,
    pub n_shards: usize,
    pub master_seed: u64,
    pub out_dir: PathBuf,
    pub data: DataFamily,
    /// Parameter the synthetic data is drawn at (model-family data only).
    pub true_theta: Vec<f64>,
    /// Load observations from this file instead of synthesizing them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_path: Option<PathBuf>,
    pub variance_convention: VarianceConvention,
    pub lambda: LambdaSettings,
    pub mcmc: ChainBudget,
    pub oracle: OracleBudget,
    pub forest: ForestSettings,
    pub truncation_p: f64,
    /// Equal-weight draws taken from the pooled RF-IS measure.
    pub n_resample: usize,
    pub kde_sweeps: usize,
    /// Centres for the mode-mass table (empty to skip).
    pub mode_centers: Vec<Vec<f64>>,
    pub mode_radius: f64,
    pub write_traces: bool,
    pub save_forests: bool,
}

impl ExperimentConfig {
    /// Desk-scale defaults for one of the built-in experiments.
    pub fn preset(kind: ExperimentKind) -> Self {
        let mut cfg = ExperimentConfig {
            experiment: kind,
            n_obs: 1000,
            n_shards: 10,
            master_seed: 1,
            out_dir: PathBuf::from("out").join(kind.as_str()),
            data: DataFamily::Model,
            true_theta: vec![],
            data_path: None,
            variance_convention: VarianceConvention::Variance,
            lambda: LambdaSettings {
                method: LambdaMethod::Fixed,
                value: 1.0,
            },
            mcmc: ChainBudget {
                n_iters: 50_000,
                burn_in: 10_000,
                thin: 10,
                adapt: true,
            },
            oracle: OracleBudget {
                n_iters: 210_000,
                burn_in: 10_000,
                thin: 10,
                chains: 1,
            },
            forest: ForestSettings {
                n_trees: 10,
                min_leaf: 5,
                subsample_size: 10_000,
            },
            truncation_p: 0.999,
            n_resample: 20_000,
            kde_sweeps: 10,
            mode_centers: vec![],
            mode_radius: 0.75,
            write_traces: true,
            save_forests: false,
        };
        match kind {
            ExperimentKind::Bimodal => {
                cfg.n_obs = 200;
                cfg.true_theta = vec![0.0, 1.0];
                cfg.mode_centers = vec![vec![0.0, 1.0], vec![1.0, -1.0]];
                cfg.oracle.chains = 4;
            }
            ExperimentKind::Moon => {
                cfg.data = DataFamily::Normal;
            }
            ExperimentKind::Misspec => {
                cfg.n_obs = 10_000;
                cfg.data = DataFamily::Lognormal;
                cfg.lambda.method = LambdaMethod::MleMarkov;
            }
            ExperimentKind::Conjugate => {
                cfg.n_shards = 5;
                cfg.true_theta = vec![1.0];
            }
        }
        cfg
    }

    /// Long-run budgets: 500,000 iterations, 100,000
    /// burn-in, thinning by 100 (10 for log-normal data) and 50,000 training
    /// points per forest.
    pub fn paper_scale(mut self) -> Self {
        self.mcmc.n_iters = 500_000;
        self.mcmc.burn_in = 100_000;
        self.mcmc.thin = if self.data == DataFamily::Lognormal { 10 } else { 100 };
        self.forest.subsample_size = 50_000;
        self.oracle.n_iters = 2_100_000;
        self.oracle.burn_in = 100_000;
        self.oracle.thin = 100;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.n_shards == 0 || self.n_obs == 0 {
            return bad("n_obs and n_shards must be positive");
        }
        if self.data_path.is_none() && !self.n_obs.is_multiple_of(self.n_shards) {
            return bad("n_shards must divide n_obs");
        }
        if self.mcmc.burn_in >= self.mcmc.n_iters || self.mcmc.thin == 0 {
            return bad("mcmc budget needs burn_in < n_iters and thin >= 1");
        }
        if self.oracle.burn_in >= self.oracle.n_iters || self.oracle.thin == 0 || self.oracle.chains == 0 {
            return bad("oracle budget needs burn_in < n_iters, thin >= 1, chains >= 1");
        }
        if !(self.truncation_p > 0.0 && self.truncation_p <= 1.0) {
            return bad("truncation_p must lie in (0, 1]");
        }
        if self.lambda.method == LambdaMethod::Fixed && !(self.lambda.value > 0.0) {
            return bad("fixed lambda must be positive");
        }
        if self.lambda.method == LambdaMethod::MleMarkov && self.experiment != ExperimentKind::Misspec {
            return bad("lambda method mle_markov needs the Gaussian (misspec) model");
        }
        if self.forest.n_trees == 0 || self.forest.min_leaf == 0 {
            return bad("forest needs n_trees >= 1 and min_leaf >= 1");
        }
        if self.n_resample == 0 {
            return bad("n_resample must be positive");
        }
        let d = self.build_model().dim();
        if self.data == DataFamily::Model && self.data_path.is_none() && self.true_theta.len() != d {
            return bad("true_theta must match the model dimension");
        }
        if self.mode_centers.iter().any(|c| c.len() != d) {
            return bad("mode centres must match the model dimension");
        }
        Ok(())
    }

    pub fn build_model(&self) -> Arc<dyn Model> {
        match self.experiment {
            ExperimentKind::Bimodal => Arc::new(MixtureModel::new(2.0, self.variance_convention)),
            ExperimentKind::Moon => Arc::new(MoonModel::new(2.0, self.variance_convention)),
            ExperimentKind::Misspec => Arc::new(GaussianModel),
            ExperimentKind::Conjugate => Arc::new(GaussianMeanModel {
                noise_var: 1.0,
                prior_mean: 0.0,
                prior_var: 100.0,
            }),
        }
    }

    pub fn data_source(&self) -> DataSource {
        match (self.data, self.experiment) {
            (DataFamily::Normal, _) => DataSource::Normal {
                mean: 0.0,
                variance: 1.0,
            },
            (DataFamily::Lognormal, _) => DataSource::LogNormal { mu: 0.0, sigma: 1.0 },
            (DataFamily::Model, ExperimentKind::Bimodal) => DataSource::Mixture {
                true_theta: self.true_theta.clone(),
                variance: self.variance_convention.to_variance(2.0),
            },
            (DataFamily::Model, ExperimentKind::Moon) => {
                let s = self.true_theta[0].sqrt() + self.true_theta[1].sqrt();
                DataSource::Normal {
                    mean: s,
                    variance: self.variance_convention.to_variance(2.0),
                }
            }
            (DataFamily::Model, ExperimentKind::Misspec) => DataSource::Normal {
                mean: self.true_theta[0],
                variance: self.true_theta[1],
            },
            (DataFamily::Model, ExperimentKind::Conjugate) => DataSource::Normal {
                mean: self.true_theta[0],
                variance: 1.0,
            },
        }
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ConfigError> {
        fs::write(path, self.to_toml()?)?;
        Ok(())
    }
}

//! Experiment configuration, orchestration, metrics and timing.

pub mod config;
pub mod experiment;
pub mod metrics;
pub mod timing;

pub use config::{ExperimentConfig, ExperimentKind};
pub use experiment::{recompute_metrics, run_experiment, ExperimentOutcome, HarnessError, Stage};
pub use metrics::{mode_mass, wasserstein1_marginal, MetricsReport};
pub use timing::TimingReport;

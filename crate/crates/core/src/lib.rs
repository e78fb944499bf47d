//! Divide-and-conquer MCMC with random-partition-forest surrogates.
//!
//! Data are split into shards, each shard runs its own sampler, a forest is
//! fit to every shard's log density, and the shard samples are recombined by
//! importance weighting against the product of surrogates (RF-IS) or by
//! running a sampler on that product directly (RF-MH).

pub mod baselines;
pub mod combine;
pub mod forest;
pub mod harness;
pub mod io;
pub mod model;
pub mod sampler;
pub mod seed;

pub use combine::{choose_lambda, rf_is, rf_mh, LambdaPlan, LogSurrogate, RfIsOutput, WeightedAtoms};
pub use forest::{train, Forest, ForestParams, TrainingSet};
pub use model::{shard_data, Dataset, Model, ParamPoint, ShardSpec};
pub use sampler::{rwmh, sample_shard, ChainOutput, MhConfig};

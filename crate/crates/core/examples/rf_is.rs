// Recombine shard samples by importance weighting against forest surrogates.

use forest_dnc::combine::{resample, rf_is, LogSurrogate};
use forest_dnc::forest::{train, ForestParams, TrainingSet};
use forest_dnc::model::{shard_data, DataSource, GaussianMeanModel, Model};
use forest_dnc::sampler::{sample_shard, MhConfig};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let data = DataSource::Normal {
        mean: 1.0,
        variance: 1.0,
    }
    .generate(600, 1);
    let model = GaussianMeanModel {
        noise_var: 1.0,
        prior_mean: 0.0,
        prior_var: 100.0,
    };
    let shards = shard_data(&data, 3, 2)?;
    let mut samples = Vec::new();
    let mut forests = Vec::new();
    for shard in &shards {
        let (init, step_scale) = model.initial_state(&shard.data, 1.0);
        let chain = sample_shard(
            &model,
            shard,
            &MhConfig {
                n_iters: 12_000,
                burn_in: 2_000,
                thin: 5,
                step_scale,
                init,
                seed: shard.index as u64,
                adapt_during_burnin: true,
            },
        )?;
        let params = ForestParams {
            seed: 40 + shard.index as u64,
            ..ForestParams::default()
        };
        forests.push(train(&TrainingSet::new(&chain.trace)?, &params)?);
        samples.push(chain.retained);
    }

    let surrogates: Vec<&dyn LogSurrogate> = forests.iter().map(|f| f as &dyn LogSurrogate).collect();
    let out = rf_is(&samples, &surrogates, &[1.0; 3], 0.999)?;
    for atoms in &out.per_shard {
        println!(
            "shard {:?}: kept {} atoms, ESS {:.0}",
            atoms.source_shard,
            atoms.len(),
            atoms.ess.unwrap_or(0.0)
        );
    }
    let (mean, var) = model.posterior(&data);
    println!(
        "pooled mean {:.4} (exact {mean:.4}), variance {:.2e} (exact {var:.2e})",
        out.pooled.mean()[0],
        out.pooled.variance()[0]
    );
    let draws = resample(&out.pooled, 1_000, 9);
    println!("{} equal-weight draws, first {:?}", draws.len(), draws[0]);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}

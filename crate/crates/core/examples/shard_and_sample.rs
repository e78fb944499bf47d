// Split a dataset into shards and run one random-walk chain per shard.

use forest_dnc::model::{shard_data, DataSource, Model, MoonModel, VarianceConvention};
use forest_dnc::sampler::{sample_shard, MhConfig};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let data = DataSource::Normal {
        mean: 0.0,
        variance: 1.0,
    }
    .generate(400, 11);
    let model = MoonModel::new(2.0, VarianceConvention::Variance);
    let shards = shard_data(&data, 4, 12)?;

    for shard in &shards {
        let (init, step_scale) = model.initial_state(&shard.data, shard.lambda);
        let cfg = MhConfig {
            n_iters: 6_000,
            burn_in: 2_000,
            thin: 4,
            step_scale,
            init,
            seed: 100 + shard.index as u64,
            adapt_during_burnin: true,
        };
        let chain = sample_shard(&model, shard, &cfg)?;
        let mean: Vec<f64> = (0..model.dim())
            .map(|j| chain.retained.iter().map(|p| p[j]).sum::<f64>() / chain.retained.len() as f64)
            .collect();
        println!(
            "shard {}: {} obs, {} retained, {} traced, acceptance {:.2}, mean {:.3?}",
            shard.index,
            shard.data.len(),
            chain.retained.len(),
            chain.trace.len(),
            chain.acceptance_rate,
            mean
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}

// Sample the product of forest surrogates directly with a random walk.

use forest_dnc::combine::{rf_mh, LogSurrogate, SupportMask};
use forest_dnc::forest::{train, ForestParams, TrainingSet};
use forest_dnc::model::{shard_data, DataSource, Model, MoonModel, ParamPoint, VarianceConvention};
use forest_dnc::sampler::{sample_shard, MhConfig};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let data = DataSource::Normal {
        mean: 2.0,
        variance: 2.0,
    }
    .generate(300, 8);
    let model = MoonModel::new(2.0, VarianceConvention::Variance);
    let shards = shard_data(&data, 3, 9)?;
    let mut forests = Vec::new();
    for shard in &shards {
        let (init, step_scale) = model.initial_state(&shard.data, 1.0);
        let chain = sample_shard(
            &model,
            shard,
            &MhConfig {
                n_iters: 10_000,
                burn_in: 2_000,
                thin: 4,
                step_scale,
                init,
                seed: shard.index as u64,
                adapt_during_burnin: true,
            },
        )?;
        let params = ForestParams {
            seed: shard.index as u64,
            ..ForestParams::default()
        };
        forests.push(train(&TrainingSet::new(&chain.trace)?, &params)?);
    }

    // Forests are flat outside their training data; the mask keeps the
    // walk on θ ≥ 0.
    let mask = SupportMask(&model);
    let mut surrogates: Vec<&dyn LogSurrogate> = forests.iter().map(|f| f as &dyn LogSurrogate).collect();
    surrogates.push(&mask);
    let out = rf_mh(
        &surrogates,
        &MhConfig {
            n_iters: 10_000,
            burn_in: 2_000,
            thin: 4,
            step_scale: vec![0.2, 0.2],
            init: ParamPoint(vec![1.0, 1.0]),
            seed: 77,
            adapt_during_burnin: true,
        },
    )?;
    let sum_of_roots: f64 =
        out.retained.iter().map(|p| p[0].sqrt() + p[1].sqrt()).sum::<f64>() / out.retained.len() as f64;
    println!(
        "{} draws, acceptance {:.2}, mean √θ₁+√θ₂ = {sum_of_roots:.3}",
        out.retained.len(),
        out.acceptance_rate
    );
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}

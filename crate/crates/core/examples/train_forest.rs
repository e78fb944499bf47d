// Fit a forest to a shard's traced log density and query it.

use forest_dnc::forest::{train, Forest, ForestParams, TrainingSet};
use forest_dnc::model::{shard_data, DataSource, GaussianModel, Model};
use forest_dnc::sampler::{sample_shard, MhConfig};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let data = DataSource::Normal {
        mean: 1.0,
        variance: 4.0,
    }
    .generate(500, 3);
    let model = GaussianModel;
    let shard = &shard_data(&data, 5, 4)?[0];
    let (init, step_scale) = model.initial_state(&shard.data, 1.0);
    let chain = sample_shard(
        &model,
        shard,
        &MhConfig {
            n_iters: 8_000,
            burn_in: 2_000,
            thin: 5,
            step_scale,
            init,
            seed: 5,
            adapt_during_burnin: true,
        },
    )?;

    let set = TrainingSet::new(&chain.trace)?;
    let forest = train(
        &set,
        &ForestParams {
            n_trees: 10,
            min_leaf: 5,
            subsample_size: 4_000,
            seed: 6,
        },
    )?;
    println!("trained on {} traced proposals", set.len());
    for probe in [[1.0, 4.0], [0.5, 3.0], [2.0, 6.0]] {
        println!(
            "theta {probe:?}: forest {:.2}, exact {:.2}",
            forest.predict(&probe),
            shard.log_gamma(&model, &probe)
        );
    }

    let dir = std::env::temp_dir().join("forest-dnc-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("forest.json");
    forest.save(&path)?;
    let back = Forest::load(&path)?;
    assert_eq!(back.predict(&[1.0, 4.0]), forest.predict(&[1.0, 4.0]));
    println!("saved and reloaded {}", path.display());
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}

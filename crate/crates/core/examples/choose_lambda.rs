// Pick per-shard tempering factors from Gaussian maximum-likelihood fits.

use forest_dnc::combine::{choose_lambda, mle_summary_gaussian};
use forest_dnc::model::{shard_data, DataSource};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let data = DataSource::LogNormal { mu: 0.0, sigma: 1.0 }.generate(2_000, 21);
    let shards = shard_data(&data, 10, 22)?;
    let full = mle_summary_gaussian(&data)?;
    let per_shard = shards
        .iter()
        .map(|s| mle_summary_gaussian(&s.data))
        .collect::<Result<Vec<_>, _>>()?;
    let plan = choose_lambda(&full, &per_shard)?;
    println!("full-data fit {:.3?} ± {:.3?}", full.theta_hat, full.sigma_hat);
    for (k, l) in plan.lambdas.iter().enumerate() {
        println!("shard {}: lambda {l:.3}", k + 1);
    }
    println!("{}", serde_json::to_string(&plan)?);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}

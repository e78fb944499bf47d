// Consensus Monte Carlo and the KDE-product combiner on toy subchains.

use forest_dnc::baselines::{consensus_combine, kde_product_sample, silverman_bandwidth, SubchainSet};
use forest_dnc::model::ParamPoint;
use forest_dnc::seed::rng_from_seed;
use rand::Rng;
use rand_distr::StandardNormal;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    // Three Gaussian subposteriors centred at 0, 1 and 2 with unit variance;
    // their product is N(1, 1/3).
    let chains: Vec<Vec<ParamPoint>> = (0..3)
        .map(|k| {
            let mut rng = rng_from_seed(k);
            (0..2_000)
                .map(|_| ParamPoint(vec![k as f64 + rng.sample::<f64, _>(StandardNormal)]))
                .collect()
        })
        .collect();
    let set = SubchainSet::new(chains)?;

    let summary = |name: &str, xs: &[ParamPoint]| {
        let n = xs.len() as f64;
        let m = xs.iter().map(|p| p[0]).sum::<f64>() / n;
        let v = xs.iter().map(|p| (p[0] - m).powi(2)).sum::<f64>() / n;
        println!("{name}: mean {m:.3}, variance {v:.3}");
    };
    summary("consensus", &consensus_combine(&set)?);
    let h = silverman_bandwidth(&set);
    summary("kde product", &kde_product_sample(&set, &h, 2_000, 5, 3)?);
    println!("bandwidth {h:.3?}; exact product mean 1.000, variance 0.333");
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}

// Run a complete experiment from a preset and print its summary tables.

use forest_dnc::harness::{run_experiment, ExperimentConfig, ExperimentKind};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = ExperimentConfig::preset(ExperimentKind::Bimodal);
    cfg.out_dir = std::env::temp_dir().join("forest-dnc-example").join("bimodal");
    cfg.mcmc.n_iters = 12_000;
    cfg.mcmc.burn_in = 2_000;
    cfg.oracle.n_iters = 22_000;
    cfg.oracle.burn_in = 2_000;
    cfg.n_resample = 4_000;

    let out = run_experiment(&cfg)?;
    print!("{}", out.timing.to_text());
    println!("oracle mode mass {:.3?}", out.metrics.oracle_mode_mass);
    for (name, m) in &out.metrics.methods {
        println!("{name:<8} W1 sum {:.4}  mode mass {:.3?}", m.w1_sum, m.mode_mass);
    }
    println!("artefacts in {}", cfg.out_dir.display());
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use forest_dnc::harness::{recompute_metrics, run_experiment, ExperimentConfig, ExperimentKind};

#[derive(Parser)]
#[command(name = "forest-dnc", version, about = "Divide-and-conquer MCMC with forest surrogates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment end to end and write its artefacts.
    Run {
        #[arg(long, value_enum)]
        experiment: ExperimentKind,
        /// Number of shards.
        #[arg(long = "K")]
        k: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Use long-run chain lengths and forest sizes.
        #[arg(long)]
        paper_scale: bool,
        /// TOML file overriding the preset.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute metrics.json from the sample files in a run directory.
    Metrics {
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let result = match Cli::parse().command {
        Command::Run {
            experiment,
            k,
            seed,
            paper_scale,
            config,
            out,
        } => {
            let cfg = match config {
                Some(path) => ExperimentConfig::load(&path).map_err(|e| format!("config stage failed: {e}")),
                None => Ok(ExperimentConfig::preset(experiment)),
            };
            cfg.and_then(|mut cfg| {
                if cfg.experiment != experiment {
                    return Err(format!(
                        "config stage failed: file is for `{}`, not `{}`",
                        cfg.experiment.as_str(),
                        experiment.as_str()
                    ));
                }
                if paper_scale {
                    cfg = cfg.paper_scale();
                }
                if let Some(k) = k {
                    cfg.n_shards = k;
                }
                if let Some(seed) = seed {
                    cfg.master_seed = seed;
                }
                cfg.out_dir = out;
                let outcome = run_experiment(&cfg).map_err(|e| e.to_string())?;
                print!("{}", outcome.timing.to_text());
                for (name, m) in &outcome.metrics.methods {
                    println!("{name:<8} W1 sum {:.4}  mode mass {:?}", m.w1_sum, m.mode_mass);
                }
                Ok(())
            })
        }
        Command::Metrics { out } => recompute_metrics(&out)
            .map(|r| {
                for (name, m) in &r.methods {
                    println!("{name:<8} W1 sum {:.4}", m.w1_sum);
                }
            })
            .map_err(|e| e.to_string()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

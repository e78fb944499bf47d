use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

/// Runs `f` and returns its value with the elapsed wall time in seconds.
pub fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}

/// Wall-clock seconds per pipeline stage for one method. Stages a method
/// does not have are `None`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub mcmc: Option<f64>,
    pub training: Option<f64>,
    pub weighting: Option<f64>,
    pub combination: Option<f64>,
    pub total: f64,
}

impl StageTimes {
    pub fn new(
        mcmc: Option<f64>,
        training: Option<f64>,
        weighting: Option<f64>,
        combination: Option<f64>,
    ) -> Self {
        let total = [mcmc, training, weighting, combination].iter().flatten().sum();
        StageTimes {
            mcmc,
            training,
            weighting,
            combination,
            total,
        }
    }

    fn rows(&self) -> [(&'static str, Option<f64>); 5] {
        [
            ("MCMC", self.mcmc),
            ("Training", self.training),
            ("Weighting", self.weighting),
            ("Combination", self.combination),
            ("Total", Some(self.total)),
        ]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub methods: BTreeMap<String, StageTimes>,
    pub oracle_seconds: f64,
}

impl TimingReport {
    /// Plain-text table, one column per method, `—` for absent stages.
    pub fn to_text(&self) -> String {
        let names: Vec<&String> = self.methods.keys().collect();
        let mut out = format!("{:<12}", "stage");
        for n in &names {
            let _ = write!(out, "{n:>12}");
        }
        out.push('\n');
        for row in 0..5 {
            let label = StageTimes::default().rows()[row].0;
            let _ = write!(out, "{label:<12}");
            for n in &names {
                match self.methods[*n].rows()[row].1 {
                    Some(s) => {
                        let _ = write!(out, "{s:>12.3}");
                    }
                    None => {
                        let _ = write!(out, "{:>12}", "—");
                    }
                }
            }
            out.push('\n');
        }
        let _ = writeln!(out, "oracle reference run: {:.3} s", self.oracle_seconds);
        out
    }

    pub fn save(&self, dir: &Path) -> std::io::Result<()> {
        let mut json = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        json.push('\n');
        fs::write(dir.join("timing.json"), json)?;
        fs::write(dir.join("timing.txt"), self.to_text())
    }
}

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::io::{load_points, IoError};
use crate::model::ParamPoint;

/// Methods whose sample files are compared against the oracle.
pub const METHODS: [&str; 4] = ["rfis", "rfmh", "cmc", "nonpara"];
pub const REFERENCE: &str = "oracle";

/// Empirical 1-Wasserstein distance between the `j`-th marginals.
///
/// Both marginals are sorted. With equal sizes this is the mean absolute
/// difference of order statistics; otherwise the larger sample is reduced to
/// the smaller size by taking the order statistics at the mid-point quantile
/// positions `(i + ½)·n_large / n_small`.
pub fn wasserstein1_marginal(a: &[ParamPoint], b: &[ParamPoint], j: usize) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "W1 needs two non-empty samples");
    let mut xs: Vec<f64> = a.iter().map(|p| p[j]).collect();
    let mut ys: Vec<f64> = b.iter().map(|p| p[j]).collect();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (small, large) = if xs.len() <= ys.len() { (xs, ys) } else { (ys, xs) };
    let (ns, nl) = (small.len(), large.len());
    small
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let idx = ((2 * i + 1) * nl) / (2 * ns);
            (s - large[idx.min(nl - 1)]).abs()
        })
        .sum::<f64>()
        / ns as f64
}

/// Fraction of samples within Euclidean distance `radius` of each centre.
pub fn mode_mass(samples: &[ParamPoint], centers: &[Vec<f64>], radius: f64) -> Vec<f64> {
    centers
        .iter()
        .map(|c| {
            let hits = samples
                .iter()
                .filter(|p| {
                    p.iter().zip(c).map(|(x, y)| (x - y).powi(2)).sum::<f64>() <= radius * radius
                })
                .count();
            hits as f64 / samples.len().max(1) as f64
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub n_samples: usize,
    /// Per-dimension W1 to the oracle sample.
    pub w1: Vec<f64>,
    pub w1_sum: f64,
    pub mode_mass: Vec<f64>,
}

/// Run-level quantities that cannot be recomputed from sample files alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub lambdas: Vec<f64>,
    pub shard_ess: Vec<f64>,
    pub rfis_outside_fraction: f64,
    pub rfmh_outside_fraction: f64,
    pub rfmh_acceptance: f64,
    pub shard_acceptance: Vec<f64>,
    pub kde_bandwidth: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub experiment: String,
    pub note: String,
    pub mode_centers: Vec<Vec<f64>>,
    pub mode_radius: f64,
    pub oracle_mode_mass: Vec<f64>,
    pub methods: BTreeMap<String, MethodMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<Diagnostics>,
}

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("missing samples for `{0}`")]
    Missing(String),
    #[error("sample file for `{0}` has the wrong dimension")]
    Dimension(String),
    #[error("{0}: {1}")]
    Io(String, IoError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    File(#[from] std::io::Error),
}

impl MetricsReport {
    pub fn compute(
        experiment: &str,
        samples: &BTreeMap<String, Vec<ParamPoint>>,
        centers: &[Vec<f64>],
        radius: f64,
        diagnostics: Option<Diagnostics>,
    ) -> Result<Self, MetricsError> {
        let oracle = samples
            .get(REFERENCE)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| MetricsError::Missing(REFERENCE.into()))?;
        let d = oracle[0].dim();
        let mut methods = BTreeMap::new();
        for (name, pts) in samples.iter().filter(|(n, _)| n.as_str() != REFERENCE) {
            if pts.is_empty() {
                return Err(MetricsError::Missing(name.clone()));
            }
            if pts.iter().any(|p| p.dim() != d) {
                return Err(MetricsError::Dimension(name.clone()));
            }
            let w1: Vec<f64> = (0..d).map(|j| wasserstein1_marginal(pts, oracle, j)).collect();
            methods.insert(
                name.clone(),
                MethodMetrics {
                    n_samples: pts.len(),
                    w1_sum: w1.iter().sum(),
                    w1,
                    mode_mass: mode_mass(pts, centers, radius),
                },
            );
        }
        Ok(MetricsReport {
            experiment: experiment.to_string(),
            note: "W1 and mode mass are numeric stand-ins for visual contour comparison; \
                   the reference is a long full-data MCMC run"
                .to_string(),
            mode_centers: centers.to_vec(),
            mode_radius: radius,
            oracle_mode_mass: mode_mass(oracle, centers, radius),
            methods,
            diagnostics,
        })
    }

    pub fn to_json(&self) -> Result<String, MetricsError> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), MetricsError> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MetricsError> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

pub fn sample_file(method: &str) -> String {
    format!("samples_{method}.csv")
}

/// Reads every `samples_<method>.csv` plus the oracle sample from `dir`.
pub fn load_method_samples(dir: &Path) -> Result<BTreeMap<String, Vec<ParamPoint>>, MetricsError> {
    let mut out = BTreeMap::new();
    for name in METHODS.iter().chain(std::iter::once(&REFERENCE)) {
        let path = dir.join(sample_file(name));
        let pts = load_points(&path).map_err(|e| MetricsError::Io(path.display().to_string(), e))?;
        out.insert(name.to_string(), pts);
    }
    Ok(out)
}

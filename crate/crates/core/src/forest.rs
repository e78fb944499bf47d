//! Random partition forests: ensembles of regression trees whose splits pick
//! a uniformly random dimension and a uniformly random threshold.
//!
//! Training costs O(M log M) per tree for M points and prediction walks one
//! root-to-leaf path per tree, O(log M) for balanced trees.

use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::ParamPoint;
use crate::seed::{derive_seed, rng_from_seed};

pub const FOREST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ForestError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("training point {index} has dimension {got}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("training label {index} is not finite")]
    NonFiniteLabel { index: usize },
    #[error("n_trees and min_leaf must be at least 1")]
    BadHyperparameters,
    #[error("forest file has format version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("malformed forest file: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Regression targets `(θ, log γ(θ))`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    dim: usize,
    points: Vec<f64>,
    labels: Vec<f64>,
}

impl TrainingSet {
    pub fn new(pairs: &[(ParamPoint, f64)]) -> Result<Self, ForestError> {
        let first = pairs.first().ok_or(ForestError::EmptyTrainingSet)?;
        let dim = first.0.dim();
        let mut points = Vec::with_capacity(pairs.len() * dim);
        let mut labels = Vec::with_capacity(pairs.len());
        for (index, (p, y)) in pairs.iter().enumerate() {
            if p.dim() != dim {
                return Err(ForestError::DimensionMismatch {
                    index,
                    expected: dim,
                    got: p.dim(),
                });
            }
            if !y.is_finite() {
                return Err(ForestError::NonFiniteLabel { index });
            }
            points.extend_from_slice(p);
            labels.push(*y);
        }
        if dim == 0 {
            return Err(ForestError::DimensionMismatch {
                index: 0,
                expected: 1,
                got: 0,
            });
        }
        Ok(TrainingSet {
            dim,
            points,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    #[inline]
    fn coord(&self, i: u32, j: usize) -> f64 {
        self.points[i as usize * self.dim + j]
    }
}

/// One node of a tree stored in preorder. Points with `θ[dim] < value` go
/// left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TreeNode {
    Split {
        dim: usize,
        value: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        value: f64,
        count: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Tree {
    nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn predict(&self, theta: &[f64]) -> f64 {
        let mut at = 0usize;
        loop {
            match self.nodes[at] {
                TreeNode::Split {
                    dim,
                    value,
                    left,
                    right,
                } => {
                    at = if theta[dim] < value {
                        left as usize
                    } else {
                        right as usize
                    };
                }
                TreeNode::Leaf { value, .. } => return value,
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], at: usize) -> usize {
            match nodes[at] {
                TreeNode::Split { left, right, .. } => {
                    1 + walk(nodes, left as usize).max(walk(nodes, right as usize))
                }
                TreeNode::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }

    fn validate(&self, dim: usize) -> Result<(), ForestError> {
        if self.nodes.is_empty() {
            return Err(ForestError::Parse("empty tree".into()));
        }
        let n = self.nodes.len() as u32;
        for (i, node) in self.nodes.iter().enumerate() {
            match *node {
                TreeNode::Split {
                    dim: j,
                    value,
                    left,
                    right,
                } => {
                    // Preorder: children come strictly after their parent.
                    if j >= dim
                        || !value.is_finite()
                        || left >= n
                        || right >= n
                        || left as usize <= i
                        || right as usize <= i
                    {
                        return Err(ForestError::Parse(format!("invalid split node {i}")));
                    }
                }
                TreeNode::Leaf { value, .. } => {
                    if !value.is_finite() {
                        return Err(ForestError::Parse(format!("non-finite leaf {i}")));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub min_leaf: usize,
    /// Points drawn without replacement for each tree (all of them if larger
    /// than the training set).
    pub subsample_size: usize,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 10,
            min_leaf: 5,
            subsample_size: 10_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub version: u32,
    pub d: usize,
    pub n_trees: usize,
    pub min_leaf: usize,
    pub subsample_size: usize,
    pub seed: u64,
    /// Per-dimension `[min, max]` of the training points.
    pub bounds: Vec<[f64; 2]>,
    pub trees: Vec<Tree>,
}

struct Builder<'a> {
    data: &'a TrainingSet,
    min_leaf: usize,
    rng: ChaCha8Rng,
    nodes: Vec<TreeNode>,
    scratch: Vec<f64>,
}

impl Builder<'_> {
    fn build(&mut self, idx: &mut [u32]) -> u32 {
        let id = self.nodes.len() as u32;
        self.nodes.push(TreeNode::Leaf {
            value: 0.0,
            count: 0,
        });
        if idx.len() >= 2 * self.min_leaf {
            if let Some((dim, value)) = self.choose_split(idx) {
                let mid = partition(idx, |i| self.data.coord(i, dim) < value);
                let (l, r) = idx.split_at_mut(mid);
                let left = self.build(l);
                let right = self.build(r);
                self.nodes[id as usize] = TreeNode::Split {
                    dim,
                    value,
                    left,
                    right,
                };
                return id;
            }
        }
        self.nodes[id as usize] = self.leaf(idx);
        id
    }

    /// Uniform dimension, then a uniform threshold inside the range that
    /// leaves at least `min_leaf` points on each side. Dimensions whose range
    /// is degenerate are redrawn, up to d draws in total.
    fn choose_split(&mut self, idx: &[u32]) -> Option<(usize, f64)> {
        let d = self.data.dim;
        let n = idx.len();
        let k = self.min_leaf;
        for _ in 0..d {
            let dim = self.rng.random_range(0..d);
            self.scratch.clear();
            self.scratch
                .extend(idx.iter().map(|&i| self.data.coord(i, dim)));
            let (_, lo, upper) = self.scratch.select_nth_unstable_by(k - 1, f64::total_cmp);
            let lo = *lo;
            let (_, hi, _) = upper.select_nth_unstable_by(n - 2 * k, f64::total_cmp);
            let hi = *hi;
            if hi <= lo {
                continue;
            }
            let u: f64 = self.rng.random();
            let mut value = lo + u * (hi - lo);
            if !(value > lo && value < hi) {
                value = 0.5 * (lo + hi);
                if !(value > lo && value < hi) {
                    value = hi;
                }
            }
            return Some((dim, value));
        }
        None
    }

    fn leaf(&self, idx: &[u32]) -> TreeNode {
        let (mut mean, mut lo, mut hi) = (0.0, f64::INFINITY, f64::NEG_INFINITY);
        for (n, &i) in idx.iter().enumerate() {
            let y = self.data.labels[i as usize];
            mean += (y - mean) / (n + 1) as f64;
            lo = lo.min(y);
            hi = hi.max(y);
        }
        TreeNode::Leaf {
            value: mean.clamp(lo, hi),
            count: idx.len() as u32,
        }
    }
}

fn partition(idx: &mut [u32], mut goes_left: impl FnMut(u32) -> bool) -> usize {
    let mut mid = 0;
    for j in 0..idx.len() {
        if goes_left(idx[j]) {
            idx.swap(mid, j);
            mid += 1;
        }
    }
    mid
}

/// Trains a forest. Tree `t` uses its own RNG stream derived from
/// `(params.seed, t)`, so the result is independent of thread scheduling.
pub fn train(data: &TrainingSet, params: &ForestParams) -> Result<Forest, ForestError> {
    if data.is_empty() {
        return Err(ForestError::EmptyTrainingSet);
    }
    if params.n_trees == 0 || params.min_leaf == 0 {
        return Err(ForestError::BadHyperparameters);
    }
    let m = data.len();
    let take = params.subsample_size.min(m).max(1);
    let trees: Vec<Tree> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_from_seed(derive_seed(params.seed, "tree", t as u64));
            let mut idx: Vec<u32> = if take == m {
                (0..m as u32).collect()
            } else {
                index::sample(&mut rng, m, take)
                    .into_iter()
                    .map(|i| i as u32)
                    .collect()
            };
            let mut builder = Builder {
                data,
                min_leaf: params.min_leaf,
                rng,
                nodes: Vec::with_capacity(2 * take / params.min_leaf + 1),
                scratch: Vec::with_capacity(take),
            };
            builder.build(&mut idx);
            Tree {
                nodes: builder.nodes,
            }
        })
        .collect();

    let mut bounds = vec![[f64::INFINITY, f64::NEG_INFINITY]; data.dim];
    for i in 0..m {
        for (b, &x) in bounds.iter_mut().zip(data.point(i)) {
            b[0] = b[0].min(x);
            b[1] = b[1].max(x);
        }
    }

    Ok(Forest {
        version: FOREST_FORMAT_VERSION,
        d: data.dim,
        n_trees: params.n_trees,
        min_leaf: params.min_leaf,
        subsample_size: params.subsample_size,
        seed: params.seed,
        bounds,
        trees,
    })
}

impl Forest {
    /// Mean of the trees' leaf values along θ's routing paths. Points outside
    /// the training box follow the same comparisons and land in boundary
    /// leaves.
    pub fn predict(&self, theta: &[f64]) -> f64 {
        let (mut mean, mut lo, mut hi) = (0.0, f64::INFINITY, f64::NEG_INFINITY);
        for (t, tree) in self.trees.iter().enumerate() {
            let y = tree.predict(theta);
            mean += (y - mean) / (t + 1) as f64;
            lo = lo.min(y);
            hi = hi.max(y);
        }
        mean.clamp(lo, hi)
    }

    /// Whether θ lies in the bounding box of the training points.
    pub fn in_training_box(&self, theta: &[f64]) -> bool {
        self.bounds
            .iter()
            .zip(theta)
            .all(|(b, &x)| x >= b[0] && x <= b[1])
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ForestError> {
        let text = serde_json::to_string(self).map_err(|e| ForestError::Parse(e.to_string()))?;
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Forest, ForestError> {
        let text = fs::read_to_string(path)?;
        Forest::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Forest, ForestError> {
        #[derive(Deserialize)]
        struct Probe {
            version: u32,
        }
        let probe: Probe =
            serde_json::from_str(text).map_err(|e| ForestError::Parse(e.to_string()))?;
        if probe.version != FOREST_FORMAT_VERSION {
            return Err(ForestError::Version {
                found: probe.version,
                expected: FOREST_FORMAT_VERSION,
            });
        }
        let forest: Forest =
            serde_json::from_str(text).map_err(|e| ForestError::Parse(e.to_string()))?;
        if forest.d == 0 || forest.trees.is_empty() || forest.trees.len() != forest.n_trees {
            return Err(ForestError::Parse("inconsistent forest header".into()));
        }
        if forest.bounds.len() != forest.d {
            return Err(ForestError::Parse("bounds do not match dimension".into()));
        }
        for tree in &forest.trees {
            tree.validate(forest.d)?;
        }
        Ok(forest)
    }
}

pub fn save_forest(forest: &Forest, path: impl AsRef<Path>) -> Result<(), ForestError> {
    forest.save(path)
}

pub fn load_forest(path: impl AsRef<Path>) -> Result<Forest, ForestError> {
    Forest::load(path)
}

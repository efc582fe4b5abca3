//! Squared-loss gradient boosting over regression trees with exact greedy
//! splits.
//!
//! Each tree fits the residuals of the running prediction. Split thresholds
//! sit halfway between consecutive distinct feature values and a sample goes
//! left iff `x <= threshold`. Among equally good splits the lowest feature
//! index, then the lowest threshold, wins.

use std::path::Path;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::MiningError;
use crate::seeds;

pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbdtConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
    /// Fraction of rows drawn (without replacement) per tree.
    pub subsample: f64,
    /// Fraction of features considered per tree.
    pub colsample: f64,
    /// Seed for row and column sampling.
    pub seed: u64,
    /// Search features in parallel. The fitted model is identical either way.
    pub parallel: bool,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        Self {
            n_trees: 200,
            max_depth: 4,
            learning_rate: 0.1,
            min_leaf: 5,
            subsample: 1.0,
            colsample: 1.0,
            seed: 0,
            parallel: false,
        }
    }
}

impl GbdtConfig {
    pub fn validate(&self) -> Result<(), MiningError> {
        let bad = |m: String| Err(MiningError::InvalidConfig(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {}", self.learning_rate));
        }
        if self.min_leaf == 0 {
            return bad("min_leaf must be at least 1".into());
        }
        for (name, v) in [("subsample", self.subsample), ("colsample", self.colsample)] {
            if !(v > 0.0 && v <= 1.0) {
                return bad(format!("{name} {v} outside (0, 1]"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Nodes in preorder; the root is node 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(t, *left).max(walk(t, *right)),
            }
        }
        walk(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub version: u32,
    pub num_features: usize,
    pub learning_rate: f64,
    pub base_prediction: f64,
    pub max_depth: usize,
    pub trees: Vec<Tree>,
    /// Training MSE before any tree, then after each tree.
    #[serde(default)]
    pub train_mse: Vec<f64>,
}

struct Split {
    feature: usize,
    position: usize,
    threshold: f64,
    gain: f64,
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    residual: &'a [f64],
    cfg: &'a GbdtConfig,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    /// Best split of one feature given its members in sorted order.
    fn scan(&self, feature: usize, sorted: &[u32], total: f64) -> Option<Split> {
        let n = sorted.len();
        let min_leaf = self.cfg.min_leaf;
        let parent = total * total / n as f64;
        let mut left_sum = 0.0;
        let mut best: Option<Split> = None;
        for k in 0..n - 1 {
            let i = sorted[k] as usize;
            left_sum += self.residual[i];
            let (nl, nr) = (k + 1, n - k - 1);
            if nl < min_leaf {
                continue;
            }
            if nr < min_leaf {
                break;
            }
            let (lo, hi) = (self.x[i][feature], self.x[sorted[k + 1] as usize][feature]);
            if lo == hi {
                continue;
            }
            let right_sum = total - left_sum;
            let gain = left_sum * left_sum / nl as f64 + right_sum * right_sum / nr as f64 - parent;
            if best.as_ref().is_none_or(|b| gain > b.gain) {
                let mid = lo + (hi - lo) / 2.0;
                let threshold = if mid < hi { mid } else { lo };
                best = Some(Split {
                    feature,
                    position: k,
                    threshold,
                    gain,
                });
            }
        }
        best
    }

    /// `sorted[f]` lists this node's rows ordered by feature `features[f]`;
    /// `rows` lists them in ascending order. Returns the node index.
    fn build(&mut self, features: &[usize], sorted: Vec<Vec<u32>>, rows: Vec<u32>, depth: usize) -> usize {
        let n = rows.len();
        let total: f64 = rows.iter().map(|&i| self.residual[i as usize]).sum();
        let first = self.residual[rows[0] as usize];
        let leaf_value = if rows.iter().all(|&i| self.residual[i as usize] == first) {
            first
        } else {
            total / n as f64
        };
        let index = self.nodes.len();
        self.nodes.push(Node::Leaf { value: leaf_value });
        if depth >= self.cfg.max_depth || n < 2 * self.cfg.min_leaf {
            return index;
        }
        let candidates: Vec<Option<Split>> = if self.cfg.parallel {
            let this = &*self;
            features
                .par_iter()
                .zip(sorted.par_iter())
                .map(|(&f, s)| this.scan(f, s, total))
                .collect()
        } else {
            features.iter().zip(&sorted).map(|(&f, s)| self.scan(f, s, total)).collect()
        };
        let mut best: Option<Split> = None;
        for c in candidates.into_iter().flatten() {
            if best.as_ref().is_none_or(|b| c.gain > b.gain) {
                best = Some(c);
            }
        }
        let sse: f64 = rows
            .iter()
            .map(|&i| {
                let d = self.residual[i as usize] - total / n as f64;
                d * d
            })
            .sum();
        let Some(split) = best.filter(|s| s.gain > 1e-12 * sse.max(1.0)) else {
            return index;
        };
        let pos = features.iter().position(|&f| f == split.feature).expect("feature searched");
        let mut goes_left = vec![false; self.x.len()];
        for &i in &sorted[pos][..=split.position] {
            goes_left[i as usize] = true;
        }
        let partition = |list: &[u32]| -> (Vec<u32>, Vec<u32>) { list.iter().partition(|&&i| goes_left[i as usize]) };
        let (mut left_sorted, mut right_sorted) = (Vec::with_capacity(sorted.len()), Vec::with_capacity(sorted.len()));
        for list in &sorted {
            let (l, r) = partition(list);
            left_sorted.push(l);
            right_sorted.push(r);
        }
        drop(sorted);
        let (left_rows, right_rows) = partition(&rows);
        let left = self.build(features, left_sorted, left_rows, depth + 1);
        let right = self.build(features, right_sorted, right_rows, depth + 1);
        self.nodes[index] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        index
    }
}

fn mse(pred: &[f64], targets: &[f64]) -> f64 {
    pred.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / targets.len() as f64
}

/// Fits a boosted ensemble to `targets` (OKS values in `[0, 1]`).
pub fn fit(features: &[Vec<f64>], targets: &[f64], cfg: &GbdtConfig) -> Result<GbdtModel, MiningError> {
    cfg.validate()?;
    let n = features.len();
    if n < 2 {
        return Err(MiningError::TooFewSamples(n));
    }
    if targets.len() != n {
        return Err(MiningError::Dimension(format!("{n} feature rows, {} targets", targets.len())));
    }
    let d = features[0].len();
    if let Some(i) = features.iter().position(|f| f.len() != d) {
        return Err(MiningError::Dimension(format!("row {i} has {} features, row 0 has {d}", features[i].len())));
    }
    if features.iter().flatten().any(|v| !v.is_finite()) {
        return Err(MiningError::NonFinite);
    }
    if let Some(t) = targets.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(MiningError::TargetRange(*t));
    }

    let base_prediction = if targets.iter().all(|t| *t == targets[0]) {
        targets[0]
    } else {
        targets.iter().sum::<f64>() / n as f64
    };
    let presorted: Vec<Vec<u32>> = (0..d)
        .map(|f| {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| features[a as usize][f].total_cmp(&features[b as usize][f]).then(a.cmp(&b)));
            idx
        })
        .collect();

    let mut pred = vec![base_prediction; n];
    let mut train_mse = vec![mse(&pred, targets)];
    let mut trees = Vec::with_capacity(cfg.n_trees);
    let mut rng = seeds::rng(cfg.seed, "gbdt");
    for _ in 0..cfg.n_trees {
        let residual: Vec<f64> = targets.iter().zip(&pred).map(|(t, p)| t - p).collect();
        let features_used: Vec<usize> = if cfg.colsample < 1.0 {
            let k = ((d as f64 * cfg.colsample).ceil() as usize).clamp(1, d.max(1));
            let mut f = sample(&mut rng, d, k).into_vec();
            f.sort_unstable();
            f
        } else {
            (0..d).collect()
        };
        let in_sample: Option<Vec<bool>> = (cfg.subsample < 1.0).then(|| {
            let k = ((n as f64 * cfg.subsample).ceil() as usize).clamp(1, n);
            let mut mask = vec![false; n];
            for i in sample(&mut rng, n, k) {
                mask[i] = true;
            }
            mask
        });
        let keep = |i: &&u32| in_sample.as_ref().is_none_or(|m| m[**i as usize]);
        let sorted: Vec<Vec<u32>> = features_used
            .iter()
            .map(|&f| presorted[f].iter().filter(keep).copied().collect())
            .collect();
        let rows: Vec<u32> = (0..n as u32).filter(|i| keep(&i)).collect();
        let mut builder = Builder {
            x: features,
            residual: &residual,
            cfg,
            nodes: Vec::new(),
        };
        builder.build(&features_used, sorted, rows, 0);
        let tree = Tree { nodes: builder.nodes };
        for (p, x) in pred.iter_mut().zip(features) {
            *p += cfg.learning_rate * tree.predict(x);
        }
        train_mse.push(mse(&pred, targets));
        trees.push(tree);
    }
    Ok(GbdtModel {
        version: MODEL_VERSION,
        num_features: d,
        learning_rate: cfg.learning_rate,
        base_prediction,
        max_depth: cfg.max_depth,
        trees,
        train_mse,
    })
}

impl GbdtModel {
    /// `base + lr Σ tree(x)` without clamping.
    pub fn predict_raw(&self, x: &[f64]) -> Result<f64, MiningError> {
        if x.len() != self.num_features {
            return Err(MiningError::Dimension(format!(
                "feature vector has {} entries, model expects {}",
                x.len(),
                self.num_features
            )));
        }
        Ok(self.base_prediction + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>())
    }

    /// Predicted OKS, clamped to `[0, 1]`.
    pub fn predict(&self, x: &[f64]) -> Result<f64, MiningError> {
        Ok(self.predict_raw(x)?.clamp(0.0, 1.0))
    }

    pub fn validate(&self) -> Result<(), MiningError> {
        let bad = |m: String| Err(MiningError::MalformedModel(m));
        if self.version != MODEL_VERSION {
            return bad(format!("model version {}, expected {MODEL_VERSION}", self.version));
        }
        if !self.base_prediction.is_finite() || !self.learning_rate.is_finite() {
            return bad("non-finite base prediction or learning rate".into());
        }
        for (t, tree) in self.trees.iter().enumerate() {
            if tree.nodes.is_empty() {
                return bad(format!("tree {t} is empty"));
            }
            for (i, node) in tree.nodes.iter().enumerate() {
                match node {
                    Node::Leaf { value } if !value.is_finite() => return bad(format!("tree {t} node {i}: non-finite leaf")),
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => {
                        if *feature >= self.num_features {
                            return bad(format!("tree {t} node {i}: feature {feature} out of range"));
                        }
                        if !threshold.is_finite() {
                            return bad(format!("tree {t} node {i}: non-finite threshold"));
                        }
                        // children after parents rules out cycles
                        if *left <= i || *right <= i || *left >= tree.nodes.len() || *right >= tree.nodes.len() {
                            return bad(format!("tree {t} node {i}: bad child index"));
                        }
                    }
                    _ => {}
                }
            }
            if tree.depth() > self.max_depth {
                return bad(format!("tree {t} deeper than {}", self.max_depth));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, MiningError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| MiningError::MalformedModel(e.to_string()))?;
        if value.get("version").and_then(|v| v.as_u64()) != Some(MODEL_VERSION as u64) {
            return Err(MiningError::MalformedModel(format!(
                "unsupported model version {}",
                value.get("version").unwrap_or(&serde_json::Value::Null)
            )));
        }
        let model: Self = serde_json::from_value(value).map_err(|e| MiningError::MalformedModel(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), MiningError> {
        std::fs::write(path.as_ref(), self.to_json()).map_err(|e| MiningError::Io(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MiningError> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| MiningError::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json(&text)
    }
}

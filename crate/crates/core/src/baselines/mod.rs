//! Tabular baselines: CART trees, bagged random forests and logistic
//! gradient boosting with Newton leaves.

mod tree;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};

pub use tree::{fit_tree, TreeNode, TreeParams};
use tree::{grow, Target};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnsembleKind {
    Forest,
    Boosted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    pub kind: EnsembleKind,
    pub n_features: usize,
    pub trees: Vec<TreeNode>,
    /// Shrinkage; unused by forests.
    pub learning_rate: f64,
    /// Starting log-odds; unused by forests.
    pub initial_score: f64,
}

impl EnsembleModel {
    /// The first `n` trees only (boosting prefix or forest subset).
    pub fn truncated(&self, n: usize) -> Self {
        Self {
            trees: self.trees[..n.min(self.trees.len())].to_vec(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub bootstrap: bool,
    /// Features per split; `None` means ⌈√d⌉.
    pub max_features: Option<usize>,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 200,
            max_depth: 8,
            min_leaf: 1,
            bootstrap: true,
            max_features: None,
        }
    }
}

impl ForestConfig {
    pub fn tree_params(&self, d: usize) -> TreeParams {
        TreeParams {
            max_depth: self.max_depth,
            min_leaf: self.min_leaf,
            max_features: Some(self.max_features.unwrap_or_else(|| (d as f64).sqrt().ceil() as usize)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbdtConfig {
    pub n_rounds: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub learning_rate: f64,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        Self {
            n_rounds: 200,
            max_depth: 4,
            min_leaf: 1,
            learning_rate: 0.1,
        }
    }
}

fn check_training_data(x: &Array2<f64>, y: &[u8]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch(format!("{} rows but {} labels", x.nrows(), y.len())));
    }
    if x.nrows() < 2 || x.ncols() == 0 {
        return Err(Error::InvalidInput("need at least 2 rows and 1 feature".into()));
    }
    if y.iter().any(|&v| v > 1) {
        return Err(Error::InvalidInput("labels must be 0 or 1".into()));
    }
    if !(y.contains(&0) && y.contains(&1)) {
        return Err(Error::InvalidInput("both classes must be present".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite feature value".into()));
    }
    Ok(())
}

/// One forest member: bootstrap rows (when enabled) then a randomized CART
/// tree, both drawn from `seeded(tree_seed)`.
pub fn fit_forest_tree(x: &Array2<f64>, y: &[u8], config: &ForestConfig, tree_seed: u64) -> TreeNode {
    let mut rng = seeded(tree_seed);
    let n = x.nrows();
    let rows: Vec<usize> = if config.bootstrap {
        (0..n).map(|_| rng.random_range(0..n)).collect()
    } else {
        (0..n).collect()
    };
    grow(x, &rows, &Target::Class(y), &config.tree_params(x.ncols()), 0, &mut rng)
}

/// Trees are fitted in parallel; tree `t` uses `derive_seed(seed, t)`.
pub fn fit_random_forest(x: &Array2<f64>, y: &[u8], config: &ForestConfig, seed: u64) -> Result<EnsembleModel> {
    check_training_data(x, y)?;
    if config.n_trees == 0 {
        return Err(Error::InvalidParameter("n_trees must be at least 1".into()));
    }
    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|t| fit_forest_tree(x, y, config, derive_seed(seed, t as u64)))
        .collect();
    Ok(EnsembleModel {
        kind: EnsembleKind::Forest,
        n_features: x.ncols(),
        trees,
        learning_rate: 0.0,
        initial_score: 0.0,
    })
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Logistic boosting: start at the prior log-odds, then each round fits a
/// squared-error tree to the residuals `y − σ(score)` with Newton leaf
/// values and adds it with shrinkage.
pub fn fit_gbdt(x: &Array2<f64>, y: &[u8], config: &GbdtConfig) -> Result<EnsembleModel> {
    check_training_data(x, y)?;
    if !(config.learning_rate.is_finite() && config.learning_rate > 0.0) {
        return Err(Error::InvalidParameter("learning_rate must be positive".into()));
    }
    let pos = y.iter().filter(|&&v| v == 1).count() as f64;
    let neg = y.len() as f64 - pos;
    let initial_score = (pos / neg).ln();
    let params = TreeParams {
        max_depth: config.max_depth,
        min_leaf: config.min_leaf,
        max_features: None,
    };
    let rows: Vec<usize> = (0..x.nrows()).collect();
    let mut score = vec![initial_score; x.nrows()];
    let mut trees = Vec::with_capacity(config.n_rounds);
    let mut unused_rng = seeded(0);
    for _ in 0..config.n_rounds {
        let p: Vec<f64> = score.iter().map(|&s| sigmoid(s)).collect();
        let residual: Vec<f64> = p.iter().zip(y).map(|(p, &t)| t as f64 - p).collect();
        let hessian: Vec<f64> = p.iter().map(|p| p * (1.0 - p)).collect();
        let target = Target::Gradient {
            residual: &residual,
            hessian: &hessian,
        };
        let tree = grow(x, &rows, &target, &params, 0, &mut unused_rng);
        for (i, s) in score.iter_mut().enumerate() {
            *s += config.learning_rate * tree.predict_row(x.row(i));
        }
        trees.push(tree);
    }
    Ok(EnsembleModel {
        kind: EnsembleKind::Boosted,
        n_features: x.ncols(),
        trees,
        learning_rate: config.learning_rate,
        initial_score,
    })
}

/// Positive-class score per row, in [0, 1].
pub fn predict_ensemble(model: &EnsembleModel, x: &Array2<f64>) -> Result<Vec<f64>> {
    if x.ncols() != model.n_features {
        return Err(Error::DimensionMismatch(format!(
            "model expects {} features, got {}",
            model.n_features,
            x.ncols()
        )));
    }
    Ok(x.rows()
        .into_iter()
        .map(|row| match model.kind {
            EnsembleKind::Forest => {
                model.trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / model.trees.len() as f64
            }
            EnsembleKind::Boosted => {
                let mut s = model.initial_score;
                for t in &model.trees {
                    s += model.learning_rate * t.predict_row(row);
                }
                sigmoid(s)
            }
        })
        .collect())
}

/// Mean binary cross-entropy of the ensemble's scores.
pub fn log_loss(model: &EnsembleModel, x: &Array2<f64>, y: &[u8]) -> Result<f64> {
    let p = predict_ensemble(model, x)?;
    let eps = 1e-15;
    Ok(p.iter()
        .zip(y)
        .map(|(&p, &t)| {
            let p = p.clamp(eps, 1.0 - eps);
            if t == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum::<f64>()
        / y.len() as f64)
}

const MAGIC: &str = "melc-ensemble 1";

fn write_tree(node: &TreeNode, out: &mut String) {
    match node {
        TreeNode::Leaf { value } => {
            let _ = writeln!(out, "leaf {value}");
        }
        TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        } => {
            let _ = writeln!(out, "split {feature} {threshold}");
            write_tree(left, out);
            write_tree(right, out);
        }
    }
}

/// Text model file: a header, then one `tree` block per tree listing its
/// nodes in preorder (`split <feature> <threshold>` or `leaf <value>`).
pub fn save_ensemble(model: &EnsembleModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let kind = match model.kind {
        EnsembleKind::Forest => "forest",
        EnsembleKind::Boosted => "boosted",
    };
    let mut out = format!(
        "{MAGIC}\nkind {kind}\nn_features {}\nlearning_rate {}\ninitial_score {}\nn_trees {}\n",
        model.n_features,
        model.learning_rate,
        model.initial_score,
        model.trees.len()
    );
    for (i, t) in model.trees.iter().enumerate() {
        let _ = writeln!(out, "tree {i}");
        write_tree(t, &mut out);
        out.push_str("end\n");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

struct Lines<'a> {
    path: &'a Path,
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<(usize, &'a str)> {
        self.iter
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| Error::parse(self.path, 0, "unexpected end of file"))
    }

    fn field<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let (no, line) = self.next()?;
        let value = line
            .strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .ok_or_else(|| Error::parse(self.path, no, format!("expected `{key} <value>`")))?;
        value
            .parse()
            .map_err(|_| Error::parse(self.path, no, format!("bad value for {key}")))
    }

    fn tree(&mut self, n_features: usize) -> Result<TreeNode> {
        let (no, line) = self.next()?;
        let parts: Vec<&str> = line.split(' ').collect();
        let bad = |m: &str| Error::parse(self.path, no, m.to_string());
        match parts.as_slice() {
            ["leaf", v] => Ok(TreeNode::Leaf {
                value: v.parse().map_err(|_| bad("bad leaf value"))?,
            }),
            ["split", f, t] => {
                let feature: usize = f.parse().map_err(|_| bad("bad feature index"))?;
                if feature >= n_features {
                    return Err(bad("feature index out of range"));
                }
                let threshold = t.parse().map_err(|_| bad("bad threshold"))?;
                let left = Box::new(self.tree(n_features)?);
                let right = Box::new(self.tree(n_features)?);
                Ok(TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                })
            }
            _ => Err(bad("expected `leaf` or `split` node")),
        }
    }
}

pub fn load_ensemble(path: impl AsRef<Path>) -> Result<EnsembleModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = Lines {
        path,
        iter: text.lines().enumerate(),
    };
    let (_, first) = lines.next()?;
    if first != MAGIC {
        return Err(Error::parse(path, 1, "not an ensemble model file"));
    }
    let kind_name: String = lines.field("kind")?;
    let kind = match kind_name.as_str() {
        "forest" => EnsembleKind::Forest,
        "boosted" => EnsembleKind::Boosted,
        _ => return Err(Error::parse(path, 2, format!("unknown kind `{kind_name}`"))),
    };
    let n_features: usize = lines.field("n_features")?;
    let learning_rate: f64 = lines.field("learning_rate")?;
    let initial_score: f64 = lines.field("initial_score")?;
    let n_trees: usize = lines.field("n_trees")?;
    let mut trees = Vec::with_capacity(n_trees);
    for i in 0..n_trees {
        let idx: usize = lines.field("tree")?;
        if idx != i {
            return Err(Error::parse(path, 0, format!("expected tree {i}, found {idx}")));
        }
        trees.push(lines.tree(n_features)?);
        let (no, end) = lines.next()?;
        if end != "end" {
            return Err(Error::parse(path, no, "expected `end`"));
        }
    }
    if kind == EnsembleKind::Forest && trees.is_empty() {
        return Err(Error::parse(path, 0, "forest without trees"));
    }
    Ok(EnsembleModel {
        kind,
        n_features,
        trees,
        learning_rate,
        initial_score,
    })
}

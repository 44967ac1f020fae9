use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::Rng;

/// Binary decision tree; `x[feature] <= threshold` goes left.
#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    pub fn predict_row(&self, row: ArrayView1<f64>) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if row[*feature] <= *threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features examined per split; `None` examines all of them.
    pub max_features: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: 8,
            min_leaf: 1,
            max_features: None,
        }
    }
}

/// What a node fits: class labels (Gini, leaf = positive fraction) or
/// gradient targets (squared error, leaf = Newton step).
pub(crate) enum Target<'a> {
    Class(&'a [u8]),
    Gradient { residual: &'a [f64], hessian: &'a [f64] },
}

impl Target<'_> {
    fn leaf_value(&self, rows: &[usize]) -> f64 {
        match self {
            Target::Class(y) => rows.iter().filter(|&&r| y[r] == 1).count() as f64 / rows.len() as f64,
            Target::Gradient { residual, hessian } => {
                let g: f64 = rows.iter().map(|&r| residual[r]).sum();
                let h: f64 = rows.iter().map(|&r| hessian[r]).sum();
                g / h.max(1e-12)
            }
        }
    }

    fn is_pure(&self, rows: &[usize]) -> bool {
        match self {
            Target::Class(y) => rows.iter().all(|&r| y[r] == y[rows[0]]),
            Target::Gradient { residual, .. } => rows.iter().all(|&r| residual[r] == residual[rows[0]]),
        }
    }

    fn value(&self, r: usize) -> f64 {
        match self {
            Target::Class(y) => y[r] as f64,
            Target::Gradient { residual, .. } => residual[r],
        }
    }

    /// Split cost from left/right counts and target sums (lower is better):
    /// weighted Gini for classes, negated between-group sum of squares for
    /// gradients (equivalent to minimizing the within-group squared error).
    fn cost(&self, nl: f64, sl: f64, nr: f64, sr: f64) -> f64 {
        match self {
            Target::Class(_) => 2.0 * sl * (nl - sl) / nl + 2.0 * sr * (nr - sr) / nr,
            Target::Gradient { .. } => -(sl * sl / nl + sr * sr / nr),
        }
    }
}

struct Best {
    cost: f64,
    feature: usize,
    threshold: f64,
}

fn best_split(x: &Array2<f64>, rows: &[usize], target: &Target, features: &[usize], min_leaf: usize) -> Option<Best> {
    let n = rows.len();
    let total: f64 = rows.iter().map(|&r| target.value(r)).sum();
    let mut best: Option<Best> = None;
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(n);
    for &f in features {
        pairs.clear();
        pairs.extend(rows.iter().map(|&r| (x[[r, f]], target.value(r))));
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut sl = 0.0;
        for i in 0..n - 1 {
            sl += pairs[i].1;
            let nl = i + 1;
            if pairs[i].0 == pairs[i + 1].0 || nl < min_leaf || n - nl < min_leaf {
                continue;
            }
            let cost = target.cost(nl as f64, sl, (n - nl) as f64, total - sl);
            let better = match &best {
                None => true,
                Some(b) => cost < b.cost - 1e-12 * (1.0 + b.cost.abs()),
            };
            if better {
                best = Some(Best {
                    cost,
                    feature: f,
                    threshold: 0.5 * (pairs[i].0 + pairs[i + 1].0),
                });
            }
        }
    }
    best
}

pub(crate) fn grow(
    x: &Array2<f64>,
    rows: &[usize],
    target: &Target,
    params: &TreeParams,
    depth: usize,
    rng: &mut impl Rng,
) -> TreeNode {
    let leaf = || TreeNode::Leaf {
        value: target.leaf_value(rows),
    };
    if depth >= params.max_depth || rows.len() < 2 * params.min_leaf.max(1) || target.is_pure(rows) {
        return leaf();
    }
    let d = x.ncols();
    let features: Vec<usize> = match params.max_features {
        Some(m) if m < d => {
            let mut all: Vec<usize> = (0..d).collect();
            all.shuffle(rng);
            let mut chosen = all[..m.max(1)].to_vec();
            chosen.sort_unstable();
            chosen
        }
        _ => (0..d).collect(),
    };
    let Some(best) = best_split(x, rows, target, &features, params.min_leaf.max(1)) else {
        return leaf();
    };
    let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[[i, best.feature]] <= best.threshold);
    TreeNode::Split {
        feature: best.feature,
        threshold: best.threshold,
        left: Box::new(grow(x, &l, target, params, depth + 1, rng)),
        right: Box::new(grow(x, &r, target, params, depth + 1, rng)),
    }
}

/// Classification tree on all rows; leaves hold the positive-class fraction.
pub fn fit_tree(x: &Array2<f64>, y: &[u8], params: &TreeParams, rng: &mut impl Rng) -> TreeNode {
    let rows: Vec<usize> = (0..x.nrows()).collect();
    grow(x, &rows, &Target::Class(y), params, 0, rng)
}

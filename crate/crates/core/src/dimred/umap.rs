//! UMAP: fuzzy simplicial set over exact kNN, then a sampled
//! attractive/repulsive SGD layout.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::{canonical_order, gather_rows, scatter_rows, squared_distance, EmbeddingMatrix, Method};
use crate::error::{Error, Result};
use crate::graph::TopK;
use crate::rng::seeded;

const SIGMA_TOL: f64 = 1e-5;
const SIGMA_ITERS: usize = 64;
const MIN_SIGMA_SCALE: f64 = 1e-3;
const CLIP: f64 = 4.0;
const CURVE_POINTS: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct UmapParams {
    pub d_out: usize,
    pub n_neighbors: usize,
    pub min_dist: f64,
    pub spread: f64,
    pub n_epochs: usize,
    pub negative_samples: usize,
    pub seed: u64,
}

impl Default for UmapParams {
    fn default() -> Self {
        Self {
            d_out: 16,
            n_neighbors: 15,
            min_dist: 0.1,
            spread: 1.0,
            n_epochs: 200,
            negative_samples: 5,
            seed: 0,
        }
    }
}

/// Neighbour memberships before and after the fuzzy union.
#[derive(Debug, Clone)]
pub struct FuzzySet {
    /// Per point: `(neighbour, distance, membership)`, nearest first.
    pub directed: Vec<Vec<(usize, f64, f64)>>,
    pub rho: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Undirected memberships `a + b − a·b`, keyed by `(i, j)` with `i < j`.
    pub symmetric: BTreeMap<(usize, usize), f64>,
}

impl FuzzySet {
    pub fn membership(&self, i: usize, j: usize) -> f64 {
        let key = if i < j { (i, j) } else { (j, i) };
        self.symmetric.get(&key).copied().unwrap_or(0.0)
    }
}

pub fn fuzzy_simplicial_set(x: &Array2<f64>, n_neighbors: usize) -> Result<FuzzySet> {
    let n = x.nrows();
    if n_neighbors < 2 || n_neighbors >= n {
        return Err(Error::InvalidParameter(format!(
            "n_neighbors = {n_neighbors} must lie in 2..{n}"
        )));
    }
    let rows: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
    let knn: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut top = TopK::new(n_neighbors);
            for j in (0..n).filter(|&j| j != i) {
                top.offer(-squared_distance(&rows[i], &rows[j]), j);
            }
            top.into_items().into_iter().map(|(s, j)| (j, (-s).sqrt())).collect()
        })
        .collect();

    let mean_all: f64 = knn.iter().flatten().map(|(_, d)| d).sum::<f64>() / (n * n_neighbors) as f64;
    let target = (n_neighbors as f64).log2();
    let mut directed = Vec::with_capacity(n);
    let mut rho = Vec::with_capacity(n);
    let mut sigma = Vec::with_capacity(n);
    for list in &knn {
        let r = list[0].1;
        let (mut lo, mut hi, mut mid) = (0.0_f64, f64::INFINITY, 1.0_f64);
        for _ in 0..SIGMA_ITERS {
            let psum: f64 = list.iter().map(|(_, d)| (-(d - r).max(0.0) / mid).exp()).sum();
            if (psum - target).abs() < SIGMA_TOL {
                break;
            }
            if psum > target {
                hi = mid;
                mid = (lo + hi) / 2.0;
            } else {
                lo = mid;
                mid = if hi.is_finite() { (lo + hi) / 2.0 } else { mid * 2.0 };
            }
        }
        let mean_i = list.iter().map(|(_, d)| d).sum::<f64>() / list.len() as f64;
        let floor = MIN_SIGMA_SCALE * if r > 0.0 { mean_i } else { mean_all };
        let s = mid.max(floor);
        directed.push(
            list.iter()
                .map(|&(j, d)| (j, d, (-(d - r).max(0.0) / s).exp()))
                .collect::<Vec<_>>(),
        );
        rho.push(r);
        sigma.push(s);
    }

    let mut forward: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (i, list) in directed.iter().enumerate() {
        for &(j, _, w) in list {
            forward.insert((i, j), w);
        }
    }
    let mut symmetric = BTreeMap::new();
    for (&(i, j), &a) in &forward {
        let b = forward.get(&(j, i)).copied().unwrap_or(0.0);
        let key = if i < j { (i, j) } else { (j, i) };
        symmetric.insert(key, fuzzy_union(a, b));
    }
    Ok(FuzzySet {
        directed,
        rho,
        sigma,
        symmetric,
    })
}

/// Probabilistic union `a + b − a·b`, evaluated as `hi + lo·(1 − hi)` so a
/// full-strength membership stays exactly 1.
pub fn fuzzy_union(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + lo * (1.0 - hi)
}

/// Least-squares fit of `1 / (1 + a·r^{2b})` to the target curve that is 1
/// below `min_dist` and `exp(−(r − min_dist)/spread)` beyond it, sampled at
/// 300 points on `[0, 3·spread]` (Levenberg–Marquardt).
pub fn fit_curve(min_dist: f64, spread: f64) -> (f64, f64) {
    let xs: Vec<f64> = (0..CURVE_POINTS)
        .map(|i| 3.0 * spread * i as f64 / (CURVE_POINTS - 1) as f64)
        .collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|&x| if x < min_dist { 1.0 } else { (-(x - min_dist) / spread).exp() })
        .collect();
    let residuals = |a: f64, b: f64| -> f64 {
        xs.iter()
            .zip(&ys)
            .map(|(&x, &y)| (1.0 / (1.0 + a * x.powf(2.0 * b)) - y).powi(2))
            .sum()
    };

    let (mut a, mut b) = (1.0_f64, 1.0_f64);
    let mut lambda = 1e-3;
    let mut cost = residuals(a, b);
    for _ in 0..500 {
        // normal equations J^T J δ = −J^T r
        let (mut jaa, mut jab, mut jbb, mut ga, mut gb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&x, &y) in xs.iter().zip(&ys) {
            if x == 0.0 {
                continue; // curve is 1 there regardless of (a, b)
            }
            let p = x.powf(2.0 * b);
            let f = 1.0 / (1.0 + a * p);
            let r = f - y;
            let da = -p * f * f;
            let db = -a * p * 2.0 * x.ln() * f * f;
            jaa += da * da;
            jab += da * db;
            jbb += db * db;
            ga += da * r;
            gb += db * r;
        }
        let (m00, m11) = (jaa * (1.0 + lambda), jbb * (1.0 + lambda));
        let det = m00 * m11 - jab * jab;
        if det == 0.0 {
            break;
        }
        let step_a = -(m11 * ga - jab * gb) / det;
        let step_b = -(m00 * gb - jab * ga) / det;
        let (na, nb) = (a + step_a, b + step_b);
        let new_cost = if na > 0.0 && nb > 0.0 { residuals(na, nb) } else { f64::INFINITY };
        if new_cost < cost {
            let converged = (cost - new_cost) <= 1e-15 * cost.max(1e-300);
            a = na;
            b = nb;
            cost = new_cost;
            lambda = (lambda * 0.3).max(1e-12);
            if converged || (step_a.abs() < 1e-13 && step_b.abs() < 1e-13) {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
    }
    (a, b)
}

fn clip(v: f64) -> f64 {
    v.clamp(-CLIP, CLIP)
}

pub fn umap(x: &Array2<f64>, params: &UmapParams) -> Result<EmbeddingMatrix> {
    let n = x.nrows();
    if params.d_out == 0 {
        return Err(Error::InvalidParameter("umap d_out must be at least 1".into()));
    }
    if !(params.min_dist >= 0.0 && params.spread > 0.0) {
        return Err(Error::InvalidParameter("umap needs min_dist >= 0 and spread > 0".into()));
    }
    let order = canonical_order(x);
    let xs = gather_rows(x, &order);
    let fuzzy = fuzzy_simplicial_set(&xs, params.n_neighbors)?;
    let (a, b) = fit_curve(params.min_dist, params.spread);

    // Both directions of every undirected edge, as in the reference layout.
    let max_w = fuzzy.symmetric.values().copied().fold(0.0, f64::max);
    let epochs = params.n_epochs.max(1) as f64;
    let mut heads = Vec::new();
    let mut tails = Vec::new();
    let mut epochs_per_sample = Vec::new();
    for (&(i, j), &w) in &fuzzy.symmetric {
        if w <= 0.0 || w < max_w / epochs {
            continue;
        }
        for (h, t) in [(i, j), (j, i)] {
            heads.push(h);
            tails.push(t);
            epochs_per_sample.push(max_w / w);
        }
    }
    let mut next_sample = epochs_per_sample.clone();

    let d = params.d_out;
    let mut rng = seeded(params.seed);
    let normal = Normal::new(0.0, 1e-2).expect("valid sd");
    let mut y: Vec<f64> = (0..n * d).map(|_| normal.sample(&mut rng)).collect();

    for epoch in 0..params.n_epochs {
        let alpha = 1.0 - epoch as f64 / epochs;
        for e in 0..heads.len() {
            if next_sample[e] > epoch as f64 {
                continue;
            }
            let (h, t) = (heads[e], tails[e]);
            let dist2 = (0..d).map(|k| (y[h * d + k] - y[t * d + k]).powi(2)).sum::<f64>();
            let coef = if dist2 > 0.0 {
                -2.0 * a * b * dist2.powf(b - 1.0) / (a * dist2.powf(b) + 1.0)
            } else {
                0.0
            };
            for k in 0..d {
                let g = clip(coef * (y[h * d + k] - y[t * d + k]));
                y[h * d + k] += g * alpha;
                y[t * d + k] -= g * alpha;
            }
            next_sample[e] += epochs_per_sample[e];

            for _ in 0..params.negative_samples {
                let o = rng.random_range(0..n);
                if o == h {
                    continue;
                }
                let dist2 = (0..d).map(|k| (y[h * d + k] - y[o * d + k]).powi(2)).sum::<f64>();
                let coef = if dist2 > 0.0 {
                    2.0 * b / ((0.001 + dist2) * (a * dist2.powf(b) + 1.0))
                } else {
                    0.0
                };
                for k in 0..d {
                    let g = if coef > 0.0 { clip(coef * (y[h * d + k] - y[o * d + k])) } else { CLIP };
                    y[h * d + k] += g * alpha;
                }
            }
        }
    }

    let layout = Array2::from_shape_vec((n, d), y).expect("shape");
    if layout.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("umap layout diverged".into()));
    }
    Ok(EmbeddingMatrix {
        data: scatter_rows(&layout, &order),
        method: Method::Umap,
        params: vec![
            ("d_out".into(), d as f64),
            ("n_neighbors".into(), params.n_neighbors as f64),
            ("min_dist".into(), params.min_dist),
            ("n_epochs".into(), params.n_epochs as f64),
            ("seed".into(), params.seed as f64),
            ("a".into(), a),
            ("b".into(), b),
        ],
    })
}

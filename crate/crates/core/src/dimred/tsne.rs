//! Exact (O(n²)) t-distributed stochastic neighbour embedding.

use ndarray::Array2;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::{canonical_order, gather_rows, scatter_rows, squared_distance, EmbeddingMatrix, Method};
use crate::error::{Error, Result};
use crate::rng::seeded;

const PERPLEXITY_TOL: f64 = 1e-5;
const MAX_BISECTIONS: usize = 200;
const MIN_GAIN: f64 = 0.01;
const KL_EVERY: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct TsneParams {
    pub d_out: usize,
    pub perplexity: f64,
    pub n_iter: usize,
    pub seed: u64,
    /// `None` picks `max(n / exaggeration / 4, 50)`.
    pub learning_rate: Option<f64>,
    pub early_exaggeration: f64,
    /// Iterations with exaggerated P and momentum 0.5.
    pub exaggeration_iters: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
}

impl Default for TsneParams {
    fn default() -> Self {
        Self {
            d_out: 2,
            perplexity: 30.0,
            n_iter: 1000,
            seed: 0,
            learning_rate: None,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TsneResult {
    pub embedding: EmbeddingMatrix,
    /// KL(P‖Q) (without exaggeration) at iteration 0, every 50 iterations,
    /// and after the last update.
    pub kl_trace: Vec<(usize, f64)>,
}

fn pairwise_sq_distances(x: &Array2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let rows: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
    let data: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let rows = &rows;
            (0..n).map(move |j| squared_distance(&rows[i], &rows[j]))
        })
        .collect();
    Array2::from_shape_vec((n, n), data).expect("shape")
}

/// Conditional neighbour distributions `p_{j|i}` from squared distances, with
/// each row's Gaussian precision found by bisection so its perplexity matches
/// `perplexity`. Returns the matrix and the perplexity reached per row.
pub fn conditional_affinities(dist2: &Array2<f64>, perplexity: f64) -> (Array2<f64>, Vec<f64>) {
    let n = dist2.nrows();
    let target = perplexity.ln();
    let rows: Vec<(Vec<f64>, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let d: Vec<(usize, f64)> = (0..n).filter(|&j| j != i).map(|j| (j, dist2[[i, j]])).collect();
            let d_min = d.iter().map(|(_, v)| *v).fold(f64::INFINITY, f64::min);
            let mut beta = 1.0;
            let (mut lo, mut hi) = (0.0_f64, f64::INFINITY);
            let mut p = vec![0.0; n];
            let mut perp = 1.0;
            for _ in 0..MAX_BISECTIONS {
                let mut sum = 0.0;
                for &(j, v) in &d {
                    p[j] = (-beta * (v - d_min)).exp();
                    sum += p[j];
                }
                let mut h = 0.0;
                for &(j, _) in &d {
                    p[j] /= sum;
                    if p[j] > 0.0 {
                        h -= p[j] * p[j].ln();
                    }
                }
                perp = h.exp();
                if (perp - perplexity).abs() < PERPLEXITY_TOL {
                    break;
                }
                if h > target {
                    lo = beta;
                    beta = if hi.is_finite() { (lo + hi) / 2.0 } else { beta * 2.0 };
                } else {
                    hi = beta;
                    beta = (lo + hi) / 2.0;
                }
            }
            (p, perp)
        })
        .collect();
    let mut out = Array2::zeros((n, n));
    let mut perps = Vec::with_capacity(n);
    for (i, (p, perp)) in rows.into_iter().enumerate() {
        for (j, v) in p.into_iter().enumerate() {
            out[[i, j]] = v;
        }
        perps.push(perp);
    }
    (out, perps)
}

/// Symmetric joint affinities `P_ij = (p_{j|i} + p_{i|j}) / 2n`.
pub fn joint_affinities(x: &Array2<f64>, perplexity: f64) -> Array2<f64> {
    let n = x.nrows();
    let (cond, _) = conditional_affinities(&pairwise_sq_distances(x), perplexity);
    let mut p = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            p[[i, j]] = (cond[[i, j]] + cond[[j, i]]) / (2.0 * n as f64);
        }
    }
    p
}

/// Unnormalized Student-t kernel rows and their total.
fn student_t(y: &Array2<f64>) -> (Vec<Vec<f64>>, f64) {
    let n = y.nrows();
    let rows: Vec<Vec<f64>> = y.rows().into_iter().map(|r| r.to_vec()).collect();
    let num: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| if i == j { 0.0 } else { 1.0 / (1.0 + squared_distance(&rows[i], &rows[j])) })
                .collect()
        })
        .collect();
    let row_sums: Vec<f64> = num.iter().map(|r| r.iter().sum()).collect();
    let z = row_sums.iter().sum();
    (num, z)
}

pub fn kl_divergence(p: &Array2<f64>, y: &Array2<f64>) -> f64 {
    let (num, z) = student_t(y);
    let n = p.nrows();
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            let pij = p[[i, j]];
            if i != j && pij > 0.0 {
                let q = (num[i][j] / z).max(f64::MIN_POSITIVE);
                kl += pij * (pij / q).ln();
            }
        }
    }
    kl
}

pub fn tsne(x: &Array2<f64>, params: &TsneParams) -> Result<TsneResult> {
    let n = x.nrows();
    if n < 4 {
        return Err(Error::InvalidParameter(format!("tsne needs at least 4 points, got {n}")));
    }
    if !(params.d_out == 2 || params.d_out == 3) {
        return Err(Error::InvalidParameter(format!("tsne d_out must be 2 or 3, got {}", params.d_out)));
    }
    if !(params.perplexity > 0.0 && params.perplexity < n as f64) {
        return Err(Error::InvalidParameter(format!(
            "perplexity {} must lie in (0, {n})",
            params.perplexity
        )));
    }
    let order = canonical_order(x);
    let xs = gather_rows(x, &order);
    let p = joint_affinities(&xs, params.perplexity);

    let mut rng = seeded(params.seed);
    let normal = Normal::new(0.0, 1e-2).expect("valid sd");
    let d = params.d_out;
    let mut y = Array2::from_shape_fn((n, d), |_| normal.sample(&mut rng));
    let mut update = Array2::<f64>::zeros((n, d));
    let mut gains = Array2::<f64>::ones((n, d));
    let lr = params
        .learning_rate
        .unwrap_or_else(|| (n as f64 / params.early_exaggeration / 4.0).max(50.0));

    let mut kl_trace = vec![(0, kl_divergence(&p, &y))];
    for iter in 0..params.n_iter {
        let exaggerate = iter < params.exaggeration_iters;
        let exag = if exaggerate { params.early_exaggeration } else { 1.0 };
        let momentum = if exaggerate { params.initial_momentum } else { params.final_momentum };

        let (num, z) = student_t(&y);
        let yr: Vec<Vec<f64>> = y.rows().into_iter().map(|r| r.to_vec()).collect();
        let grads: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut g = vec![0.0; d];
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let w = (exag * p[[i, j]] - num[i][j] / z) * num[i][j];
                    for (gk, (a, b)) in g.iter_mut().zip(yr[i].iter().zip(&yr[j])) {
                        *gk += 4.0 * w * (a - b);
                    }
                }
                g
            })
            .collect();

        for i in 0..n {
            for k in 0..d {
                let g = grads[i][k];
                let gain = &mut gains[[i, k]];
                *gain = if (g > 0.0) != (update[[i, k]] > 0.0) { *gain + 0.2 } else { *gain * 0.8 };
                *gain = gain.max(MIN_GAIN);
                update[[i, k]] = momentum * update[[i, k]] - lr * *gain * g;
                y[[i, k]] += update[[i, k]];
            }
        }
        let mean = y.mean_axis(ndarray::Axis(0)).expect("n > 0");
        for mut row in y.rows_mut() {
            row -= &mean;
        }
        if (iter + 1) % KL_EVERY == 0 || iter + 1 == params.n_iter {
            kl_trace.push((iter + 1, kl_divergence(&p, &y)));
        }
    }

    Ok(TsneResult {
        embedding: EmbeddingMatrix {
            data: scatter_rows(&y, &order),
            method: Method::Tsne,
            params: vec![
                ("d_out".into(), d as f64),
                ("perplexity".into(), params.perplexity),
                ("n_iter".into(), params.n_iter as f64),
                ("seed".into(), params.seed as f64),
            ],
        },
        kl_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn two_points_share_all_mass() {
        let x = array![[0.0, 0.0], [3.0, 4.0]];
        let p = joint_affinities(&x, 1.0);
        assert_eq!(p[[0, 1]], 0.5);
        assert_eq!(p[[1, 0]], 0.5);
        assert_eq!(p.sum(), 1.0);
    }

    #[test]
    fn regular_simplex_gives_uniform_conditionals() {
        // standard basis vectors are pairwise equidistant
        let x = Array2::<f64>::eye(5);
        for perp in [1.5, 2.0, 3.9] {
            let (cond, _) = conditional_affinities(&pairwise_sq_distances(&x), perp);
            for i in 0..5 {
                for j in 0..5 {
                    let expected = if i == j { 0.0 } else { 0.25 };
                    assert!((cond[[i, j]] - expected).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn parameter_validation() {
        let x = Array2::<f64>::zeros((3, 2));
        assert!(tsne(&x, &TsneParams::default()).is_err());
        let x = Array2::from_shape_fn((10, 2), |(i, j)| (i * 3 + j) as f64);
        assert!(tsne(&x, &TsneParams { perplexity: 10.0, ..TsneParams::default() }).is_err());
        assert!(tsne(&x, &TsneParams { d_out: 4, perplexity: 3.0, ..TsneParams::default() }).is_err());
    }
}

#![allow(dead_code)]

use std::collections::BTreeSet;

use melc_core::data::{Cell, CellTable, Diagnosis, SampleInfo, SampleManifest};
use melc_core::grand::{grand_loss_and_grad, Mlp};
use ndarray::Array2;
use rand::Rng;

/// τ-b by counting every pair.
pub fn brute_tau(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let (mut c, mut d, mut tx, mut ty) = (0i64, 0i64, 0u64, 0u64);
    for i in 0..n {
        for j in i + 1..n {
            let a = x[i] - x[j];
            let b = y[i] - y[j];
            if a == 0.0 {
                tx += 1;
            }
            if b == 0.0 {
                ty += 1;
            }
            if a != 0.0 && b != 0.0 {
                if (a > 0.0) == (b > 0.0) {
                    c += 1;
                } else {
                    d += 1;
                }
            }
        }
    }
    let pairs = (n * (n - 1) / 2) as u64;
    let denom = ((pairs - tx) as f64 * (pairs - ty) as f64).sqrt();
    if denom == 0.0 {
        f64::NAN
    } else {
        (c - d) as f64 / denom
    }
}

/// Probability that a random positive outscores a random negative, ties half.
pub fn brute_auroc(labels: &[u8], scores: &[f64]) -> f64 {
    let mut halves = 0u64;
    let (mut p, mut n) = (0u64, 0u64);
    for (i, &yi) in labels.iter().enumerate() {
        if yi == 1 {
            p += 1;
        } else {
            n += 1;
        }
        if yi != 1 {
            continue;
        }
        for (j, &yj) in labels.iter().enumerate() {
            if yj == 0 {
                if scores[i] > scores[j] {
                    halves += 2;
                } else if scores[i] == scores[j] {
                    halves += 1;
                }
            }
        }
    }
    if p == 0 || n == 0 {
        return f64::NAN;
    }
    (halves as f64 / 2.0) / (p as f64 * n as f64)
}

/// Indices of the `k` largest scores, ties to the lower index.
pub fn top_k(scores: &[(usize, f64)], k: usize) -> Vec<usize> {
    let mut v = scores.to_vec();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    v.into_iter().take(k).map(|(j, _)| j).collect()
}

pub fn exhaustive_feature_knn(table: &CellTable, k: usize) -> Vec<Vec<usize>> {
    let cells = table.cells();
    (0..cells.len())
        .map(|i| {
            let s: Vec<(usize, f64)> = (0..cells.len())
                .filter(|&j| j != i)
                .map(|j| {
                    let t = brute_tau(&cells[i].features, &cells[j].features);
                    (j, if t.is_nan() { f64::NEG_INFINITY } else { t })
                })
                .collect();
            top_k(&s, k)
        })
        .collect()
}

pub fn exhaustive_spatial_knn(table: &CellTable, k: usize) -> Vec<Vec<usize>> {
    let cells = table.cells();
    (0..cells.len())
        .map(|i| {
            let s: Vec<(usize, f64)> = (0..cells.len())
                .filter(|&j| j != i && cells[j].sample_id == cells[i].sample_id)
                .map(|j| {
                    let dx = cells[i].x - cells[j].x;
                    let dy = cells[i].y - cells[j].y;
                    (j, -(dx * dx + dy * dy))
                })
                .collect();
            top_k(&s, k)
        })
        .collect()
}

pub fn sorted(v: &[usize]) -> Vec<usize> {
    let mut v = v.to_vec();
    v.sort_unstable();
    v
}

pub fn union_edges(directed: &[Vec<usize>]) -> BTreeSet<(usize, usize)> {
    let mut s = BTreeSet::new();
    for (u, list) in directed.iter().enumerate() {
        for &v in list {
            s.insert((u.min(v), u.max(v)));
        }
    }
    s
}

/// Cells with small-integer features (many ties) spread over `n_samples`.
pub fn random_table(rng: &mut impl Rng, n: usize, d: usize, n_samples: usize) -> CellTable {
    let cells = (0..n)
        .map(|i| Cell {
            cell_id: i as u64 + 1,
            sample_id: format!("S{}", i % n_samples),
            x: rng.random_range(0..20) as f64,
            y: rng.random_range(0..20) as f64,
            label: rng.random_range(0..2),
            features: (0..d).map(|_| rng.random_range(0..4) as f64).collect(),
        })
        .collect();
    CellTable::new(d, cells).unwrap()
}

pub fn manifest(diagnoses: &[Diagnosis]) -> SampleManifest {
    SampleManifest {
        samples: diagnoses
            .iter()
            .enumerate()
            .map(|(i, &d)| SampleInfo {
                sample_id: format!("P{i:03}"),
                diagnosis: d,
                n_channels: 40,
                pixel_size_um: 0.45,
            })
            .collect(),
    }
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues and eigenvectors (as columns), unsorted.
pub fn jacobi_eigen(a: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = a.nrows();
    let mut a = a.clone();
    let mut v = Array2::<f64>::eye(n);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[[i, j]] * a[[i, j]])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[[p, q]].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * a[[p, q]]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[[i, i]]).collect(), v)
}

/// Largest |relative error| of the analytic gradient against central
/// differences, on fixed augmented inputs.
pub fn gradient_check(
    params: &Mlp,
    inputs: &[Array2<f64>],
    labels: &[u8],
    mask: &[bool],
    lambda: f64,
    temperature: f64,
    step: f64,
) -> f64 {
    let (_, grad) = grand_loss_and_grad(params, inputs, labels, mask, lambda, temperature);
    let analytic = grad.to_flat();
    let flat = params.to_flat();
    let d = params.w1.nrows();
    let h = params.hidden_width();
    let loss_at = |theta: &[f64]| {
        let p = Mlp::from_flat(d, h, theta).unwrap();
        grand_loss_and_grad(&p, inputs, labels, mask, lambda, temperature).0
    };
    let mut worst: f64 = 0.0;
    for i in 0..flat.len() {
        let mut plus = flat.clone();
        let mut minus = flat.clone();
        plus[i] += step;
        minus[i] -= step;
        let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * step);
        let scale = numeric.abs().max(analytic[i].abs()).max(1e-6);
        worst = worst.max((numeric - analytic[i]).abs() / scale);
    }
    worst
}

use ndarray::Array2;
use rand::Rng;

use crate::graph::PropagationOperator;

/// Per-row scale factors for one DropNode draw: 0 with probability `rate`,
/// otherwise `1 / (1 − rate)`.
pub fn drop_node_scales(n: usize, rate: f64, rng: &mut impl Rng) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..n)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

/// Zeroes whole rows of `x` with probability `rate` and rescales the
/// survivors so the expectation is unchanged.
pub fn drop_node(x: &Array2<f64>, rate: f64, rng: &mut impl Rng) -> Array2<f64> {
    let scales = drop_node_scales(x.nrows(), rate, rng);
    scale_rows(x, &scales)
}

pub(crate) fn scale_rows(x: &Array2<f64>, scales: &[f64]) -> Array2<f64> {
    let mut out = x.clone();
    for (mut row, s) in out.rows_mut().into_iter().zip(scales) {
        row *= *s;
    }
    out
}

/// Mixed-order smoothing `(1/(K+1)) Σ_{k=0..K} Â^k x`, by repeated sparse
/// products.
pub fn propagate(x: &Array2<f64>, op: &PropagationOperator, order: usize) -> Array2<f64> {
    let mut acc = x.clone();
    let mut cur = x.clone();
    for _ in 0..order {
        cur = op.apply(&cur);
        acc += &cur;
    }
    acc *= 1.0 / (order + 1) as f64;
    acc
}

/// Temperature sharpening `p_c^{1/T} / Σ p^{1/T}`.
pub fn sharpen(p: &[f64], temperature: f64) -> Vec<f64> {
    let powered: Vec<f64> = p.iter().map(|v| v.powf(1.0 / temperature)).collect();
    let z: f64 = powered.iter().sum();
    powered.iter().map(|v| v / z).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{normalized_adjacency, SparseGraph};
    use crate::rng::seeded;
    use ndarray::array;

    #[test]
    fn zero_rate_is_identity() {
        let x = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(drop_node(&x, 0.0, &mut seeded(1)), x);
    }

    #[test]
    fn survivors_are_rescaled() {
        let x = array![[2.0, 4.0]];
        let mut rng = seeded(0);
        let mut seen = false;
        for _ in 0..50 {
            let out = drop_node(&x, 0.5, &mut rng);
            if out[[0, 0]] != 0.0 {
                assert_eq!(out, array![[4.0, 8.0]]);
                seen = true;
            } else {
                assert_eq!(out, array![[0.0, 0.0]]);
            }
        }
        assert!(seen);
    }

    #[test]
    fn propagate_examples() {
        let pair = normalized_adjacency(&SparseGraph::from_edges(2, &[(0, 1)]).unwrap());
        let x = Array2::<f64>::eye(2);
        assert_eq!(propagate(&x, &pair, 0), x);
        let y = propagate(&x, &pair, 1);
        let want = array![[0.75, 0.25], [0.25, 0.75]];
        assert!((&y - &want).iter().all(|v| v.abs() < 1e-15));

        let single = normalized_adjacency(&SparseGraph::from_edges(1, &[]).unwrap());
        let x = array![[3.5, -1.0]];
        for k in 0..5 {
            assert_eq!(propagate(&x, &single, k), x);
        }
    }

    #[test]
    fn constant_column_preserved_on_regular_graph() {
        // 6-cycle: every degree is 2
        let edges: Vec<(usize, usize)> = (0..6).map(|i| (i, (i + 1) % 6)).map(|(a, b)| (a.min(b), a.max(b))).collect();
        let op = normalized_adjacency(&SparseGraph::from_edges(6, &edges).unwrap());
        let x = Array2::from_elem((6, 1), 2.5);
        let y = propagate(&x, &op, 3);
        for v in y.iter() {
            assert!((v - 2.5).abs() < 1e-14);
        }
    }

    #[test]
    fn sharpen_examples() {
        assert_eq!(sharpen(&[0.5, 0.5], 0.3), vec![0.5, 0.5]);
        let s = sharpen(&[0.9, 0.1], 0.5);
        assert!((s[0] - 0.81 / 0.82).abs() < 1e-12);
        assert!((s[0] - 0.9878).abs() < 1e-4);
        assert!((s[1] - 0.0122).abs() < 1e-4);
    }
}

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2};

use super::{canonical_order, EmbeddingMatrix, Method};
use crate::error::{Error, Result};

/// Principal-component projection and the fitted axes.
#[derive(Debug, Clone)]
pub struct Pca {
    pub embedding: EmbeddingMatrix,
    /// d × d_out, orthonormal columns, eigenvalue-descending.
    pub components: Array2<f64>,
    pub explained_variance: Vec<f64>,
    pub mean: Array1<f64>,
}

impl Pca {
    /// Maps projections back to the input space.
    pub fn reconstruct(&self) -> Array2<f64> {
        let mut x = self.embedding.data.dot(&self.components.t());
        for mut row in x.rows_mut() {
            row += &self.mean;
        }
        x
    }
}

/// Projects column-centered `x` onto its top `d_out` principal axes. Each axis
/// is signed so that its largest-magnitude loading is positive.
pub fn pca(x: &Array2<f64>, d_out: usize) -> Result<Pca> {
    let (n, d) = x.dim();
    if d_out == 0 || d_out > n.min(d) {
        return Err(Error::InvalidParameter(format!(
            "pca d_out = {d_out} outside 1..={}",
            n.min(d)
        )));
    }
    // Accumulate in canonical row order so row permutations give identical axes.
    let order = canonical_order(x);
    let mut mean = Array1::<f64>::zeros(d);
    for &i in &order {
        mean += &x.row(i);
    }
    mean /= n as f64;
    let mut centered = Array2::<f64>::zeros((n, d));
    for (k, &i) in order.iter().enumerate() {
        let mut row = centered.row_mut(k);
        row.assign(&x.row(i));
        row -= &mean;
    }
    let denom = (n.max(2) - 1) as f64;
    let cov = centered.t().dot(&centered) / denom;

    let eig = SymmetricEigen::new(DMatrix::from_fn(d, d, |i, j| cov[[i, j]]));
    let mut idx: Vec<usize> = (0..d).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let mut components = Array2::<f64>::zeros((d, d_out));
    let mut explained_variance = Vec::with_capacity(d_out);
    for (c, &k) in idx.iter().take(d_out).enumerate() {
        let v = eig.eigenvectors.column(k);
        let mut pivot = 0;
        for r in 1..d {
            if v[r].abs() > v[pivot].abs() {
                pivot = r;
            }
        }
        let s = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..d {
            components[[r, c]] = s * v[r];
        }
        explained_variance.push(eig.eigenvalues[k].max(0.0));
    }

    let mut data = Array2::<f64>::zeros((n, d_out));
    let projected = centered.dot(&components);
    for (k, &i) in order.iter().enumerate() {
        data.row_mut(i).assign(&projected.row(k));
    }
    Ok(Pca {
        embedding: EmbeddingMatrix {
            data,
            method: Method::Pca,
            params: vec![("d_out".into(), d_out as f64)],
        },
        components,
        explained_variance,
        mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn collinear_points_reconstruct_from_one_component() {
        let x = array![[0.0, 0.0], [1.0, 2.0], [2.0, 4.0], [-1.5, -3.0], [3.0, 6.0]];
        let p = pca(&x, 1).unwrap();
        let err = (&p.reconstruct() - &x).mapv(f64::abs).fold(0.0_f64, |a, b| a.max(*b));
        assert!(err < 1e-9, "{err}");
        // y = 2x: axis (1, 2)/√5 with positive largest loading
        assert!((p.components[[1, 0]] - 2.0 / 5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn output_columns_are_centered() {
        let x = array![[1.0, 2.0, 0.5], [3.0, -1.0, 2.0], [0.0, 0.0, 1.0], [5.0, 1.0, -2.0]];
        let p = pca(&x, 2).unwrap();
        for col in p.embedding.data.columns() {
            assert!(col.sum().abs() < 1e-9);
        }
    }

    #[test]
    fn out_of_range_dimension() {
        let x = Array2::<f64>::zeros((3, 2));
        assert!(pca(&x, 0).is_err());
        assert!(pca(&x, 3).is_err());
    }
}

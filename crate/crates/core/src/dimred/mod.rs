//! Dimensionality reduction of per-cell profiles: PCA, exact tSNE and UMAP.
//!
//! The stochastic methods run on a canonical (lexicographic) ordering of the
//! input rows, so permuting the input permutes the output identically.

mod pca;
mod tsne;
mod umap;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{load_table_with_prefix, save_table_with_prefix, CellTable};
use crate::error::{Error, Result};

pub use pca::{pca, Pca};
pub use tsne::{conditional_affinities, joint_affinities, kl_divergence, tsne, TsneParams, TsneResult};
pub use umap::{fit_curve, fuzzy_simplicial_set, fuzzy_union, umap, FuzzySet, UmapParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    None,
    Pca,
    Tsne,
    Umap,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::None => "none",
            Method::Pca => "pca",
            Method::Tsne => "tsne",
            Method::Umap => "umap",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Method::None),
            "pca" => Ok(Method::Pca),
            "tsne" => Ok(Method::Tsne),
            "umap" => Ok(Method::Umap),
            other => Err(Error::InvalidParameter(format!("unknown reduction `{other}`"))),
        }
    }
}

/// Reduced per-cell features; row `i` belongs to cell `i` of the source table.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub data: Array2<f64>,
    pub method: Method,
    pub params: Vec<(String, f64)>,
}

impl EmbeddingMatrix {
    pub fn n_rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }
}

/// Reduction settings shared by the CLI and the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReduceConfig {
    pub method: Method,
    pub dim: usize,
    pub seed: u64,
    #[serde(default = "default_perplexity")]
    pub perplexity: f64,
    #[serde(default = "default_tsne_iter")]
    pub tsne_iter: usize,
    #[serde(default = "default_neighbors")]
    pub n_neighbors: usize,
    #[serde(default = "default_min_dist")]
    pub min_dist: f64,
    #[serde(default = "default_epochs")]
    pub n_epochs: usize,
}

fn default_perplexity() -> f64 {
    30.0
}
fn default_tsne_iter() -> usize {
    1000
}
fn default_neighbors() -> usize {
    15
}
fn default_min_dist() -> f64 {
    0.1
}
fn default_epochs() -> usize {
    200
}

impl ReduceConfig {
    /// Defaults per method: UMAP 16 dimensions, tSNE 2, PCA 16.
    pub fn new(method: Method, seed: u64) -> Self {
        let dim = match method {
            Method::Tsne => 2,
            _ => 16,
        };
        Self {
            method,
            dim,
            seed,
            perplexity: default_perplexity(),
            tsne_iter: default_tsne_iter(),
            n_neighbors: default_neighbors(),
            min_dist: default_min_dist(),
            n_epochs: default_epochs(),
        }
    }
}

pub fn reduce(x: &Array2<f64>, config: &ReduceConfig) -> Result<EmbeddingMatrix> {
    match config.method {
        Method::None => Ok(EmbeddingMatrix {
            data: x.clone(),
            method: Method::None,
            params: Vec::new(),
        }),
        Method::Pca => Ok(pca(x, config.dim)?.embedding),
        Method::Tsne => Ok(tsne(
            x,
            &TsneParams {
                d_out: config.dim,
                perplexity: config.perplexity,
                n_iter: config.tsne_iter,
                seed: config.seed,
                ..TsneParams::default()
            },
        )?
        .embedding),
        Method::Umap => umap(
            x,
            &UmapParams {
                d_out: config.dim,
                n_neighbors: config.n_neighbors,
                min_dist: config.min_dist,
                n_epochs: config.n_epochs,
                seed: config.seed,
                ..UmapParams::default()
            },
        ),
    }
}

/// Column-wise z-scores; constant columns map to zero.
pub fn standardize(x: &Array2<f64>) -> Array2<f64> {
    let n = x.nrows().max(1) as f64;
    let mut out = x.clone();
    for mut col in out.columns_mut() {
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        col.mapv_inplace(|v| if sd > 0.0 { (v - mean) / sd } else { 0.0 });
    }
    out
}

/// Row order sorting rows lexicographically; identical rows keep input order.
pub(crate) fn canonical_order(x: &Array2<f64>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    order.sort_by(|&a, &b| {
        x.row(a)
            .iter()
            .zip(x.row(b).iter())
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

pub(crate) fn gather_rows(x: &Array2<f64>, order: &[usize]) -> Array2<f64> {
    x.select(ndarray::Axis(0), order)
}

/// Inverse of [`gather_rows`]: row `order[i]` of the result is row `i` of `y`.
pub(crate) fn scatter_rows(y: &Array2<f64>, order: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros(y.raw_dim());
    for (i, &dst) in order.iter().enumerate() {
        out.row_mut(dst).assign(&y.row(i));
    }
    out
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// Embedding file: the cell-table layout with columns `e0..e{d-1}`.
pub fn save_embedding(table: &CellTable, embedding: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let t = table.with_features(&embedding.data)?;
    save_table_with_prefix(&t, path.as_ref(), 'e')
}

pub fn load_embedding(path: impl AsRef<Path>) -> Result<CellTable> {
    load_table_with_prefix(path.as_ref(), 'e')
}

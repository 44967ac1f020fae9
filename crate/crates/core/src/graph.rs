//! Cell graphs: Kendall-τ feature neighbourhoods, per-sample spatial
//! neighbourhoods and the normalized propagation operator.

use std::cmp::Ordering;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::CellTable;
use crate::error::{Error, Result};

/// Undirected graph in compressed sparse row form. Every edge is stored in
/// both directions; neighbour lists are sorted and free of self-loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseGraph {
    offsets: Vec<usize>,
    indices: Vec<usize>,
}

impl SparseGraph {
    /// Symmetrizes directed neighbour lists by union.
    pub fn from_directed(neighbors: &[Vec<usize>]) -> Self {
        let n = neighbors.len();
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (u, list) in neighbors.iter().enumerate() {
            for &v in list {
                if u != v {
                    adj[u].push(v);
                    adj[v].push(u);
                }
            }
        }
        Self::from_adjacency(adj)
    }

    /// Builds from undirected `u v` pairs.
    pub fn from_edges(n_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n_nodes];
        for &(u, v) in edges {
            if u >= n_nodes || v >= n_nodes {
                return Err(Error::InvalidInput(format!("edge ({u}, {v}) outside {n_nodes} nodes")));
            }
            if u == v {
                return Err(Error::InvalidInput(format!("self-loop on node {u}")));
            }
            adj[u].push(v);
            adj[v].push(u);
        }
        Ok(Self::from_adjacency(adj))
    }

    fn from_adjacency(mut adj: Vec<Vec<usize>>) -> Self {
        let mut offsets = Vec::with_capacity(adj.len() + 1);
        offsets.push(0);
        let mut indices = Vec::new();
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
            indices.extend_from_slice(list);
            offsets.push(indices.len());
        }
        Self { offsets, indices }
    }

    pub fn n_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn n_edges(&self) -> usize {
        self.indices.len() / 2
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.indices[self.offsets[u]..self.offsets[u + 1]]
    }

    pub fn degree(&self, u: usize) -> usize {
        self.offsets[u + 1] - self.offsets[u]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Undirected edges as `(u, v)` with `u < v`, ascending.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.n_nodes())
            .flat_map(|u| self.neighbors(u).iter().filter(move |&&v| v > u).map(move |&v| (u, v)))
            .collect()
    }

    /// Text format: `n_nodes m_edges`, then one `u v` line per edge.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let edges = self.edges();
        let res: std::io::Result<()> = (|| {
            writeln!(w, "{} {}", self.n_nodes(), edges.len())?;
            for (u, v) in edges {
                writeln!(w, "{u} {v}")?;
            }
            w.flush()
        })();
        res.map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::parse(path, 1, "empty graph file"))?
            .map_err(|e| Error::io(path, e))?;
        let parse_pair = |line: &str, lineno: usize| -> Result<(usize, usize)> {
            let mut it = line.split_whitespace().map(str::parse::<usize>);
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(a)), Some(Ok(b)), None) => Ok((a, b)),
                _ => Err(Error::parse(path, lineno, format!("expected two integers, got `{line}`"))),
            }
        };
        let (n, m) = parse_pair(&header, 1)?;
        let mut edges = Vec::with_capacity(m);
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let (u, v) = parse_pair(&line, i + 2)?;
            if u >= v {
                return Err(Error::parse(path, i + 2, format!("edge `{u} {v}` must have u < v")));
            }
            edges.push((u, v));
        }
        if edges.len() != m {
            return Err(Error::parse(path, 1, format!("header declares {m} edges, found {}", edges.len())));
        }
        Self::from_edges(n, &edges)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphMode {
    Feature,
    Spatial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphConfig {
    pub k: usize,
    pub mode: GraphMode,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            k: 10,
            mode: GraphMode::Spatial,
        }
    }
}

pub fn build_graph(table: &CellTable, config: &GraphConfig) -> Result<SparseGraph> {
    match config.mode {
        GraphMode::Feature => feature_knn(table, config.k),
        GraphMode::Spatial => spatial_knn(table, config.k),
    }
}

fn sign(a: f64, b: f64) -> i8 {
    match a.partial_cmp(&b) {
        Some(Ordering::Greater) => 1,
        Some(Ordering::Less) => -1,
        _ => 0,
    }
}

/// τ-b from pair counts. NaN when either side is constant.
fn tau_from_counts(concordant_minus_discordant: i64, pairs: u64, ties_x: u64, ties_y: u64) -> f64 {
    let denom = ((pairs - ties_x) as f64 * (pairs - ties_y) as f64).sqrt();
    if denom == 0.0 {
        f64::NAN
    } else {
        concordant_minus_discordant as f64 / denom
    }
}

/// Kendall's τ-b rank correlation, by direct enumeration of all pairs.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch(format!("lengths {} and {}", x.len(), y.len())));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::InvalidInput("kendall_tau needs at least two observations".into()));
    }
    let mut s: i64 = 0;
    let (mut tx, mut ty) = (0u64, 0u64);
    for i in 0..n {
        for j in i + 1..n {
            let a = sign(x[i], x[j]);
            let b = sign(y[i], y[j]);
            s += i64::from(a * b);
            tx += u64::from(a == 0);
            ty += u64::from(b == 0);
        }
    }
    let pairs = (n * (n - 1) / 2) as u64;
    Ok(tau_from_counts(s, pairs, tx, ty))
}

/// Pairwise order of one vector packed into bitsets: for each pair `i < j`,
/// a bit in `greater` when `x_i > x_j` and in `less` when `x_i < x_j`.
/// τ between two signatures reduces to popcounts and equals [`kendall_tau`]
/// exactly, since both compute the same integer counts.
#[derive(Debug, Clone)]
pub struct RankSignature {
    greater: Vec<u64>,
    less: Vec<u64>,
    ties: u64,
}

impl RankSignature {
    pub fn new(x: &[f64]) -> Self {
        let n = x.len();
        let pairs = n * n.saturating_sub(1) / 2;
        let words = pairs.div_ceil(64);
        let mut greater = vec![0u64; words];
        let mut less = vec![0u64; words];
        let mut bit = 0usize;
        let mut ties = 0u64;
        for i in 0..n {
            for j in i + 1..n {
                match sign(x[i], x[j]) {
                    1 => greater[bit / 64] |= 1u64 << (bit % 64),
                    -1 => less[bit / 64] |= 1u64 << (bit % 64),
                    _ => ties += 1,
                }
                bit += 1;
            }
        }
        Self { greater, less, ties }
    }

    pub fn tau(&self, other: &Self, pairs: u64) -> f64 {
        let mut s: i64 = 0;
        for w in 0..self.greater.len() {
            let (gx, lx, gy, ly) = (self.greater[w], self.less[w], other.greater[w], other.less[w]);
            s += i64::from((gx & gy).count_ones() + (lx & ly).count_ones());
            s -= i64::from((gx & ly).count_ones() + (lx & gy).count_ones());
        }
        tau_from_counts(s, pairs, self.ties, other.ties)
    }
}

/// Keeps the `k` best candidates, best first. Candidates must arrive in
/// ascending index order so equal scores keep the lower index.
pub(crate) struct TopK {
    k: usize,
    items: Vec<(f64, usize)>,
}

impl TopK {
    pub(crate) fn new(k: usize) -> Self {
        Self {
            k,
            items: Vec::with_capacity(k + 1),
        }
    }

    /// `score`: higher is better.
    pub(crate) fn offer(&mut self, score: f64, idx: usize) {
        if self.items.len() == self.k && score <= self.items[self.k - 1].0 {
            return;
        }
        let pos = self.items.partition_point(|(s, _)| *s >= score);
        self.items.insert(pos, (score, idx));
        self.items.truncate(self.k);
    }

    pub(crate) fn into_items(self) -> Vec<(f64, usize)> {
        self.items
    }

    pub(crate) fn indices(self) -> Vec<usize> {
        self.items.into_iter().map(|(_, i)| i).collect()
    }
}

fn check_k(k: usize, available: usize, scope: &str) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    if available < k + 1 {
        return Err(Error::InvalidInput(format!(
            "{scope} has {available} cells, need at least k + 1 = {}",
            k + 1
        )));
    }
    Ok(())
}

/// Directed feature-similarity neighbours: for every cell, the `k` cells with
/// the highest Kendall τ over stain profiles, across the whole dataset.
/// Constant profiles (τ undefined) rank last; ties go to the lower index.
pub fn feature_knn_directed(table: &CellTable, k: usize) -> Result<Vec<Vec<usize>>> {
    let n = table.len();
    check_k(k, n, "dataset")?;
    let d = table.n_features();
    let pairs = (d * d.saturating_sub(1) / 2) as u64;
    let sigs: Vec<RankSignature> = table
        .cells()
        .par_iter()
        .map(|c| RankSignature::new(&c.features))
        .collect();
    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            let mut top = TopK::new(k);
            for j in (0..n).filter(|&j| j != i) {
                let t = sigs[i].tau(&sigs[j], pairs);
                top.offer(if t.is_nan() { f64::NEG_INFINITY } else { t }, j);
            }
            top.indices()
        })
        .collect())
}

pub fn feature_knn(table: &CellTable, k: usize) -> Result<SparseGraph> {
    Ok(SparseGraph::from_directed(&feature_knn_directed(table, k)?))
}

/// Directed spatial neighbours: Euclidean kNN over centroids within each
/// sample. Ties go to the lower index.
pub fn spatial_knn_directed(table: &CellTable, k: usize) -> Result<Vec<Vec<usize>>> {
    let groups = table.rows_by_sample();
    for (sample, rows) in &groups {
        check_k(k, rows.len(), &format!("sample `{sample}`"))?;
    }
    let cells = table.cells();
    let mut out = vec![Vec::new(); table.len()];
    for (_, rows) in groups {
        let lists: Vec<Vec<usize>> = rows
            .par_iter()
            .map(|&i| {
                let mut top = TopK::new(k);
                for &j in rows.iter().filter(|&&j| j != i) {
                    let dx = cells[i].x - cells[j].x;
                    let dy = cells[i].y - cells[j].y;
                    top.offer(-(dx * dx + dy * dy), j);
                }
                top.indices()
            })
            .collect();
        for (&i, list) in rows.iter().zip(lists) {
            out[i] = list;
        }
    }
    Ok(out)
}

pub fn spatial_knn(table: &CellTable, k: usize) -> Result<SparseGraph> {
    Ok(SparseGraph::from_directed(&spatial_knn_directed(table, k)?))
}

/// Symmetric sparse operator `D̃^{-1/2} (A + I) D̃^{-1/2}`, where `D̃` holds
/// the degrees of `A + I`.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationOperator {
    offsets: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl PropagationOperator {
    pub fn n(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[i]..self.offsets[i + 1];
        self.indices[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|(c, _)| *c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let n = self.n();
        let mut m = Array2::zeros((n, n));
        for i in 0..n {
            for (j, v) in self.row(i) {
                m[[i, j]] = v;
            }
        }
        m
    }

    /// `self · x` for a dense n × d matrix. Rows are computed independently
    /// with a fixed summation order, so the result does not depend on the
    /// thread count.
    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        assert_eq!(x.nrows(), self.n(), "operator/matrix size mismatch");
        let d = x.ncols();
        let src = x.as_standard_layout();
        let src = src.as_slice().expect("standard layout");
        let mut out = vec![0.0; self.n() * d];
        out.par_chunks_mut(d.max(1)).enumerate().for_each(|(i, dst)| {
            for (j, w) in self.row(i) {
                let s = &src[j * d..(j + 1) * d];
                for (o, v) in dst.iter_mut().zip(s) {
                    *o += w * v;
                }
            }
        });
        Array2::from_shape_vec((self.n(), d), out).expect("shape")
    }
}

pub fn normalized_adjacency(graph: &SparseGraph) -> PropagationOperator {
    let n = graph.n_nodes();
    let inv_sqrt: Vec<f64> = (0..n).map(|u| 1.0 / ((graph.degree(u) + 1) as f64).sqrt()).collect();
    let mut offsets = Vec::with_capacity(n + 1);
    let mut indices = Vec::with_capacity(graph.indices.len() + n);
    let mut values = Vec::with_capacity(graph.indices.len() + n);
    offsets.push(0);
    for u in 0..n {
        let mut self_done = false;
        for &v in graph.neighbors(u) {
            if !self_done && v > u {
                indices.push(u);
                values.push(inv_sqrt[u] * inv_sqrt[u]);
                self_done = true;
            }
            indices.push(v);
            values.push(inv_sqrt[u] * inv_sqrt[v]);
        }
        if !self_done {
            indices.push(u);
            values.push(inv_sqrt[u] * inv_sqrt[u]);
        }
        offsets.push(indices.len());
    }
    PropagationOperator {
        offsets,
        indices,
        values,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Cell;

    fn table_from(features: &[&[f64]], coords: &[(f64, f64)], samples: &[&str]) -> CellTable {
        let d = features.first().map_or(1, |f| f.len());
        let cells = (0..features.len().max(coords.len()))
            .map(|i| Cell {
                cell_id: i as u64,
                sample_id: samples.get(i).unwrap_or(&"s").to_string(),
                x: coords.get(i).map_or(0.0, |c| c.0),
                y: coords.get(i).map_or(0.0, |c| c.1),
                label: 0,
                features: features.get(i).map_or(vec![0.0; d], |f| f.to_vec()),
            })
            .collect();
        CellTable::new(d, cells).unwrap()
    }

    #[test]
    fn tau_examples() {
        assert_eq!(kendall_tau(&[1., 2., 3.], &[1., 2., 3.]).unwrap(), 1.0);
        assert_eq!(kendall_tau(&[1., 2., 3.], &[3., 2., 1.]).unwrap(), -1.0);
        let t = kendall_tau(&[1., 2., 3., 4.], &[2., 1., 4., 3.]).unwrap();
        assert!((t - 1.0 / 3.0).abs() < 1e-15);
        assert!(kendall_tau(&[1., 1., 1.], &[1., 2., 3.]).unwrap().is_nan());
        assert!(kendall_tau(&[1.], &[1.]).is_err());
        assert!(kendall_tau(&[1., 2.], &[1.]).is_err());
    }

    #[test]
    fn signature_matches_direct_tau() {
        let x = [3.0, 1.0, 1.0, 7.0, 2.0];
        let y = [1.0, 1.0, 5.0, 0.5, 2.0];
        let direct = kendall_tau(&x, &y).unwrap();
        let fast = RankSignature::new(&x).tau(&RankSignature::new(&y), 10);
        assert_eq!(direct, fast);
    }

    #[test]
    fn feature_knn_three_cells() {
        let t = table_from(&[&[1., 2., 3.], &[1., 2., 4.], &[3., 2., 1.]], &[], &[]);
        let directed = feature_knn_directed(&t, 1).unwrap();
        assert_eq!(directed, vec![vec![1], vec![0], vec![0]]);
        let g = SparseGraph::from_directed(&directed);
        assert_eq!(g.edges(), vec![(0, 1), (0, 2)]);
    }

    #[test]
    fn feature_knn_complete_when_k_is_n_minus_one() {
        let t = table_from(&[&[1., 2., 3.], &[1., 3., 2.], &[3., 2., 1.], &[2., 1., 3.]], &[], &[]);
        let g = feature_knn(&t, 3).unwrap();
        assert_eq!(g.n_edges(), 6);
        assert!(feature_knn(&t, 4).is_err());
    }

    #[test]
    fn spatial_knn_line() {
        let t = table_from(&[], &[(0., 0.), (1., 0.), (5., 0.)], &[]);
        let directed = spatial_knn_directed(&t, 1).unwrap();
        assert_eq!(directed, vec![vec![1], vec![0], vec![1]]);
        assert_eq!(SparseGraph::from_directed(&directed).edges(), vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn spatial_knn_never_crosses_samples() {
        let coords = [(0., 0.), (1., 0.), (2., 0.), (0.1, 0.), (1.1, 0.), (2.1, 0.)];
        let t = table_from(&[], &coords, &["a", "a", "a", "b", "b", "b"]);
        let g = spatial_knn(&t, 2).unwrap();
        for (u, v) in g.edges() {
            assert_eq!(t.cells()[u].sample_id, t.cells()[v].sample_id);
        }
        let small = table_from(&[], &coords[..4], &["a", "a", "a", "b"]);
        assert!(spatial_knn(&small, 1).is_err());
    }

    #[test]
    fn normalized_adjacency_examples() {
        let single = normalized_adjacency(&SparseGraph::from_edges(1, &[]).unwrap());
        assert_eq!(single.to_dense(), ndarray::array![[1.0]]);

        let pair = normalized_adjacency(&SparseGraph::from_edges(2, &[(0, 1)]).unwrap()).to_dense();
        for v in pair.iter() {
            assert!((v - 0.5).abs() < 1e-15);
        }

        let tri = normalized_adjacency(&SparseGraph::from_edges(3, &[(0, 1), (1, 2), (0, 2)]).unwrap());
        for v in tri.to_dense().iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn graph_file_round_trip() {
        let g = SparseGraph::from_edges(5, &[(3, 1), (0, 4), (1, 2)]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.txt");
        g.save(&p).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "5 3\n0 4\n1 2\n1 3\n");
        assert_eq!(SparseGraph::load(&p).unwrap(), g);
        fs::write(&p, "3 1\n2 1\n").unwrap();
        assert!(SparseGraph::load(&p).is_err());
    }
}

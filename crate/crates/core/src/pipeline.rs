//! End-to-end experiment runner shared by the CLI: graph construction,
//! reduction, model training and test-split evaluation.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::baselines::{fit_gbdt, fit_random_forest, predict_ensemble, EnsembleModel, ForestConfig, GbdtConfig};
use crate::data::{make_split, Bucket, CellTable, Split};
use crate::dimred::{reduce, standardize, EmbeddingMatrix, Method, ReduceConfig};
use crate::error::{Error, Result};
use crate::eval::{compute_metrics, MetricsReport, RunSummary};
use crate::grand::{self, GrandHyper, GrandModel, Prediction};
use crate::graph::{build_graph, normalized_adjacency, GraphConfig, GraphMode, PropagationOperator};
use crate::rng::derive_seed;
use crate::simgen::{generate_dataset, SimConfig};

pub const DEFAULT_SPLIT: (f64, f64, f64) = (0.7, 0.1, 0.2);

/// Row masks for the three buckets.
#[derive(Debug, Clone, PartialEq)]
pub struct Masks {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
    pub test: Vec<bool>,
}

impl Masks {
    pub fn new(table: &CellTable, split: &Split) -> Self {
        let buckets = split.row_buckets(table);
        let pick = |b: Bucket| buckets.iter().map(|x| *x == Some(b)).collect();
        Self {
            train: pick(Bucket::Train),
            val: pick(Bucket::Val),
            test: pick(Bucket::Test),
        }
    }
}

pub fn select(mask: &[bool]) -> Vec<usize> {
    mask.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect()
}

/// Raw profiles for `Method::None`, otherwise the reduction of the z-scored
/// profiles.
pub fn reduced_profiles(table: &CellTable, reduce_config: &ReduceConfig) -> Result<EmbeddingMatrix> {
    let raw = table.feature_matrix();
    match reduce_config.method {
        Method::None => reduce(&raw, reduce_config),
        _ => reduce(&standardize(&raw), reduce_config),
    }
}

/// Node features for the graph model: the reduced (or raw) profiles,
/// z-scored per column.
pub fn node_features(table: &CellTable, reduce_config: &ReduceConfig) -> Result<Array2<f64>> {
    Ok(standardize(&reduced_profiles(table, reduce_config)?.data))
}

#[derive(Debug, Clone)]
pub struct GrandRun {
    pub model: GrandModel,
    pub prediction: Prediction,
    pub test_metrics: MetricsReport,
}

pub fn operator(table: &CellTable, mode: GraphMode, k: usize) -> Result<PropagationOperator> {
    Ok(normalized_adjacency(&build_graph(table, &GraphConfig { k, mode })?))
}

/// Trains the graph model on `features` and scores the test split.
pub fn run_grand(
    table: &CellTable,
    split: &Split,
    op: &PropagationOperator,
    features: &Array2<f64>,
    hyper: &GrandHyper,
    seed: u64,
) -> Result<GrandRun> {
    let masks = Masks::new(table, split);
    let labels = table.labels();
    let model = grand::train(op, features, &labels, &masks.train, &masks.val, hyper, seed)?;
    let prediction = grand::predict(&model, op, features)?;
    let test_metrics = test_metrics(&labels, &prediction.positive_scores(), &masks.test)?;
    Ok(GrandRun {
        model,
        prediction,
        test_metrics,
    })
}

pub fn test_metrics(labels: &[u8], scores: &[f64], mask: &[bool]) -> Result<MetricsReport> {
    let rows = select(mask);
    if rows.is_empty() {
        return Err(Error::InvalidInput("test split is empty".into()));
    }
    let y: Vec<u8> = rows.iter().map(|&i| labels[i]).collect();
    let s: Vec<f64> = rows.iter().map(|&i| scores[i]).collect();
    compute_metrics(&y, &s, 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Forest,
    Gbdt,
}

#[derive(Debug, Clone)]
pub struct BaselineRun {
    pub model: EnsembleModel,
    pub scores: Vec<f64>,
    pub test_metrics: MetricsReport,
}

/// Fits a tree ensemble on the training rows of `x` and scores every cell.
pub fn run_baseline(
    table: &CellTable,
    split: &Split,
    x: &Array2<f64>,
    kind: BaselineKind,
    forest: &ForestConfig,
    gbdt: &GbdtConfig,
    seed: u64,
) -> Result<BaselineRun> {
    if x.nrows() != table.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} feature rows for {} cells",
            x.nrows(),
            table.len()
        )));
    }
    let masks = Masks::new(table, split);
    let labels = table.labels();
    let rows = select(&masks.train);
    let xt = x.select(Axis(0), &rows);
    let yt: Vec<u8> = rows.iter().map(|&i| labels[i]).collect();
    let model = match kind {
        BaselineKind::Forest => fit_random_forest(&xt, &yt, forest, seed)?,
        BaselineKind::Gbdt => fit_gbdt(&xt, &yt, gbdt)?,
    };
    let scores = predict_ensemble(&model, x)?;
    let test_metrics = test_metrics(&labels, &scores, &masks.test)?;
    Ok(BaselineRun {
        model,
        scores,
        test_metrics,
    })
}

/// Settings for the three-way comparison on a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub sim: SimConfig,
    pub split: (f64, f64, f64),
    pub k: usize,
    pub reduce_dim: usize,
    pub grand: GrandHyper,
    pub gbdt: GbdtConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            split: DEFAULT_SPLIT,
            k: 10,
            reduce_dim: 16,
            grand: GrandHyper::default(),
            gbdt: GbdtConfig::default(),
        }
    }
}

pub fn embedding_name(mode: GraphMode) -> &'static str {
    match mode {
        GraphMode::Feature => "Feature",
        GraphMode::Spatial => "Spatial",
    }
}

pub fn reduction_name(method: Method) -> &'static str {
    match method {
        Method::None => "-",
        Method::Pca => "PCA",
        Method::Tsne => "tSNE",
        Method::Umap => "UMAP",
    }
}

/// Simulates a dataset, splits it, and evaluates spatial+UMAP and
/// feature+UMAP graph models against tabular gradient boosting.
pub fn compare(config: &ExperimentConfig, seed: u64) -> Result<Vec<RunSummary>> {
    let (table, manifest) = generate_dataset(&config.sim, derive_seed(seed, 0))?;
    let split = make_split(&manifest, config.split, derive_seed(seed, 1))?;
    let reduce_config = ReduceConfig {
        dim: config.reduce_dim,
        ..ReduceConfig::new(Method::Umap, derive_seed(seed, 2))
    };
    let features = node_features(&table, &reduce_config)?;
    let mut out = Vec::new();
    for mode in [GraphMode::Spatial, GraphMode::Feature] {
        let op = operator(&table, mode, config.k)?;
        let run = run_grand(&table, &split, &op, &features, &config.grand, derive_seed(seed, 3))?;
        out.push(RunSummary {
            embedding: embedding_name(mode).into(),
            reduction: reduction_name(Method::Umap).into(),
            model: "grand".into(),
            metrics: run.test_metrics,
        });
    }
    let gb = run_baseline(
        &table,
        &split,
        &table.feature_matrix(),
        BaselineKind::Gbdt,
        &ForestConfig::default(),
        &config.gbdt,
        derive_seed(seed, 4),
    )?;
    out.push(RunSummary {
        embedding: "Tabular".into(),
        reduction: reduction_name(Method::None).into(),
        model: "gbdt".into(),
        metrics: gb.test_metrics,
    });
    Ok(out)
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use melc_core::dimred::Method;
use melc_core::graph::GraphMode;

#[derive(Debug, Parser)]
#[command(name = "melc", version, about = "Melanoma cell classification on multiplex tissue graphs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset (cells.csv, manifest.json).
    Simulate(SimulateArgs),
    /// Extract per-cell stain profiles from mask and channel images.
    Ingest(IngestArgs),
    /// Build a feature-similarity or spatial kNN graph.
    BuildGraph(BuildGraphArgs),
    /// Reduce cell profiles with PCA, tSNE or UMAP.
    Reduce(ReduceArgs),
    /// Split the samples, train a model and write predictions.
    Train(TrainArgs),
    /// Compute accuracy, F1 and AUROC for a training run.
    Evaluate(EvaluateArgs),
    /// Bayesian hyperparameter search on validation accuracy.
    Search(SearchArgs),
    /// Write an SVG plot.
    Plot(PlotArgs),
    /// Collect evaluated runs into a comparison table.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GraphArg {
    Feature,
    Spatial,
}

impl From<GraphArg> for GraphMode {
    fn from(g: GraphArg) -> Self {
        match g {
            GraphArg::Feature => GraphMode::Feature,
            GraphArg::Spatial => GraphMode::Spatial,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReduceArg {
    None,
    Pca,
    Tsne,
    Umap,
}

impl From<ReduceArg> for Method {
    fn from(r: ReduceArg) -> Self {
        match r {
            ReduceArg::None => Method::None,
            ReduceArg::Pca => Method::Pca,
            ReduceArg::Tsne => Method::Tsne,
            ReduceArg::Umap => Method::Umap,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Grand,
    Forest,
    Gbdt,
}

impl ModelArg {
    pub fn name(self) -> &'static str {
        match self {
            ModelArg::Grand => "grand",
            ModelArg::Forest => "forest",
            ModelArg::Gbdt => "gbdt",
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Simulation config (JSON); defaults apply to missing fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write per-sample mask and channel images.
    #[arg(long)]
    pub images: bool,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Sample descriptor file; repeat for several samples.
    #[arg(long = "input", required = true)]
    pub inputs: Vec<PathBuf>,
    /// Copy labels from a cell table whose i-th cell of a sample has mask id i+1.
    #[arg(long)]
    pub labels_from: Option<PathBuf>,
    /// Output cell table.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BuildGraphArgs {
    /// Cell table.
    #[arg(long)]
    pub cells: PathBuf,
    #[arg(long, value_enum, default_value_t = GraphArg::Spatial)]
    pub graph: GraphArg,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Output edge list.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReduceArgs {
    /// Cell table.
    #[arg(long)]
    pub cells: PathBuf,
    #[arg(long, value_enum, default_value_t = ReduceArg::Umap)]
    pub reduce: ReduceArg,
    /// Output dimension (default 2 for tSNE, 16 otherwise).
    #[arg(long)]
    pub dim: Option<usize>,
    /// Reduction settings (JSON: perplexity, tsne_iter, n_neighbors, min_dist, n_epochs).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output embedding table; a `.meta.json` sidecar records the method.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Cell table (labels, sample ids, coordinates).
    #[arg(long)]
    pub cells: PathBuf,
    /// Dataset manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Node features from `reduce`; defaults to the cell profiles.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Reduce the profiles in-process when no --features file is given.
    #[arg(long, value_enum, default_value_t = ReduceArg::None)]
    pub reduce: ReduceArg,
    /// Output dimension for in-process reduction.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Prebuilt graph from `build-graph`; otherwise built from --graph/--k.
    #[arg(long)]
    pub graph_file: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = GraphArg::Spatial)]
    pub graph: GraphArg,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, value_enum, default_value_t = ModelArg::Grand)]
    pub model: ModelArg,
    /// Training config (JSON with optional `split`, `grand`, `forest`, `gbdt`).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    pub run: PathBuf,
    /// Average metrics over samples instead of pooling cells.
    #[arg(long)]
    pub per_sample: bool,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Metrics file (default: <run>/metrics.json).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[arg(long)]
    pub cells: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ReduceArg::None)]
    pub reduce: ReduceArg,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub graph_file: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = GraphArg::Spatial)]
    pub graph: GraphArg,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, value_enum, default_value_t = ModelArg::Grand)]
    pub model: ModelArg,
    /// Search file (JSON with optional `space`, `options`, `base`).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for search.json and best_config.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[command(subcommand)]
    pub kind: PlotKind,
}

#[derive(Debug, Subcommand)]
pub enum PlotKind {
    /// Scatter of the first two embedding columns coloured by label.
    Embedding {
        /// Embedding table from `reduce`.
        #[arg(long)]
        embedding: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// ROC curve of a run's test cells.
    Roc {
        /// Run directory written by `train`.
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directories (or metrics files); repeat for each row.
    #[arg(long = "run", required = true)]
    pub runs: Vec<PathBuf>,
    /// Table file; the table is also printed.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

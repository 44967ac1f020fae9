//! Classification metrics, the comparison table and Bayesian
//! hyperparameter search.

mod metrics;
mod search;

pub use metrics::{auroc, compute_metrics, compute_metrics_per_sample, format_table, MetricsReport, RunSummary};
pub use search::{bayes_opt, BayesOptConfig, Config, ParamSpec, SearchResult, SearchSpace, TraceEntry};

//! Melanoma cell classification on multiplex tissue images.
//!
//! Per-cell stain profiles become nodes of a cell graph (feature-similarity or
//! spatial neighbourhoods), optionally re-encoded by PCA, tSNE or UMAP, and
//! classified with a GRAND-style random-propagation network. Random-forest and
//! gradient-boosting baselines, metrics, a Bayesian hyperparameter search and
//! a synthetic tissue generator complete the pipeline.

pub mod baselines;
pub mod data;
pub mod dimred;
pub mod error;
pub mod eval;
pub mod grand;
pub mod graph;
pub mod ingest;
pub mod pipeline;
pub mod plot;
pub mod rng;
pub mod simgen;

pub use error::{Error, Result};

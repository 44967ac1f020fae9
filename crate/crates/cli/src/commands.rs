use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use melc_core::baselines::{save_ensemble, ForestConfig, GbdtConfig};
use melc_core::data::{load_cell_table, make_split, save_cell_table, Bucket, CellTable, SampleManifest, Split};
use melc_core::dimred::{load_embedding, save_embedding, standardize, Method, ReduceConfig};
use melc_core::eval::{
    bayes_opt, compute_metrics, compute_metrics_per_sample, format_table, BayesOptConfig, Config, ParamSpec,
    RunSummary, SearchSpace,
};
use melc_core::grand::{self, save_checkpoint, GrandHyper};
use melc_core::graph::{build_graph, normalized_adjacency, GraphConfig, GraphMode, PropagationOperator, SparseGraph};
use melc_core::ingest::{extract_profiles, SampleDescriptor};
use melc_core::pipeline::{
    embedding_name, reduced_profiles, reduction_name, run_baseline, run_grand, select, BaselineKind, Masks,
    DEFAULT_SPLIT,
};
use melc_core::plot::{embedding_svg, roc_svg, write_svg};
use melc_core::rng::derive_seed;
use melc_core::simgen::{emit_images, generate_dataset, SimConfig};

use crate::args::*;

/// Bad arguments or configuration (exit code 1).
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

fn require_file(path: &Path) -> Result<()> {
    if !path.exists() {
        return Err(invalid(format!("{} does not exist", path.display())));
    }
    Ok(())
}

fn load_json<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            require_file(p)?;
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", p.display())))
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

pub fn simulate(args: SimulateArgs) -> Result<()> {
    let config: SimConfig = load_json(args.config.as_deref())?;
    config.validate()?;
    create_dir(&args.out)?;
    let (table, manifest) = generate_dataset(&config, args.seed)?;
    save_cell_table(&table, args.out.join("cells.csv"))?;
    manifest.save(args.out.join("manifest.json"))?;
    write_json(&args.out.join("sim_config.json"), &config)?;
    if args.images {
        emit_images(&config, &table, args.out.join("images"))?;
    }
    Ok(())
}

pub fn ingest(args: IngestArgs) -> Result<()> {
    for p in &args.inputs {
        require_file(p)?;
    }
    let reference = match &args.labels_from {
        Some(p) => {
            require_file(p)?;
            let t = load_cell_table(p)?;
            let by_sample: BTreeMap<String, Vec<u8>> = t
                .rows_by_sample()
                .into_iter()
                .map(|(s, rows)| (s, rows.iter().map(|&r| t.cells()[r].label).collect()))
                .collect();
            Some(by_sample)
        }
        None => None,
    };
    let mut cells = Vec::new();
    let mut n_features = None;
    let mut offset = 0u64;
    for p in &args.inputs {
        let desc = SampleDescriptor::load(p)?;
        let (mask, stack) = desc.read_images()?;
        let d = stack.images.len();
        if *n_features.get_or_insert(d) != d {
            bail!("{} has {d} channels, earlier samples {}", p.display(), n_features.unwrap_or(0));
        }
        let mut extracted = extract_profiles(&mask, &stack, &desc.sample_id)?;
        let max_id = extracted.iter().map(|c| c.cell_id).max().unwrap_or(0);
        for c in &mut extracted {
            if let Some(reference) = &reference {
                let labels = reference
                    .get(&desc.sample_id)
                    .ok_or_else(|| invalid(format!("sample `{}` not in label table", desc.sample_id)))?;
                c.label = *labels
                    .get(c.cell_id as usize - 1)
                    .ok_or_else(|| anyhow::anyhow!("mask id {} beyond label table", c.cell_id))?;
            }
            c.cell_id += offset;
        }
        offset += max_id;
        cells.extend(extracted);
    }
    let table = CellTable::new(n_features.unwrap_or(0), cells)?;
    save_cell_table(&table, &args.out)?;
    Ok(())
}

pub fn build_graph_cmd(args: BuildGraphArgs) -> Result<()> {
    require_file(&args.cells)?;
    let table = load_cell_table(&args.cells)?;
    let graph = build_graph(
        &table,
        &GraphConfig {
            k: args.k,
            mode: args.graph.into(),
        },
    )?;
    graph.save(&args.out)?;
    Ok(())
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ReduceOptions {
    perplexity: Option<f64>,
    tsne_iter: Option<usize>,
    n_neighbors: Option<usize>,
    min_dist: Option<f64>,
    n_epochs: Option<usize>,
}

fn reduce_config(method: Method, dim: Option<usize>, seed: u64, options: &ReduceOptions) -> ReduceConfig {
    let mut c = ReduceConfig::new(method, seed);
    if let Some(d) = dim {
        c.dim = d;
    }
    if let Some(v) = options.perplexity {
        c.perplexity = v;
    }
    if let Some(v) = options.tsne_iter {
        c.tsne_iter = v;
    }
    if let Some(v) = options.n_neighbors {
        c.n_neighbors = v;
    }
    if let Some(v) = options.min_dist {
        c.min_dist = v;
    }
    if let Some(v) = options.n_epochs {
        c.n_epochs = v;
    }
    c
}

#[derive(Debug, Serialize, Deserialize)]
struct EmbeddingMeta {
    method: Method,
    dim: usize,
    seed: u64,
}

fn meta_path(embedding: &Path) -> PathBuf {
    let mut s = embedding.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn reduce_cmd(args: ReduceArgs) -> Result<()> {
    require_file(&args.cells)?;
    let options: ReduceOptions = load_json(args.config.as_deref())?;
    let table = load_cell_table(&args.cells)?;
    let config = reduce_config(args.reduce.into(), args.dim, args.seed, &options);
    let emb = reduced_profiles(&table, &config)?;
    save_embedding(&table, &emb, &args.out)?;
    write_json(
        &meta_path(&args.out),
        &EmbeddingMeta {
            method: emb.method,
            dim: emb.dim(),
            seed: args.seed,
        },
    )?;
    Ok(())
}

/// Training settings file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub split: (f64, f64, f64),
    pub grand: GrandHyper,
    pub forest: ForestConfig,
    pub gbdt: GbdtConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            split: DEFAULT_SPLIT,
            grand: GrandHyper::default(),
            forest: ForestConfig::default(),
            gbdt: GbdtConfig::default(),
        }
    }
}

/// Metadata written next to a run's predictions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunInfo {
    pub model: String,
    pub embedding: String,
    pub reduction: String,
    pub graph: Option<String>,
    pub k: Option<usize>,
    pub seed: u64,
    pub n_cells: usize,
}

struct Inputs {
    table: CellTable,
    split: Split,
    features: Array2<f64>,
    reduction: String,
}

fn load_features(path: &Path, table: &CellTable) -> Result<(Array2<f64>, String)> {
    require_file(path)?;
    let emb = load_embedding(path)?;
    let same = emb.len() == table.len()
        && emb
            .cells()
            .iter()
            .zip(table.cells())
            .all(|(a, b)| a.cell_id == b.cell_id);
    if !same {
        return Err(invalid(format!(
            "{} does not list the same cells in the same order as the cell table",
            path.display()
        )));
    }
    let meta = meta_path(path);
    let reduction = if meta.exists() {
        let m: EmbeddingMeta = serde_json::from_str(&fs::read_to_string(&meta)?)?;
        reduction_name(m.method).to_string()
    } else {
        "custom".to_string()
    };
    Ok((emb.feature_matrix(), reduction))
}

#[allow(clippy::too_many_arguments)]
fn load_inputs(
    cells: &Path,
    manifest: &Path,
    features: Option<&Path>,
    reduce: ReduceArg,
    dim: Option<usize>,
    split_ratios: (f64, f64, f64),
    seed: u64,
) -> Result<Inputs> {
    require_file(cells)?;
    require_file(manifest)?;
    let table = load_cell_table(cells)?;
    let manifest = SampleManifest::load(manifest)?;
    manifest.check_table(&table)?;
    let split = make_split(&manifest, split_ratios, derive_seed(seed, 1))?;
    let (features, reduction) = match features {
        Some(p) => load_features(p, &table)?,
        None => {
            let method: Method = reduce.into();
            let config = reduce_config(method, dim, derive_seed(seed, 2), &ReduceOptions::default());
            (reduced_profiles(&table, &config)?.data, reduction_name(method).to_string())
        }
    };
    Ok(Inputs {
        table,
        split,
        features,
        reduction,
    })
}

fn graph_operator(
    table: &CellTable,
    graph_file: Option<&Path>,
    mode: GraphMode,
    k: usize,
) -> Result<(PropagationOperator, String, Option<usize>)> {
    match graph_file {
        Some(p) => {
            require_file(p)?;
            let g = SparseGraph::load(p)?;
            if g.n_nodes() != table.len() {
                return Err(invalid(format!(
                    "graph has {} nodes but the cell table has {} cells",
                    g.n_nodes(),
                    table.len()
                )));
            }
            Ok((normalized_adjacency(&g), "file".into(), None))
        }
        None => {
            let g = build_graph(table, &GraphConfig { k, mode })?;
            Ok((normalized_adjacency(&g), embedding_name(mode).to_string(), Some(k)))
        }
    }
}

fn write_predictions(path: &Path, table: &CellTable, split: &Split, scores: &[f64]) -> Result<()> {
    let mut out = String::from("cell_id,sample_id,bucket,label,score,predicted\n");
    for (c, s) in table.cells().iter().zip(scores) {
        let bucket = match split.bucket_of(&c.sample_id) {
            Some(Bucket::Train) => "train",
            Some(Bucket::Val) => "val",
            Some(Bucket::Test) => "test",
            None => "none",
        };
        out.push_str(&format!(
            "{},{},{bucket},{},{s},{}\n",
            c.cell_id,
            c.sample_id,
            c.label,
            u8::from(*s > 0.5)
        ));
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

pub fn train_cmd(args: TrainArgs) -> Result<()> {
    let config: TrainConfig = load_json(args.config.as_deref())?;
    let inputs = load_inputs(
        &args.cells,
        &args.manifest,
        args.features.as_deref(),
        args.reduce,
        args.dim,
        config.split,
        args.seed,
    )?;
    create_dir(&args.out)?;
    let model_seed = derive_seed(args.seed, 3);
    let (scores, info) = match args.model {
        ModelArg::Grand => {
            let (op, graph, k) = graph_operator(&inputs.table, args.graph_file.as_deref(), args.graph.into(), args.k)?;
            let x = standardize(&inputs.features);
            let run = run_grand(&inputs.table, &inputs.split, &op, &x, &config.grand, model_seed)?;
            save_checkpoint(&run.model, args.out.join("model.ckpt"))?;
            write_json(&args.out.join("history.json"), &run.model.history)?;
            let embedding = if graph == "file" { "Graph".to_string() } else { graph.clone() };
            (
                run.prediction.positive_scores(),
                RunInfo {
                    model: "grand".into(),
                    embedding,
                    reduction: inputs.reduction.clone(),
                    graph: Some(graph),
                    k,
                    seed: args.seed,
                    n_cells: inputs.table.len(),
                },
            )
        }
        ModelArg::Forest | ModelArg::Gbdt => {
            let kind = if args.model == ModelArg::Forest {
                BaselineKind::Forest
            } else {
                BaselineKind::Gbdt
            };
            let run = run_baseline(
                &inputs.table,
                &inputs.split,
                &inputs.features,
                kind,
                &config.forest,
                &config.gbdt,
                model_seed,
            )?;
            save_ensemble(&run.model, args.out.join("model.txt"))?;
            (
                run.scores,
                RunInfo {
                    model: args.model.name().into(),
                    embedding: "Tabular".into(),
                    reduction: inputs.reduction.clone(),
                    graph: None,
                    k: None,
                    seed: args.seed,
                    n_cells: inputs.table.len(),
                },
            )
        }
    };
    inputs.split.save(args.out.join("split.json"))?;
    write_predictions(&args.out.join("predictions.csv"), &inputs.table, &inputs.split, &scores)?;
    write_json(&args.out.join("run.json"), &info)?;
    Ok(())
}

struct PredictionRow {
    sample_id: String,
    bucket: String,
    label: u8,
    score: f64,
}

fn read_predictions(run: &Path) -> Result<Vec<PredictionRow>> {
    let path = run.join("predictions.csv");
    require_file(&path)?;
    let text = fs::read_to_string(&path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            bail!("{}:{}: expected 6 fields", path.display(), i + 1);
        }
        rows.push(PredictionRow {
            sample_id: f[1].to_string(),
            bucket: f[2].to_string(),
            label: f[3]
                .parse()
                .with_context(|| format!("{}:{}: bad label", path.display(), i + 1))?,
            score: f[4]
                .parse()
                .with_context(|| format!("{}:{}: bad score", path.display(), i + 1))?,
        });
    }
    Ok(rows)
}

fn read_run_info(run: &Path) -> Result<RunInfo> {
    let path = run.join("run.json");
    require_file(&path)?;
    Ok(serde_json::from_str(&fs::read_to_string(&path)?)?)
}

pub fn evaluate(args: EvaluateArgs) -> Result<()> {
    let info = read_run_info(&args.run)?;
    let rows: Vec<PredictionRow> = read_predictions(&args.run)?
        .into_iter()
        .filter(|r| r.bucket == "test")
        .collect();
    if rows.is_empty() {
        bail!("run has no test cells");
    }
    let labels: Vec<u8> = rows.iter().map(|r| r.label).collect();
    let scores: Vec<f64> = rows.iter().map(|r| r.score).collect();
    let metrics = if args.per_sample {
        let ids: Vec<String> = rows.iter().map(|r| r.sample_id.clone()).collect();
        compute_metrics_per_sample(&labels, &scores, &ids, args.threshold)?
    } else {
        compute_metrics(&labels, &scores, args.threshold)?
    };
    let summary = RunSummary {
        embedding: info.embedding,
        reduction: info.reduction,
        model: info.model,
        metrics,
    };
    let out = args.out.unwrap_or_else(|| args.run.join("metrics.json"));
    summary.save(&out)?;
    Ok(())
}

/// Search settings file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SearchFile {
    space: Option<SearchSpace>,
    options: BayesOptConfig,
    base: TrainConfig,
}

fn default_space(model: ModelArg) -> SearchSpace {
    let cont = |lo, hi, log| ParamSpec::Continuous { lo, hi, log };
    match model {
        ModelArg::Grand => SearchSpace::new()
            .with("drop_rate", cont(0.05, 0.8, false))
            .with("learning_rate", cont(1e-3, 3e-2, true))
            .with("propagation_order", ParamSpec::Integer { lo: 1, hi: 8 })
            .with("consistency_weight", cont(0.0, 2.0, false))
            .with("sharpen_temperature", cont(0.1, 1.0, false)),
        ModelArg::Forest => SearchSpace::new()
            .with("n_trees", ParamSpec::Integer { lo: 20, hi: 300 })
            .with("max_depth", ParamSpec::Integer { lo: 2, hi: 12 }),
        ModelArg::Gbdt => SearchSpace::new()
            .with("n_rounds", ParamSpec::Integer { lo: 20, hi: 300 })
            .with("max_depth", ParamSpec::Integer { lo: 2, hi: 6 })
            .with("learning_rate", cont(0.01, 0.3, true)),
    }
}

/// Overrides named fields of `base` with the values in `config`.
pub fn apply_config<T: Serialize + DeserializeOwned>(base: &T, config: &Config) -> Result<T> {
    let mut value = serde_json::to_value(base)?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| anyhow::anyhow!("configuration is not an object"))?;
    for (name, &v) in config {
        let slot = obj
            .get_mut(name)
            .ok_or_else(|| invalid(format!("unknown hyperparameter `{name}`")))?;
        let integral = v.fract() == 0.0 && v >= 0.0;
        *slot = match slot {
            serde_json::Value::Bool(_) => serde_json::Value::Bool(v != 0.0),
            serde_json::Value::Number(n) if n.is_u64() || n.is_i64() => {
                if !integral {
                    return Err(invalid(format!("`{name}` needs a non-negative integer, got {v}")));
                }
                serde_json::Value::from(v as u64)
            }
            serde_json::Value::Null if integral => serde_json::Value::from(v as u64),
            _ => serde_json::Value::from(v),
        };
    }
    serde_json::from_value(value).map_err(|e| invalid(format!("invalid hyperparameters: {e}")))
}

pub fn search(args: SearchArgs) -> Result<()> {
    let file: SearchFile = load_json(args.config.as_deref())?;
    let space = file.space.clone().unwrap_or_else(|| default_space(args.model));
    space.validate()?;
    let inputs = load_inputs(
        &args.cells,
        &args.manifest,
        args.features.as_deref(),
        args.reduce,
        args.dim,
        file.base.split,
        args.seed,
    )?;
    let masks = Masks::new(&inputs.table, &inputs.split);
    let labels = inputs.table.labels();
    let model_seed = derive_seed(args.seed, 3);

    // every key must name a field of the chosen model's settings
    let probe = space.decode(&vec![0.5; space.dim()]);
    match args.model {
        ModelArg::Grand => apply_config(&file.base.grand, &probe).map(|_| ())?,
        ModelArg::Forest => apply_config(&file.base.forest, &probe).map(|_| ())?,
        ModelArg::Gbdt => apply_config(&file.base.gbdt, &probe).map(|_| ())?,
    }

    let op = match args.model {
        ModelArg::Grand => Some(graph_operator(&inputs.table, args.graph_file.as_deref(), args.graph.into(), args.k)?.0),
        _ => None,
    };
    let x_std = standardize(&inputs.features);
    let val_rows = select(&masks.val);
    let val_labels: Vec<u8> = val_rows.iter().map(|&i| labels[i]).collect();

    // failed trainings (e.g. divergence) score 0
    let objective = |cfg: &Config| -> f64 {
        let result: Result<f64> = (|| match args.model {
            ModelArg::Grand => {
                let hyper: GrandHyper = apply_config(&file.base.grand, cfg)?;
                let op = op.as_ref().expect("graph built for grand");
                let model = grand::train(op, &x_std, &labels, &masks.train, &masks.val, &hyper, model_seed)?;
                Ok(model.history.best_val_accuracy)
            }
            ModelArg::Forest | ModelArg::Gbdt => {
                let (kind, forest, gbdt) = if args.model == ModelArg::Forest {
                    (BaselineKind::Forest, apply_config(&file.base.forest, cfg)?, file.base.gbdt.clone())
                } else {
                    (BaselineKind::Gbdt, file.base.forest.clone(), apply_config(&file.base.gbdt, cfg)?)
                };
                let run = run_baseline(&inputs.table, &inputs.split, &inputs.features, kind, &forest, &gbdt, model_seed)?;
                let s: Vec<f64> = val_rows.iter().map(|&i| run.scores[i]).collect();
                Ok(compute_metrics(&val_labels, &s, 0.5)?.accuracy)
            }
        })();
        result.unwrap_or(0.0)
    };
    let result = bayes_opt(objective, &space, &file.options, derive_seed(args.seed, 5))?;

    create_dir(&args.out)?;
    write_json(&args.out.join("search.json"), &result)?;
    let mut best = file.base.clone();
    match args.model {
        ModelArg::Grand => best.grand = apply_config(&best.grand, &result.best_config)?,
        ModelArg::Forest => best.forest = apply_config(&best.forest, &result.best_config)?,
        ModelArg::Gbdt => best.gbdt = apply_config(&best.gbdt, &result.best_config)?,
    }
    write_json(&args.out.join("best_config.json"), &best)?;
    Ok(())
}

pub fn plot(args: PlotArgs) -> Result<()> {
    match args.kind {
        PlotKind::Embedding { embedding, out } => {
            require_file(&embedding)?;
            let t = load_embedding(&embedding)?;
            let svg = embedding_svg(&t.feature_matrix(), &t.labels())?;
            write_svg(&svg, &out)?;
        }
        PlotKind::Roc { run, out } => {
            let rows: Vec<PredictionRow> = read_predictions(&run)?
                .into_iter()
                .filter(|r| r.bucket == "test")
                .collect();
            let labels: Vec<u8> = rows.iter().map(|r| r.label).collect();
            let scores: Vec<f64> = rows.iter().map(|r| r.score).collect();
            let svg = roc_svg(&labels, &scores)?;
            write_svg(&svg, &out)?;
        }
    }
    Ok(())
}

pub fn report(args: ReportArgs) -> Result<()> {
    let mut rows = Vec::with_capacity(args.runs.len());
    for p in &args.runs {
        let path = if p.is_dir() { p.join("metrics.json") } else { p.clone() };
        require_file(&path)?;
        rows.push(RunSummary::load(&path)?);
    }
    let table = format_table(&rows);
    print!("{table}");
    if let Some(out) = &args.out {
        fs::write(out, &table).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

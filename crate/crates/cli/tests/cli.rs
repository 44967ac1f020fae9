use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use melc_core::data::load_cell_table;

fn melc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_melc")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = melc(args);
    assert!(
        out.status.success(),
        "melc {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write(path: &Path, text: &str) -> PathBuf {
    fs::write(path, text).unwrap();
    path.to_path_buf()
}

const SIM: &str = r#"{"n_samples": 6, "fraction_melanoma": 0.5, "cells_per_sample": 60, "n_channels": 8,
    "field_size_px": 128, "tumor_radius_px": 40.0}"#;

const TRAIN: &str = r#"{"grand": {"max_epochs": 60, "patience": 30}, "gbdt": {"n_rounds": 20}, "forest": {"n_trees": 20}}"#;

fn simulate(dir: &Path, name: &str) -> PathBuf {
    let cfg = write(&dir.join("sim.json"), SIM);
    let out = dir.join(name);
    ok(&["simulate", "--config", p(&cfg), "--seed", "7", "--out", p(&out)]);
    out
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn simulate_is_byte_identical_on_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let a = simulate(dir.path(), "a");
    let b = simulate(dir.path(), "b");
    let fa = read_dir_bytes(&a);
    assert_eq!(fa.len(), 3);
    assert_eq!(fa, read_dir_bytes(&b));
}

#[test]
fn full_chain_produces_metrics_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = simulate(d, "data");
    let cells = data.join("cells.csv");
    let manifest = data.join("manifest.json");
    let graph = d.join("graph.txt");
    let emb = d.join("emb.csv");
    let cfg = write(&d.join("train.json"), TRAIN);

    ok(&["build-graph", "--cells", p(&cells), "--graph", "spatial", "--k", "5", "--out", p(&graph)]);
    ok(&["reduce", "--cells", p(&cells), "--reduce", "pca", "--dim", "4", "--out", p(&emb)]);
    for (name, model) in [("grand", "grand"), ("gbdt", "gbdt"), ("forest", "forest")] {
        let run = d.join(name);
        ok(&[
            "train", "--cells", p(&cells), "--manifest", p(&manifest), "--features", p(&emb),
            "--graph-file", p(&graph), "--model", model, "--config", p(&cfg), "--seed", "3", "--out", p(&run),
        ]);
        ok(&["evaluate", "--run", p(&run)]);
        let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("metrics.json")).unwrap()).unwrap();
        let m = &metrics["metrics"];
        for key in ["accuracy", "f1", "auroc"] {
            assert!(m[key].is_number(), "{name}: {key} missing in {metrics}");
        }
        assert_eq!(metrics["reduction"], "PCA");
    }
    assert!(d.join("grand/model.ckpt").exists() && d.join("grand/history.json").exists());
    assert!(d.join("gbdt/model.txt").exists());

    let table_path = d.join("table.txt");
    let out = ok(&[
        "report", "--run", p(&d.join("grand")), "--run", p(&d.join("gbdt")), "--run", p(&d.join("forest")),
        "--out", p(&table_path),
    ]);
    let printed = String::from_utf8(out.stdout).unwrap();
    assert_eq!(printed, fs::read_to_string(&table_path).unwrap());
    assert!(printed.contains("Embedding") && printed.contains("AUROC"));
    assert_eq!(printed.lines().filter(|l| l.contains("PCA")).count(), 3);

    let roc = d.join("roc.svg");
    ok(&["plot", "roc", "--run", p(&d.join("grand")), "--out", p(&roc)]);
    assert!(fs::read_to_string(&roc).unwrap().contains("<polyline"));

    ok(&["evaluate", "--run", p(&d.join("grand")), "--per-sample", "--out", p(&d.join("ps.json"))]);
    assert!(d.join("ps.json").exists());
}

#[test]
fn train_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = simulate(d, "data");
    let cfg = write(&d.join("train.json"), TRAIN);
    let cells = data.join("cells.csv");
    let manifest = data.join("manifest.json");
    for run in ["r1", "r2"] {
        ok(&[
            "train", "--cells", p(&cells), "--manifest", p(&manifest), "--graph", "feature", "--k", "4",
            "--config", p(&cfg), "--seed", "11", "--out", p(&d.join(run)),
        ]);
    }
    assert_eq!(read_dir_bytes(&d.join("r1")), read_dir_bytes(&d.join("r2")));
}

#[test]
fn embedding_plot_marks_every_cell() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write(
        &d.join("sim.json"),
        r#"{"n_samples": 2, "fraction_melanoma": 0.5, "cells_per_sample": 50, "n_channels": 6, "field_size_px": 100, "tumor_radius_px": 30.0}"#,
    );
    ok(&["simulate", "--config", p(&cfg), "--out", p(&d.join("data"))]);
    let emb = d.join("emb.csv");
    ok(&["reduce", "--cells", p(&d.join("data/cells.csv")), "--reduce", "pca", "--dim", "2", "--out", p(&emb)]);
    let svg = d.join("emb.svg");
    ok(&["plot", "embedding", "--embedding", p(&emb), "--out", p(&svg)]);
    let text = fs::read_to_string(&svg).unwrap();
    assert!(text.starts_with("<svg"));
    assert_eq!(text.matches("<circle").count(), 100);
}

#[test]
fn ingest_recovers_simulated_profiles() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write(
        &d.join("sim.json"),
        r#"{"n_samples": 2, "fraction_melanoma": 0.5, "cells_per_sample": 30, "n_channels": 4, "field_size_px": 96, "tumor_radius_px": 30.0}"#,
    );
    let data = d.join("data");
    ok(&["simulate", "--config", p(&cfg), "--out", p(&data), "--images"]);
    let cells = data.join("cells.csv");
    let out = d.join("ingested.csv");
    let s0 = data.join("images/S00/sample.txt");
    let s1 = data.join("images/S01/sample.txt");
    assert!(s0.exists(), "descriptor layout changed");
    ok(&["ingest", "--input", p(&s0), "--input", p(&s1), "--labels-from", p(&cells), "--out", p(&out)]);
    let ingested = load_cell_table(&out).unwrap();
    let original = load_cell_table(&cells).unwrap();
    assert!(ingested.len() > 40);
    for c in ingested.cells() {
        let matched = original.cells().iter().any(|o| {
            o.sample_id == c.sample_id
                && o.label == c.label
                && o.features.iter().zip(&c.features).all(|(a, b)| (a - b).abs() <= 0.5)
        });
        assert!(matched, "cell {} has no source within quantization error", c.cell_id);
    }
}

#[test]
fn search_writes_trace_and_best_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = simulate(d, "data");
    let cfg = write(
        &d.join("search.json"),
        r#"{"options": {"max_evals": 4, "n_initial": 2, "patience": 4},
            "space": {"params": {"n_rounds": {"type": "integer", "lo": 5, "hi": 30}}}}"#,
    );
    let out = d.join("search");
    ok(&[
        "search", "--cells", p(&data.join("cells.csv")), "--manifest", p(&data.join("manifest.json")),
        "--model", "gbdt", "--config", p(&cfg), "--out", p(&out),
    ]);
    let trace: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("search.json")).unwrap()).unwrap();
    assert_eq!(trace["trace"].as_array().unwrap().len(), 4);
    let best: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("best_config.json")).unwrap()).unwrap();
    assert!(best["gbdt"]["n_rounds"].is_u64());
}

#[test]
fn help_lists_flags_for_every_subcommand() {
    let flags: [(&str, &[&str]); 9] = [
        ("simulate", &["--config", "--seed", "--out"]),
        ("ingest", &["--input", "--out"]),
        ("build-graph", &["--graph", "--k", "--out"]),
        ("reduce", &["--reduce", "--dim", "--seed", "--out"]),
        ("train", &["--graph", "--k", "--reduce", "--dim", "--model", "--config", "--seed", "--out"]),
        ("evaluate", &["--run", "--per-sample"]),
        ("search", &["--model", "--config", "--seed", "--out"]),
        ("plot", &["embedding", "roc"]),
        ("report", &["--run", "--out"]),
    ];
    for (cmd, expected) in flags {
        let out = melc(&[cmd, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{cmd} --help");
        let text = String::from_utf8(out.stdout).unwrap();
        for f in expected {
            assert!(text.contains(f), "{cmd} --help lacks {f}");
        }
    }
    assert_eq!(melc(&["--help"]).status.code(), Some(0));
}

#[test]
fn validation_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = melc(&["simulate", "--bogus", "--out", p(d)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
    assert_eq!(melc(&["build-graph", "--cells", p(&d.join("missing.csv")), "--out", p(&d.join("g"))]).status.code(), Some(1));
    assert_eq!(melc(&["train", "--cells", "x", "--manifest", "y", "--model", "svm", "--out", "z"]).status.code(), Some(1));
    let bad = write(&d.join("bad.json"), r#"{"n_samples": 0}"#);
    assert_eq!(melc(&["simulate", "--config", p(&bad), "--out", p(&d.join("o"))]).status.code(), Some(1));
    let unknown = write(&d.join("unknown.json"), r#"{"grand": {"no_such_field": 1}}"#);
    let data = simulate(d, "data");
    let out = melc(&[
        "train", "--cells", p(&data.join("cells.csv")), "--manifest", p(&data.join("manifest.json")),
        "--config", p(&unknown), "--out", p(&d.join("run")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let out = Command::new(env!("CARGO_BIN_EXE_melc"))
        .args(["build-graph", "--cells", p(&data.join("cells.csv")), "--out", p(&d.join("g.txt"))])
        .env("MELC_GRAPH_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn thread_cap_does_not_change_graph() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = simulate(d, "data");
    let cells = data.join("cells.csv");
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let g = d.join(format!("g{threads}.txt"));
        let out = Command::new(env!("CARGO_BIN_EXE_melc"))
            .args(["build-graph", "--cells", p(&cells), "--graph", "feature", "--out", p(&g)])
            .env("MELC_GRAPH_THREADS", threads)
            .output()
            .unwrap();
        assert!(out.status.success());
        outputs.push(fs::read(&g).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

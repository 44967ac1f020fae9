mod common;

use common::brute_auroc;
use melc_core::eval::{
    auroc, bayes_opt, compute_metrics, compute_metrics_per_sample, format_table, BayesOptConfig, ParamSpec, RunSummary,
    SearchSpace,
};
use melc_core::plot::{embedding_svg, roc_curve, roc_svg};
use melc_core::rng::seeded;
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;

fn annotated_auroc(svg: &str) -> f64 {
    let start = svg.find("data-auroc=\"").unwrap() + "data-auroc=\"".len();
    let end = start + svg[start..].find('"').unwrap();
    svg[start..end].parse().unwrap()
}

#[test]
fn search_finds_quadratic_peak() {
    let space = SearchSpace::new().with("x", ParamSpec::Continuous { lo: 0.0, hi: 1.0, log: false });
    let f = |x: f64| -(x - 0.3) * (x - 0.3);
    let config = BayesOptConfig {
        max_evals: 40,
        patience: 40,
        ..BayesOptConfig::default()
    };
    let res = bayes_opt(|c| f(c["x"]), &space, &config, 3).unwrap();
    assert!(res.trace.len() <= 40);
    let grid_best = (0..200).map(|i| i as f64 / 199.0).map(f).fold(f64::NEG_INFINITY, f64::max);
    assert!((res.best_config["x"] - 0.3).abs() < 0.05, "{:?}", res.best_config);
    assert!(res.best_value >= grid_best - 0.05 * 0.05);
    for w in res.trace.windows(2) {
        assert!(w[1].best_so_far >= w[0].best_so_far);
    }
}

#[test]
fn search_is_seed_deterministic() {
    let space = SearchSpace::new()
        .with("a", ParamSpec::Continuous { lo: 1e-3, hi: 1.0, log: true })
        .with("k", ParamSpec::Integer { lo: 1, hi: 8 });
    let config = BayesOptConfig {
        max_evals: 15,
        ..BayesOptConfig::default()
    };
    let obj = |c: &melc_core::eval::Config| -(c["a"].ln() + 3.0).powi(2) - (c["k"] - 4.0).abs();
    let a = bayes_opt(obj, &space, &config, 5).unwrap();
    let b = bayes_opt(obj, &space, &config, 5).unwrap();
    assert_eq!(a.trace, b.trace);
    assert!(a.trace.iter().all(|t| t.config["k"].fract() == 0.0));
}

#[test]
fn metrics_examples() {
    let m = compute_metrics(&[1, 1, 0, 0], &[0.9, 0.4, 0.6, 0.1], 0.5).unwrap();
    assert_eq!((m.tp, m.fp, m.tn, m.fn_), (1, 1, 1, 1));
    assert_eq!(m.accuracy, 0.5);
    assert_eq!(m.f1, 0.5);
    assert_eq!(m.auroc, 0.75);
    // exactly at the threshold is negative
    let m = compute_metrics(&[1, 0], &[0.5, 0.2], 0.5).unwrap();
    assert_eq!(m.tp, 0);
    let single = compute_metrics(&[1, 1], &[0.7, 0.8], 0.5).unwrap();
    assert!(single.auroc.is_nan() && !single.auroc_defined);
}

#[test]
fn per_sample_metrics_average_samples() {
    let labels = [1, 0, 1, 1];
    let scores = [0.9, 0.1, 0.2, 0.8];
    let ids: Vec<String> = ["a", "a", "b", "b"].iter().map(|s| s.to_string()).collect();
    let m = compute_metrics_per_sample(&labels, &scores, &ids, 0.5).unwrap();
    assert!((m.accuracy - 0.75).abs() < 1e-12);
}

#[test]
fn roc_annotation_matches_metrics() {
    let mut rng = seeded(61);
    let labels: Vec<u8> = (0..200).map(|_| rng.random_range(0..2)).collect();
    let scores: Vec<f64> = (0..200).map(|_| rng.random::<f64>()).collect();
    let svg = roc_svg(&labels, &scores).unwrap();
    let m = compute_metrics(&labels, &scores, 0.5).unwrap();
    assert!((annotated_auroc(&svg) - m.auroc).abs() < 1e-9);

    let reversed: Vec<f64> = scores.iter().map(|s| -s).collect();
    let r = annotated_auroc(&roc_svg(&labels, &reversed).unwrap());
    assert!((r - (1.0 - m.auroc)).abs() < 1e-9);

    let pts = roc_curve(&labels, &scores).unwrap();
    assert_eq!(pts[0], (0.0, 0.0));
    assert_eq!(*pts.last().unwrap(), (1.0, 1.0));
    assert!(pts.windows(2).all(|w| w[1].0 >= w[0].0 && w[1].1 >= w[0].1));
}

#[test]
fn embedding_plot_has_one_marker_per_cell() {
    let coords = Array2::from_shape_fn((100, 2), |(i, j)| ((i * 7 + j * 13) % 17) as f64);
    let labels: Vec<u8> = (0..100).map(|i| u8::from(i < 30)).collect();
    let svg = embedding_svg(&coords, &labels).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    assert_eq!(svg.matches("<circle").count(), 100);
    assert_eq!(svg.matches("class=\"label1\"").count(), 30);
}

#[test]
fn table_lists_each_run() {
    let m = compute_metrics(&[1, 0, 1, 0], &[0.8, 0.3, 0.6, 0.7], 0.5).unwrap();
    let rows = vec![
        RunSummary { embedding: "Spatial".into(), reduction: "UMAP".into(), model: "grand".into(), metrics: m.clone() },
        RunSummary { embedding: "Tabular".into(), reduction: "-".into(), model: "gbdt".into(), metrics: m },
    ];
    let t = format_table(&rows);
    assert!(t.lines().next().unwrap().contains("Dimension Reduction"));
    assert_eq!(t.lines().filter(|l| l.contains("0.7500")).count(), 2);
}

proptest! {
    #[test]
    fn auroc_is_pair_probability(pairs in prop::collection::vec((0u8..2, 0u8..10), 2..80)) {
        let labels: Vec<u8> = pairs.iter().map(|p| p.0).collect();
        let scores: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
        let a = auroc(&labels, &scores).unwrap();
        let b = brute_auroc(&labels, &scores);
        prop_assert!((a.is_nan() && b.is_nan()) || a == b);
        if !a.is_nan() {
            let flipped: Vec<f64> = scores.iter().map(|s| -s).collect();
            prop_assert!((auroc(&labels, &flipped).unwrap() - (1.0 - a)).abs() < 1e-12);
        }
    }
}

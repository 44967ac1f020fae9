use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub f1: f64,
    /// NaN (serialized as `null`) when only one class is present.
    pub auroc: f64,
    pub auroc_defined: bool,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub n_evaluated: usize,
}

fn check_lengths(labels: &[u8], scores: &[f64]) -> Result<()> {
    if labels.len() != scores.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels but {} scores",
            labels.len(),
            scores.len()
        )));
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::InvalidInput("labels must be 0 or 1".into()));
    }
    Ok(())
}

/// Mann-Whitney AUROC by mid-ranks; ties between a positive and a negative
/// count one half. NaN when a class is missing.
pub fn auroc(labels: &[u8], scores: &[f64]) -> Result<f64> {
    check_lengths(labels, scores)?;
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok(f64::NAN);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j share their mean
        let mid = (i + 1 + j) as f64 / 2.0;
        let pos = order[i..j].iter().filter(|&&k| labels[k] == 1).count();
        rank_sum += mid * pos as f64;
        i = j;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Pooled metrics; a row is called positive when its score exceeds
/// `threshold`.
pub fn compute_metrics(labels: &[u8], scores: &[f64], threshold: f64) -> Result<MetricsReport> {
    check_lengths(labels, scores)?;
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&y, &s) in labels.iter().zip(scores) {
        match (y == 1, s > threshold) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (false, false) => tn += 1,
            (true, false) => fn_ += 1,
        }
    }
    let n = labels.len();
    let accuracy = if n == 0 { f64::NAN } else { (tp + tn) as f64 / n as f64 };
    let denom = 2 * tp + fp + fn_;
    let f1 = if denom == 0 { 0.0 } else { 2.0 * tp as f64 / denom as f64 };
    let auroc = auroc(labels, scores)?;
    Ok(MetricsReport {
        accuracy,
        f1,
        auroc,
        auroc_defined: !auroc.is_nan(),
        tp,
        fp,
        tn,
        fn_,
        n_evaluated: n,
    })
}

/// Metrics computed per sample and averaged with equal sample weights.
/// Confusion counts are pooled; samples lacking a class are left out of the
/// AUROC average.
pub fn compute_metrics_per_sample(
    labels: &[u8],
    scores: &[f64],
    sample_ids: &[String],
    threshold: f64,
) -> Result<MetricsReport> {
    check_lengths(labels, scores)?;
    if sample_ids.len() != labels.len() {
        return Err(Error::DimensionMismatch("sample ids length differs from labels".into()));
    }
    let mut groups: BTreeMap<&str, (Vec<u8>, Vec<f64>)> = BTreeMap::new();
    for ((&y, &s), id) in labels.iter().zip(scores).zip(sample_ids) {
        let g = groups.entry(id.as_str()).or_default();
        g.0.push(y);
        g.1.push(s);
    }
    let pooled = compute_metrics(labels, scores, threshold)?;
    let per: Vec<MetricsReport> = groups
        .values()
        .map(|(y, s)| compute_metrics(y, s, threshold))
        .collect::<Result<_>>()?;
    let mean = |v: Vec<f64>| {
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let auroc = mean(per.iter().filter(|m| m.auroc_defined).map(|m| m.auroc).collect());
    Ok(MetricsReport {
        accuracy: mean(per.iter().map(|m| m.accuracy).collect()),
        f1: mean(per.iter().map(|m| m.f1).collect()),
        auroc,
        auroc_defined: !auroc.is_nan(),
        ..pooled
    })
}

/// One line of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub embedding: String,
    pub reduction: String,
    pub model: String,
    pub metrics: MetricsReport,
}

impl RunSummary {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn fmt_metric(v: f64) -> String {
    if v.is_nan() {
        "n/a".into()
    } else {
        format!("{v:.4}")
    }
}

/// Aligned text table with columns Embedding, Dimension Reduction,
/// Accuracy, F1-Score, AUROC.
pub fn format_table(rows: &[RunSummary]) -> String {
    let header = ["Embedding", "Dimension Reduction", "Accuracy", "F1-Score", "AUROC"];
    let body: Vec<[String; 5]> = rows
        .iter()
        .map(|r| {
            [
                r.embedding.clone(),
                r.reduction.clone(),
                fmt_metric(r.metrics.accuracy),
                fmt_metric(r.metrics.f1),
                fmt_metric(r.metrics.auroc),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let parts: Vec<String> = cells
            .iter()
            .zip(widths)
            .enumerate()
            .map(|(i, (c, w))| if i < 2 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(header.to_vec(), &mut out);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    let _ = writeln!(out, "{}", rule.join("  "));
    for row in &body {
        line(row.iter().map(String::as_str).collect(), &mut out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_separation() {
        let m = compute_metrics(&[1, 1, 0, 0], &[0.9, 0.8, 0.3, 0.2], 0.5).unwrap();
        assert_eq!((m.accuracy, m.f1, m.auroc), (1.0, 1.0, 1.0));
        assert_eq!((m.tp, m.fp, m.tn, m.fn_, m.n_evaluated), (2, 0, 2, 0, 4));
    }

    #[test]
    fn half_ordered_pairs() {
        let a = auroc(&[1, 0, 0, 1], &[0.9, 0.8, 0.3, 0.2]).unwrap();
        assert_eq!(a, 0.5);
    }

    #[test]
    fn f1_from_counts() {
        // TP=2, FP=1, FN=1, TN=1
        let m = compute_metrics(&[1, 1, 0, 1, 0], &[0.9, 0.8, 0.7, 0.1, 0.2], 0.5).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_), (2, 1, 1));
        assert!((m.f1 - 4.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn single_class_has_undefined_auroc() {
        let m = compute_metrics(&[0, 0], &[0.1, 0.7], 0.5).unwrap();
        assert!(m.auroc.is_nan());
        assert!(!m.auroc_defined);
        assert_eq!(m.f1, 0.0);
        let json = serde_json::to_string(&m).unwrap();
        assert!(json.contains("\"auroc\":null"));
    }

    #[test]
    fn all_ties_give_half() {
        assert_eq!(auroc(&[1, 0, 1, 0], &[0.3; 4]).unwrap(), 0.5);
    }

    #[test]
    fn length_mismatch_is_error() {
        assert!(compute_metrics(&[1], &[0.5, 0.2], 0.5).is_err());
    }

    #[test]
    fn per_sample_averages() {
        let labels = [1, 0, 1, 1];
        let scores = [0.9, 0.1, 0.2, 0.8];
        let ids: Vec<String> = ["a", "a", "b", "b"].iter().map(|s| s.to_string()).collect();
        let m = compute_metrics_per_sample(&labels, &scores, &ids, 0.5).unwrap();
        assert_eq!(m.accuracy, 0.75);
        assert_eq!(m.auroc, 1.0);
        assert_eq!(m.n_evaluated, 4);
    }

    #[test]
    fn table_is_aligned() {
        let m = compute_metrics(&[1, 0], &[0.9, 0.1], 0.5).unwrap();
        let rows = vec![
            RunSummary {
                embedding: "Spatial".into(),
                reduction: "UMAP".into(),
                model: "grand".into(),
                metrics: m.clone(),
            },
            RunSummary {
                embedding: "Tabular".into(),
                reduction: "-".into(),
                model: "gbdt".into(),
                metrics: m,
            },
        ];
        let t = format_table(&rows);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].starts_with("Embedding  Dimension Reduction  Accuracy"));
        assert_eq!(lines[2].len(), lines[3].len());
        assert!(lines[2].contains("1.0000"));
    }
}

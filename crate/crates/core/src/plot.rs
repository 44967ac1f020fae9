//! Static SVG plots: embedding scatter and ROC curve.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::eval::auroc;

const SIZE: f64 = 480.0;
const MARGIN: f64 = 48.0;
const COLORS: [&str; 2] = ["#1f77b4", "#d62728"];

fn header(out: &mut String) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(out, r#"<rect width="{SIZE}" height="{SIZE}" fill="white"/>"#);
}

fn to_px(v: f64, lo: f64, hi: f64, flip: bool) -> f64 {
    let span = if hi > lo { hi - lo } else { 1.0 };
    let t = (v - lo) / span;
    let t = if flip { 1.0 - t } else { t };
    MARGIN + t * (SIZE - 2.0 * MARGIN)
}

/// Scatter of the first two embedding columns, one circle per cell, coloured
/// by label (blue 0, red 1).
pub fn embedding_svg(coords: &Array2<f64>, labels: &[u8]) -> Result<String> {
    if coords.nrows() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} points but {} labels",
            coords.nrows(),
            labels.len()
        )));
    }
    if coords.ncols() < 2 {
        return Err(Error::InvalidInput("embedding needs at least 2 columns".into()));
    }
    let range = |j: usize| {
        coords
            .column(j)
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)))
    };
    let (x0, x1) = range(0);
    let (y0, y1) = range(1);
    let mut out = String::new();
    header(&mut out);
    for (row, &y) in coords.rows().into_iter().zip(labels) {
        let _ = writeln!(
            out,
            r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{}" fill-opacity="0.7" class="label{}"/>"#,
            to_px(row[0], x0, x1, false),
            to_px(row[1], y0, y1, true),
            COLORS[(y as usize).min(1)],
            y
        );
    }
    for (i, name) in ["healthy", "melanoma"].iter().enumerate() {
        let ty = 16.0 + 16.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<rect x="{}" y="{}" width="10" height="10" fill="{}"/><text x="{}" y="{}" font-size="12" font-family="sans-serif">{name}</text>"#,
            SIZE - 110.0,
            ty - 9.0,
            COLORS[i],
            SIZE - 94.0,
            ty
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// ROC points from the highest threshold down; tied scores move diagonally.
pub fn roc_curve(labels: &[u8], scores: &[f64]) -> Result<Vec<(f64, f64)>> {
    if labels.len() != scores.len() {
        return Err(Error::DimensionMismatch("labels and scores differ in length".into()));
    }
    let p = labels.iter().filter(|&&y| y == 1).count();
    let n = labels.len() - p;
    if p == 0 || n == 0 {
        return Err(Error::InvalidInput("ROC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut pts = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        pts.push((fp as f64 / n as f64, tp as f64 / p as f64));
        i = j;
    }
    Ok(pts)
}

/// ROC polyline on the unit square with the chance diagonal and an AUROC
/// annotation (`data-auroc` carries the full-precision value).
pub fn roc_svg(labels: &[u8], scores: &[f64]) -> Result<String> {
    let pts = roc_curve(labels, scores)?;
    let area = auroc(labels, scores)?;
    let mut out = String::new();
    header(&mut out);
    let lo = MARGIN;
    let hi = SIZE - MARGIN;
    let _ = writeln!(
        out,
        r#"<rect x="{lo}" y="{lo}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        hi - lo,
        hi - lo
    );
    let _ = writeln!(
        out,
        r#"<line x1="{lo}" y1="{hi}" x2="{hi}" y2="{lo}" stroke="gray" stroke-dasharray="4 4"/>"#
    );
    let path: Vec<String> = pts
        .iter()
        .map(|&(x, y)| format!("{:.3},{:.3}", to_px(x, 0.0, 1.0, false), to_px(y, 0.0, 1.0, true)))
        .collect();
    let _ = writeln!(
        out,
        r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"/>"#,
        path.join(" "),
        COLORS[1]
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-size="12" font-family="sans-serif">False positive rate</text>"#,
        SIZE / 2.0 - 50.0,
        SIZE - 16.0
    );
    let _ = writeln!(
        out,
        r#"<text x="14" y="{}" font-size="12" font-family="sans-serif" transform="rotate(-90 14 {})">True positive rate</text>"#,
        SIZE / 2.0 + 45.0,
        SIZE / 2.0 + 45.0
    );
    let _ = writeln!(
        out,
        r#"<text id="auroc" data-auroc="{area}" x="{}" y="{}" font-size="14" font-family="sans-serif">AUROC = {area:.4}</text>"#,
        SIZE / 2.0,
        SIZE - MARGIN - 12.0
    );
    out.push_str("</svg>\n");
    Ok(out)
}

pub fn write_svg(svg: &str, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, svg).map_err(|e| Error::io(path, e))
}

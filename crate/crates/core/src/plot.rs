//! Deterministic standalone SVG scatter plots.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::Embedding;
use crate::error::{invalid, Result};

pub const CANVAS: f64 = 600.0;
pub const RADIUS: f64 = 2.0;
pub const MARGIN_FRACTION: f64 = 0.05;
pub const UNLABELED_COLOR: &str = "#808080";
pub const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf",
    "#bcbd22", "#393b79",
];

/// Renders the first two embedding coordinates. The data bounding box is
/// scaled uniformly into the canvas, leaving a 5% margin on every side.
pub fn render_svg(emb: &Embedding, labels: Option<&[usize]>) -> Result<String> {
    if emb.is_empty() {
        return Err(invalid("cannot plot an empty embedding"));
    }
    if let Some(l) = labels {
        if l.len() != emb.len() {
            return Err(invalid("label count differs from embedding rows"));
        }
    }
    let xy = |i: usize| {
        let r = emb.row(i);
        (r[0], r.get(1).copied().unwrap_or(0.0))
    };
    let (mut min_x, mut max_x, mut min_y, mut max_y) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for i in 0..emb.len() {
        let (x, y) = xy(i);
        min_x = min_x.min(x);
        max_x = max_x.max(x);
        min_y = min_y.min(y);
        max_y = max_y.max(y);
    }
    let span = (max_x - min_x).max(max_y - min_y);
    let span = if span > 0.0 { span } else { 1.0 };
    let margin = CANVAS * MARGIN_FRACTION;
    let scale = (CANVAS - 2.0 * margin) / span;
    // center the shorter axis
    let off_x = margin + (CANVAS - 2.0 * margin - (max_x - min_x) * scale) / 2.0;
    let off_y = margin + (CANVAS - 2.0 * margin - (max_y - min_y) * scale) / 2.0;

    let mut out = String::new();
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8" standalone="no"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{c}" height="{c}" viewBox="0 0 {c} {c}">"#,
        c = CANVAS
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for i in 0..emb.len() {
        let (x, y) = xy(i);
        let px = off_x + (x - min_x) * scale;
        let py = CANVAS - (off_y + (y - min_y) * scale);
        let fill = labels.map_or(UNLABELED_COLOR, |l| PALETTE[l[i] % PALETTE.len()]);
        let _ = writeln!(
            out,
            r#"<circle cx="{px:.3}" cy="{py:.3}" r="{RADIUS}" fill="{fill}"/>"#
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

pub fn emit_svg(emb: &Embedding, labels: Option<&[usize]>, path: impl AsRef<Path>) -> Result<()> {
    let svg = render_svg(emb, labels)?;
    std::fs::write(path, svg)?;
    Ok(())
}

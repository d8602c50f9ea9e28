//! Standalone SVG plots: entropy histograms with a fitted normal overlay, and 2-D
//! embedding scatters with marginal histograms on the top and right edges.

use std::fmt::Write as _;
use std::path::Path;

use super::{io_err, NormalFit, ReportError};
use crate::embed::Embedding2D;

const MIN_BINS: usize = 8;
const MAX_BINS: usize = 128;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Freedman-Diaconis bin count, clamped to `[8, 128]`.
pub fn freedman_diaconis_bins(samples: &[f64]) -> usize {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let range = sorted[sorted.len() - 1] - sorted[0];
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let width = 2.0 * iqr / (sorted.len() as f64).cbrt();
    if range == 0.0 {
        return MIN_BINS;
    }
    if width <= 0.0 {
        return MAX_BINS;
    }
    ((range / width).ceil() as usize).clamp(MIN_BINS, MAX_BINS)
}

/// Equal-width bins over `[lo, hi]`; a zero-width range is widened to ±0.5.
fn bin_counts(values: impl Iterator<Item = f64>, lo: f64, hi: f64, bins: usize) -> (f64, f64, Vec<usize>) {
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
    let mut counts = vec![0usize; bins];
    for v in values {
        let t = ((v - lo) / (hi - lo) * bins as f64).floor();
        let idx = if t <= 0.0 { 0 } else { (t as usize).min(bins - 1) };
        counts[idx] += 1;
    }
    (lo, hi, counts)
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

const HIST_W: f64 = 640.0;
const HIST_H: f64 = 400.0;
const MARGIN_L: f64 = 60.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;

/// Histogram + normal-density overlay scaled to count area.
pub fn histogram_svg(samples: &[f64], fit: &NormalFit, title: &str) -> String {
    let bins = freedman_diaconis_bins(samples);
    let (lo, hi) = bounds(samples.iter().copied());
    let (lo, hi, counts) = bin_counts(samples.iter().copied(), lo, hi, bins);
    let bin_w = (hi - lo) / bins as f64;
    let degenerate = fit.std.is_nan() || fit.std <= 0.0 || fit.n < 2;

    let curve: Vec<(f64, f64)> = if degenerate {
        Vec::new()
    } else {
        (0..=200)
            .map(|i| {
                let x = lo + (hi - lo) * i as f64 / 200.0;
                (x, fit.pdf(x) * samples.len() as f64 * bin_w)
            })
            .collect()
    };
    let max_count = counts.iter().copied().max().unwrap_or(0) as f64;
    let y_max = curve.iter().map(|p| p.1).fold(max_count, f64::max).max(1.0);

    let plot_w = HIST_W - MARGIN_L - MARGIN_R;
    let plot_h = HIST_H - MARGIN_T - MARGIN_B;
    let sx = |x: f64| MARGIN_L + (x - lo) / (hi - lo) * plot_w;
    let sy = |y: f64| MARGIN_T + plot_h - y / y_max * plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{HIST_W}" height="{HIST_H}" viewBox="0 0 {HIST_W} {HIST_H}">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{HIST_W}" height="{HIST_H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text class="title" x="{}" y="24" text-anchor="middle" font-size="16">{}</text>"#,
        HIST_W / 2.0,
        escape(title)
    );
    let _ = writeln!(s, r#"<g class="bars" fill="steelblue" stroke="white" stroke-width="0.5">"#);
    for (i, &c) in counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let x0 = sx(lo + i as f64 * bin_w);
        let x1 = sx(lo + (i + 1) as f64 * bin_w);
        let y = sy(c as f64);
        let _ = writeln!(
            s,
            r#"<rect class="bar" data-count="{c}" x="{x0:.3}" y="{y:.3}" width="{:.3}" height="{:.3}"/>"#,
            x1 - x0,
            MARGIN_T + plot_h - y
        );
    }
    let _ = writeln!(s, "</g>");

    if degenerate {
        let _ = writeln!(
            s,
            r#"<text class="notice" x="{}" y="{}" text-anchor="middle" font-size="12">degenerate fit: std = {}, no density curve</text>"#,
            HIST_W / 2.0,
            MARGIN_T + 16.0,
            fit.std
        );
    } else {
        let mut d = String::new();
        for (i, &(x, y)) in curve.iter().enumerate() {
            let _ = write!(d, "{}{:.3},{:.3}", if i == 0 { "M" } else { " L" }, sx(x), sy(y));
        }
        let _ = writeln!(s, r#"<path class="fit" d="{d}" fill="none" stroke="crimson" stroke-width="2"/>"#);
    }

    let (x_axis_y, right) = (MARGIN_T + plot_h, MARGIN_L + plot_w);
    let _ = writeln!(
        s,
        r#"<g class="axes" stroke="black"><line x1="{MARGIN_L}" y1="{x_axis_y}" x2="{right}" y2="{x_axis_y}"/><line x1="{MARGIN_L}" y1="{MARGIN_T}" x2="{MARGIN_L}" y2="{x_axis_y}"/></g>"#
    );
    let _ = writeln!(
        s,
        r#"<text class="tick" x="{MARGIN_L}" y="{}" text-anchor="middle" font-size="11">{:.3}</text>"#,
        x_axis_y + 16.0,
        lo
    );
    let _ = writeln!(
        s,
        r#"<text class="tick" x="{right}" y="{}" text-anchor="middle" font-size="11">{:.3}</text>"#,
        x_axis_y + 16.0,
        hi
    );
    let _ = writeln!(
        s,
        r#"<text class="tick" x="{}" y="{}" text-anchor="end" font-size="11">{}</text>"#,
        MARGIN_L - 4.0,
        MARGIN_T + 4.0,
        y_max.round()
    );
    let _ = writeln!(
        s,
        r#"<text class="xlabel" x="{}" y="{}" text-anchor="middle" font-size="12">entropy (bits)</text>"#,
        MARGIN_L + plot_w / 2.0,
        HIST_H - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text class="ylabel" x="14" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {})">count</text>"#,
        MARGIN_T + plot_h / 2.0,
        MARGIN_T + plot_h / 2.0
    );
    s.push_str("</svg>\n");
    s
}

pub fn emit_histogram_svg(samples: &[f64], fit: &NormalFit, title: &str, out: impl AsRef<Path>) -> Result<(), ReportError> {
    if samples.is_empty() {
        return Err(ReportError::TooFewSamples(0));
    }
    let out = out.as_ref();
    std::fs::write(out, histogram_svg(samples, fit, title)).map_err(io_err(out))
}

const EMB_SIZE: f64 = 480.0;
const EMB_LEFT: f64 = 50.0;
const EMB_TOP: f64 = 130.0;
const MARGINAL: f64 = 80.0;
const MARGINAL_GAP: f64 = 10.0;
const MARGINAL_BINS: usize = 40;

/// Scatter of the embedding with marginal histograms along the top (x) and right (y).
pub fn embedding_svg(embedding: &Embedding2D, title: &str) -> String {
    let pts = &embedding.points;
    let n = pts.len();
    let (x_lo, x_hi) = bounds(pts.iter().map(|p| p[0]));
    let (y_lo, y_hi) = bounds(pts.iter().map(|p| p[1]));
    let (x_lo, x_hi, x_counts) = bin_counts(pts.iter().map(|p| p[0]), x_lo, x_hi, MARGINAL_BINS);
    let (y_lo, y_hi, y_counts) = bin_counts(pts.iter().map(|p| p[1]), y_lo, y_hi, MARGINAL_BINS);
    let sx = |x: f64| EMB_LEFT + (x - x_lo) / (x_hi - x_lo) * EMB_SIZE;
    // SVG y grows downward
    let sy = |y: f64| EMB_TOP + EMB_SIZE - (y - y_lo) / (y_hi - y_lo) * EMB_SIZE;
    let radius = (30.0 / (n as f64).sqrt()).clamp(0.5, 4.0);

    let width = EMB_LEFT + EMB_SIZE + MARGINAL_GAP + MARGINAL + 20.0;
    let height = EMB_TOP + EMB_SIZE + 40.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text class="title" x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        EMB_LEFT + EMB_SIZE / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<rect class="frame" x="{EMB_LEFT}" y="{EMB_TOP}" width="{EMB_SIZE}" height="{EMB_SIZE}" fill="none" stroke="black"/>"#
    );

    let _ = writeln!(s, r#"<g class="points" fill="steelblue" fill-opacity="0.6">"#);
    for p in pts {
        let _ = writeln!(s, r#"<circle cx="{:.3}" cy="{:.3}" r="{radius:.3}"/>"#, sx(p[0]), sy(p[1]));
    }
    let _ = writeln!(s, "</g>");

    let x_max = x_counts.iter().copied().max().unwrap_or(1).max(1) as f64;
    let bar_w = EMB_SIZE / MARGINAL_BINS as f64;
    let base = EMB_TOP - MARGINAL_GAP;
    let _ = writeln!(s, r#"<g class="marginal-x" fill="gray">"#);
    for (i, &c) in x_counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let h = c as f64 / x_max * MARGINAL;
        let _ = writeln!(
            s,
            r#"<rect data-count="{c}" x="{:.3}" y="{:.3}" width="{bar_w:.3}" height="{h:.3}"/>"#,
            EMB_LEFT + i as f64 * bar_w,
            base - h
        );
    }
    let _ = writeln!(s, "</g>");

    let y_max = y_counts.iter().copied().max().unwrap_or(1).max(1) as f64;
    let left = EMB_LEFT + EMB_SIZE + MARGINAL_GAP;
    let _ = writeln!(s, r#"<g class="marginal-y" fill="gray">"#);
    for (i, &c) in y_counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let w = c as f64 / y_max * MARGINAL;
        // bin i spans upward from the bottom edge
        let top = EMB_TOP + EMB_SIZE - (i + 1) as f64 * bar_w;
        let _ = writeln!(
            s,
            r#"<rect data-count="{c}" x="{left:.3}" y="{top:.3}" width="{w:.3}" height="{bar_w:.3}"/>"#
        );
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(
        s,
        r#"<text class="xlabel" x="{}" y="{}" text-anchor="middle" font-size="12">x [{:.3}, {:.3}]</text>"#,
        EMB_LEFT + EMB_SIZE / 2.0,
        EMB_TOP + EMB_SIZE + 24.0,
        x_lo,
        x_hi
    );
    s.push_str("</svg>\n");
    s
}

pub fn emit_embedding_svg(embedding: &Embedding2D, title: &str, out: impl AsRef<Path>) -> Result<(), ReportError> {
    if embedding.is_empty() {
        return Err(ReportError::TooFewSamples(0));
    }
    let out = out.as_ref();
    std::fs::write(out, embedding_svg(embedding, title)).map_err(io_err(out))
}

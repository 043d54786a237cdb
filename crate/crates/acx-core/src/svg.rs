//! Minimal SVG chart emission: group-mean time series, propensity histogram
//! overlays, and outcome support plots. Output is deterministic text so plot
//! files can be digest-checked alongside the report.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 50.0;

const PALETTE: &[&str] = &["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn fmt(v: f64) -> String {
    // Fixed precision keeps output bytes stable.
    format!("{v:.3}")
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Scale {
    min: f64,
    max: f64,
    lo_px: f64,
    hi_px: f64,
}

impl Scale {
    fn new(min: f64, max: f64, lo_px: f64, hi_px: f64) -> Self {
        let (min, max) = if (max - min).abs() < 1e-12 {
            (min - 1.0, max + 1.0)
        } else {
            (min, max)
        };
        Scale { min, max, lo_px, hi_px }
    }

    fn apply(&self, v: f64) -> f64 {
        self.lo_px + (v - self.min) / (self.max - self.min) * (self.hi_px - self.lo_px)
    }
}

fn header(title: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(
        out,
        "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>"
    );
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{}</text>",
        WIDTH / 2.0,
        escape(title)
    );
    out
}

fn axes(out: &mut String, xs: &Scale, ys: &Scale, x_label: &str, y_label: &str) {
    let x0 = MARGIN_LEFT;
    let x1 = WIDTH - MARGIN_RIGHT;
    let y0 = HEIGHT - MARGIN_BOTTOM;
    let y1 = MARGIN_TOP;
    let _ = writeln!(
        out,
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>"
    );
    let _ = writeln!(
        out,
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>"
    );
    for i in 0..=4 {
        let fx = xs.min + (xs.max - xs.min) * i as f64 / 4.0;
        let px = xs.apply(fx);
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>",
            fmt(px),
            y0 + 16.0,
            fmt(fx)
        );
        let fy = ys.min + (ys.max - ys.min) * i as f64 / 4.0;
        let py = ys.apply(fy);
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{}</text>",
            x0 - 6.0,
            fmt(py + 4.0),
            fmt(fy)
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{}</text>",
        (x0 + x1) / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        "<text x=\"16\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

/// Multi-series line chart with an optional vertical marker (e.g. the
/// intervention period).
pub fn line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
    marker_x: Option<f64>,
) -> String {
    let mut xmin = f64::INFINITY;
    let mut xmax = f64::NEG_INFINITY;
    let mut ymin = f64::INFINITY;
    let mut ymax = f64::NEG_INFINITY;
    for s in series {
        for (x, y) in &s.points {
            xmin = xmin.min(*x);
            xmax = xmax.max(*x);
            ymin = ymin.min(*y);
            ymax = ymax.max(*y);
        }
    }
    if let Some(m) = marker_x {
        xmin = xmin.min(m);
        xmax = xmax.max(m);
    }
    if !xmin.is_finite() {
        xmin = 0.0;
        xmax = 1.0;
        ymin = 0.0;
        ymax = 1.0;
    }
    let pad = (ymax - ymin).abs().max(1e-9) * 0.08;
    let xs = Scale::new(xmin, xmax, MARGIN_LEFT, WIDTH - MARGIN_RIGHT);
    let ys = Scale::new(ymin - pad, ymax + pad, HEIGHT - MARGIN_BOTTOM, MARGIN_TOP);

    let mut out = header(title);
    axes(&mut out, &xs, &ys, x_label, y_label);
    if let Some(m) = marker_x {
        let px = xs.apply(m);
        let _ = writeln!(
            out,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#888888\" stroke-dasharray=\"4 3\"/>",
            fmt(px),
            MARGIN_TOP,
            fmt(px),
            HEIGHT - MARGIN_BOTTOM
        );
    }
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|(x, y)| format!("{},{}", fmt(xs.apply(*x)), fmt(ys.apply(*y))))
            .collect();
        let _ = writeln!(
            out,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>",
            pts.join(" ")
        );
        for (x, y) in &s.points {
            let _ = writeln!(
                out,
                "<circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"{color}\"/>",
                fmt(xs.apply(*x)),
                fmt(ys.apply(*y))
            );
        }
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" fill=\"{color}\">{}</text>",
            WIDTH - 150.0,
            MARGIN_TOP + 16.0 * i as f64,
            escape(&s.name)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Overlaid histogram for two or more groups over a shared bin grid.
pub fn histogram_overlay(
    title: &str,
    x_label: &str,
    groups: &[(String, Vec<f64>)],
    bins: usize,
) -> String {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (_, values) in groups {
        for v in values {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
    }
    if !lo.is_finite() || (hi - lo).abs() < 1e-12 {
        lo = 0.0;
        hi = 1.0;
    }
    let bins = bins.max(1);
    let width = (hi - lo) / bins as f64;

    let mut counts: Vec<Vec<usize>> = Vec::new();
    let mut max_count = 1usize;
    for (_, values) in groups {
        let mut c = vec![0usize; bins];
        for v in values {
            let mut b = ((v - lo) / width) as usize;
            if b >= bins {
                b = bins - 1;
            }
            c[b] += 1;
        }
        max_count = max_count.max(c.iter().copied().max().unwrap_or(0));
        counts.push(c);
    }

    let xs = Scale::new(lo, hi, MARGIN_LEFT, WIDTH - MARGIN_RIGHT);
    let ys = Scale::new(0.0, max_count as f64, HEIGHT - MARGIN_BOTTOM, MARGIN_TOP);
    let mut out = header(title);
    axes(&mut out, &xs, &ys, x_label, "count");
    for (g, (name, _)) in groups.iter().enumerate() {
        let color = PALETTE[g % PALETTE.len()];
        for (b, count) in counts[g].iter().enumerate() {
            if *count == 0 {
                continue;
            }
            let x0 = xs.apply(lo + b as f64 * width);
            let x1 = xs.apply(lo + (b + 1) as f64 * width);
            let y = ys.apply(*count as f64);
            let base = HEIGHT - MARGIN_BOTTOM;
            let _ = writeln!(
                out,
                "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{color}\" fill-opacity=\"0.45\"/>",
                fmt(x0),
                fmt(y),
                fmt((x1 - x0).max(0.5)),
                fmt(base - y)
            );
        }
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" fill=\"{color}\">{}</text>",
            WIDTH - 150.0,
            MARGIN_TOP + 16.0 * g as f64,
            escape(name)
        );
    }
    out.push_str("</svg>\n");
    out
}

//! Line charts of logged columns as standalone SVG.

use crate::error::{CliError, Result};
use mi_lab::trainer::{ema_smooth, read_csv, RunSummary, CSV_HEADER};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub smoothed: Option<Vec<f64>>,
}

/// A horizontal reference, possibly covering only part of the x range.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub label: String,
    pub value: f64,
    pub from: Option<f64>,
    pub to: Option<f64>,
    pub dashed: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Chart {
    pub series: Vec<Series>,
    pub references: Vec<Reference>,
}

/// The summary written next to a CSV log, if there is one.
pub fn sibling_summary(csv: &Path) -> Option<RunSummary> {
    let text = std::fs::read_to_string(csv.with_extension("json")).ok()?;
    serde_json::from_str(&text).ok()
}

fn references_for(summary: &RunSummary) -> Vec<Reference> {
    let mut refs = Vec::new();
    let sched = &summary.true_mi_schedule;
    for (k, &(start, value)) in sched.iter().enumerate() {
        let whole = sched.len() == 1;
        refs.push(Reference {
            label: "true MI".into(),
            value,
            from: (!whole).then_some(start as f64),
            to: (!whole).then(|| sched.get(k + 1).map_or(summary.iterations, |n| n.0) as f64),
            dashed: false,
        });
    }
    if summary.estimator == "infonce" {
        refs.push(Reference {
            label: format!("ln {}", summary.batch_size),
            value: (summary.batch_size as f64).ln(),
            from: None,
            to: None,
            dashed: true,
        });
    }
    refs
}

/// Reads the requested columns from each CSV, with an EMA overlay when
/// `ema` is set and reference lines from any sibling summaries.
pub fn load_chart(paths: &[PathBuf], columns: &[String], ema: Option<f64>) -> Result<Chart> {
    if paths.is_empty() || columns.is_empty() {
        return Err(CliError::Plot(
            "need at least one CSV and one column".into(),
        ));
    }
    for c in columns {
        if !CSV_HEADER.split(',').any(|h| h == c) {
            return Err(CliError::UnknownColumn {
                name: c.clone(),
                available: CSV_HEADER.replace(',', ", "),
            });
        }
    }
    let mut chart = Chart::default();
    for path in paths {
        let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
        let records = read_csv(file).map_err(|source| CliError::Log {
            path: path.clone(),
            source,
        })?;
        if records.is_empty() {
            return Err(CliError::Plot(format!("{}: no records", path.display())));
        }
        let name = path.file_stem().map_or_else(
            || path.display().to_string(),
            |s| s.to_string_lossy().into_owned(),
        );
        let x: Vec<f64> = records.iter().map(|r| r.iter as f64).collect();
        for c in columns {
            let y: Vec<f64> = records
                .iter()
                .map(|r| r.value(c).expect("column checked"))
                .collect();
            let smoothed = ema.map(|a| ema_smooth(&y, a)).transpose()?;
            chart.series.push(Series {
                label: if paths.len() > 1 {
                    format!("{name}: {c}")
                } else {
                    c.clone()
                },
                x: x.clone(),
                y,
                smoothed,
            });
        }
        if let Some(summary) = sibling_summary(path) {
            for r in references_for(&summary) {
                if !chart.references.contains(&r) {
                    chart.references.push(r);
                }
            }
        }
    }
    Ok(chart)
}

/// Roughly `count` round tick positions covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let raw = (hi - lo) / count as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + step * 1e-9 {
        out.push(if t.abs() < step * 1e-9 { 0.0 } else { t });
        t += step;
    }
    out
}

fn bounds(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    values.filter(|v| v.is_finite()).fold(None, |acc, v| {
        Some(acc.map_or((v, v), |(lo, hi): (f64, f64)| (lo.min(v), hi.max(v))))
    })
}

fn polylines(
    out: &mut String,
    x: &[f64],
    y: &[f64],
    sx: &dyn Fn(f64) -> f64,
    sy: &dyn Fn(f64) -> f64,
    style: &str,
) {
    let mut points = String::new();
    let flush = |points: &mut String, out: &mut String| {
        if !points.is_empty() {
            let _ = writeln!(
                out,
                r#"<polyline fill="none" {style} points="{}"/>"#,
                points.trim_end()
            );
            points.clear();
        }
    };
    for (&a, &b) in x.iter().zip(y) {
        if b.is_finite() {
            let _ = write!(points, "{:.2},{:.2} ", sx(a), sy(b));
        } else {
            flush(&mut points, out);
        }
    }
    flush(&mut points, out);
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

pub fn render_svg(chart: &Chart) -> String {
    let (x0, x1) =
        bounds(chart.series.iter().flat_map(|s| s.x.iter().copied())).unwrap_or((0.0, 1.0));
    let (y0, y1) = bounds(
        chart
            .series
            .iter()
            .flat_map(|s| s.y.iter().copied())
            .chain(chart.references.iter().map(|r| r.value)),
    )
    .unwrap_or((0.0, 1.0));
    let (x0, x1) = if x1 > x0 {
        (x0, x1)
    } else {
        (x0 - 1.0, x0 + 1.0)
    };
    let pad = if y1 > y0 { 0.05 * (y1 - y0) } else { 1.0 };
    let (y0, y1) = (y0 - pad, y1 + pad);
    let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for t in ticks(x0, x1, 6) {
        let _ = writeln!(
            out,
            r##"<line x1="{0:.2}" y1="{TOP}" x2="{0:.2}" y2="{1:.2}" stroke="#eee"/><text x="{0:.2}" y="{2:.2}" text-anchor="middle">{3}</text>"##,
            sx(t),
            TOP + ph,
            TOP + ph + 18.0,
            t
        );
    }
    for t in ticks(y0, y1, 6) {
        let _ = writeln!(
            out,
            r##"<line x1="{LEFT}" y1="{0:.2}" x2="{1:.2}" y2="{0:.2}" stroke="#eee"/><text x="{2:.2}" y="{3:.2}" text-anchor="end">{4}</text>"##,
            sy(t),
            LEFT + pw,
            LEFT - 6.0,
            sy(t) + 4.0,
            format!("{t:.3}")
                .trim_end_matches('0')
                .trim_end_matches('.')
        );
    }
    let _ = writeln!(
        out,
        r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">iteration</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 10.0
    );

    for r in &chart.references {
        let (a, b) = (r.from.unwrap_or(x0).max(x0), r.to.unwrap_or(x1).min(x1));
        let dash = if r.dashed {
            r#" stroke-dasharray="6 4""#
        } else {
            ""
        };
        let _ = writeln!(
            out,
            r##"<line x1="{:.2}" y1="{2:.2}" x2="{:.2}" y2="{2:.2}" stroke="#555"{dash}><title>{3}</title></line>"##,
            sx(a),
            sx(b),
            sy(r.value),
            escape(&r.label)
        );
    }

    let mut legend = String::new();
    let _ = writeln!(
        legend,
        r##"<rect x="{:.2}" y="{:.2}" width="150" height="{:.2}" fill="white" fill-opacity="0.85" stroke="#ccc"/>"##,
        LEFT + pw - 156.0,
        TOP + 6.0,
        16.0 * chart.series.len() as f64 + 4.0
    );
    for (k, s) in chart.series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let opacity = if s.smoothed.is_some() { 0.3 } else { 1.0 };
        let style = format!(r#"stroke="{color}" stroke-opacity="{opacity}" stroke-width="1""#);
        polylines(&mut out, &s.x, &s.y, &sx, &sy, &style);
        if let Some(sm) = &s.smoothed {
            let style = format!(r#"stroke="{color}" stroke-width="2""#);
            polylines(&mut out, &s.x, sm, &sx, &sy, &style);
        }
        let ly = TOP + 16.0 + 16.0 * k as f64;
        let _ = writeln!(
            legend,
            r#"<line x1="{:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            LEFT + pw - 150.0,
            LEFT + pw - 130.0,
            LEFT + pw - 125.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    out.push_str(&legend);
    out.push_str("</svg>\n");
    out
}

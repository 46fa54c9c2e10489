//! Static log-log SVG plots of sweep medians against the sample budget.

use std::fmt::Write as _;
use std::path::Path;

use log::warn;
use pdnac_core::summary::log_log_slope;
use pdnac_core::{Error, Result};
use serde::Serialize;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    /// `(T, value)` pairs.
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct FittedSeries {
    pub label: String,
    pub n_points: usize,
    pub slope: Option<f64>,
}

pub struct Plot {
    pub svg: String,
    pub fits: Vec<FittedSeries>,
}

/// Pulls `(T, per_t[*][metric])` out of a sweep summary document.
pub fn series_from_summary(label: &str, summary: &serde_json::Value, metric: &str) -> Result<Series> {
    let per_t = summary
        .get("per_t")
        .and_then(|v| v.as_array())
        .ok_or_else(|| Error::Config(format!("{label}: summary has no per_t table")))?;
    let points = per_t
        .iter()
        .filter_map(|row| Some((row.get("T")?.as_f64()?, row.get(metric)?.as_f64()?)))
        .collect();
    Ok(Series { label: label.to_string(), points })
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Draws every series on shared log-log axes with its least-squares fit and a
/// slope -1/2 reference through the first point. Non-positive values are
/// dropped from both the plot and the fit.
pub fn render(title: &str, y_label: &str, series: &[Series]) -> Result<Plot> {
    let cleaned: Vec<Series> = series
        .iter()
        .map(|s| {
            let pts: Vec<(f64, f64)> = s.points.iter().cloned().filter(|&(x, y)| x > 0.0 && y > 0.0 && y.is_finite()).collect();
            if pts.len() < s.points.len() {
                warn!("{}: dropped {} non-positive points", s.label, s.points.len() - pts.len());
            }
            Series { label: s.label.clone(), points: pts }
        })
        .collect();
    let all: Vec<(f64, f64)> = cleaned.iter().flat_map(|s| s.points.iter().cloned()).collect();
    if all.is_empty() {
        return Err(Error::Config("nothing to plot: no positive points".into()));
    }
    let lx: Vec<f64> = all.iter().map(|p| p.0.log2()).collect();
    let ly: Vec<f64> = all.iter().map(|p| p.1.log10()).collect();
    let (mut x0, mut x1) = (lx.iter().cloned().fold(f64::INFINITY, f64::min), lx.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    let (mut y0, mut y1) = (ly.iter().cloned().fold(f64::INFINITY, f64::min), ly.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    x0 = x0.floor() - 0.5;
    x1 = x1.ceil() + 0.5;
    y0 = y0.floor();
    y1 = y1.ceil().max(y0 + 1.0);
    let px = |lx: f64| LEFT + (lx - x0) / (x1 - x0) * (WIDTH - LEFT - RIGHT);
    let py = |ly: f64| HEIGHT - BOTTOM - (ly - y0) / (y1 - y0) * (HEIGHT - TOP - BOTTOM);

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, WIDTH / 2.0, escape(title));
    let (ax0, ax1, ay0, ay1) = (px(x0), px(x1), py(y0), py(y1));
    let _ = writeln!(svg, r#"<rect x="{ax0:.1}" y="{ay1:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#, ax1 - ax0, ay0 - ay1);
    for k in (x0.ceil() as i64)..=(x1.floor() as i64) {
        let x = px(k as f64);
        let _ = writeln!(svg, r##"<line x1="{x:.1}" y1="{ay0:.1}" x2="{x:.1}" y2="{ay1:.1}" stroke="#ddd"/>"##);
        let _ = writeln!(svg, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">2^{k}</text>"#, ay0 + 16.0);
    }
    for k in (y0 as i64)..=(y1 as i64) {
        let y = py(k as f64);
        let _ = writeln!(svg, r##"<line x1="{ax0:.1}" y1="{y:.1}" x2="{ax1:.1}" y2="{y:.1}" stroke="#ddd"/>"##);
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">1e{k}</text>"#, ax0 - 6.0, y + 4.0);
    }
    let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">sample budget T</text>"#, (ax0 + ax1) / 2.0, HEIGHT - 12.0);
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        (ay0 + ay1) / 2.0,
        (ay0 + ay1) / 2.0,
        escape(y_label)
    );

    // Reference slope -1/2 through the first plotted point.
    let (rx, ry) = (lx[0], ly[0]);
    let ref_y = |x: f64| ry - 0.5 * (x - rx) * 2f64.log10();
    let _ = writeln!(
        svg,
        r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#888" stroke-dasharray="6 4"/>"##,
        px(x0),
        py(ref_y(x0)),
        px(x1),
        py(ref_y(x1))
    );

    let mut fits = Vec::new();
    let mut legend_y = ay1 + 16.0;
    let _ = writeln!(svg, r##"<text x="{:.1}" y="{legend_y:.1}" fill="#888">-- slope -1/2 reference</text>"##, ax1 - 200.0);
    for (i, s) in cleaned.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        for &(x, y) in &s.points {
            let _ = writeln!(svg, r#"<circle cx="{:.1}" cy="{:.1}" r="4" fill="{color}"/>"#, px(x.log2()), py(y.log10()));
        }
        let slope = if s.points.len() >= 2 {
            let (xs, ys): (Vec<f64>, Vec<f64>) = s.points.iter().cloned().unzip();
            log_log_slope(&xs, &ys).ok()
        } else {
            None
        };
        if let Some(b) = slope {
            // Line through the centroid in log-log coordinates.
            let n = s.points.len() as f64;
            let cx = s.points.iter().map(|p| p.0.log2()).sum::<f64>() / n;
            let cy = s.points.iter().map(|p| p.1.log10()).sum::<f64>() / n;
            let fit = |x: f64| cy + b * (x - cx) * 2f64.log10();
            let (fx0, fx1) = (s.points.iter().map(|p| p.0.log2()).fold(f64::INFINITY, f64::min), s.points.iter().map(|p| p.0.log2()).fold(f64::NEG_INFINITY, f64::max));
            let _ = writeln!(
                svg,
                r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{color}"/>"#,
                px(fx0),
                py(fit(fx0)),
                px(fx1),
                py(fit(fx1))
            );
        }
        legend_y += 16.0;
        let note = slope.map(|b| format!(" (slope {b:.3})")).unwrap_or_default();
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{legend_y:.1}" fill="{color}">{}{}</text>"#, ax1 - 200.0, escape(&s.label), note);
        fits.push(FittedSeries { label: s.label.clone(), n_points: s.points.len(), slope });
    }
    svg.push_str("</svg>\n");
    Ok(Plot { svg, fits })
}

#[derive(Serialize)]
pub struct PlotReport {
    pub gap: Vec<FittedSeries>,
    pub violation: Vec<FittedSeries>,
}

/// Reads sweep summaries and writes `avg_gap.svg` and `avg_violation.svg` to `out`.
pub fn plot_summaries(paths: &[impl AsRef<Path>], out: &Path) -> Result<PlotReport> {
    if paths.is_empty() {
        return Err(Error::Config("plot needs at least one summary".into()));
    }
    let mut gap = Vec::new();
    let mut viol = Vec::new();
    for p in paths {
        let p = p.as_ref();
        let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
        let doc: serde_json::Value = serde_json::from_str(&text)?;
        let label = doc
            .pointer("/config_echo/name")
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .unwrap_or_else(|| p.display().to_string());
        gap.push(series_from_summary(&label, &doc, "median_avg_gap")?);
        viol.push(series_from_summary(&label, &doc, "median_avg_violation")?);
    }
    let g = render("Time-averaged optimality gap", "median avg gap", &gap)?;
    let v = render("Time-averaged constraint violation", "median avg violation", &viol)?;
    crate::output::write_atomic(&out.join("avg_gap.svg"), g.svg.as_bytes())?;
    crate::output::write_atomic(&out.join("avg_violation.svg"), v.svg.as_bytes())?;
    Ok(PlotReport { gap: g.fits, violation: v.fits })
}

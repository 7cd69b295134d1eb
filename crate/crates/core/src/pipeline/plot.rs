//! Scatter plots of two trial metrics: a CSV of the points and a standalone
//! 800x600 SVG with Pareto points highlighted.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::rundir::{write_atomic, RunLock};
use super::trials::{read_trials, TRIALS_CSV};
use super::{metric_sense, pareto_flags_2d, PipelineError};
use crate::moo::Sense;

pub const PLOT_DIR: &str = "plots";
pub const WIDTH: f64 = 800.0;
pub const HEIGHT: f64 = 600.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 30.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

#[derive(Clone, Debug, PartialEq)]
pub struct PlotPoint {
    pub key: String,
    pub x: f64,
    pub y: f64,
    pub pareto: bool,
}

pub struct PlotOutput {
    pub csv: PathBuf,
    pub svg: PathBuf,
    pub points: Vec<PlotPoint>,
}

/// Short tick label: integers as integers, otherwise up to four
/// significant digits.
fn tick_label(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if v.abs() >= 1e6 || v.abs() < 1e-3 {
        return format!("{v:.2e}");
    }
    if (v - v.round()).abs() < 1e-9 {
        return format!("{}", v.round() as i64);
    }
    let digits = (3 - v.abs().log10().floor() as i32).max(0) as usize;
    let s = format!("{v:.digits$}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Round-number ticks covering `[lo, hi]`.
fn linear_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= 6.0)
        .unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + step * 1e-9 {
        out.push(if t.abs() < step * 1e-9 { 0.0 } else { t });
        t += step;
    }
    out
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn new(values: impl Iterator<Item = f64>, log: bool) -> Self {
        let vals: Vec<f64> = values.map(|v| if log { v.log10() } else { v }).collect();
        let mut lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let mut hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(hi > lo) {
            let pad = if lo == 0.0 || log { 1.0 } else { lo.abs() * 0.1 };
            lo -= pad;
            hi += pad;
        } else {
            let pad = 0.05 * (hi - lo);
            lo -= pad;
            hi += pad;
        }
        Self { lo, hi, log }
    }

    fn frac(&self, v: f64) -> f64 {
        let v = if self.log { v.log10() } else { v };
        (v - self.lo) / (self.hi - self.lo)
    }

    fn ticks(&self) -> Vec<f64> {
        if self.log {
            (self.lo.ceil() as i32..=self.hi.floor() as i32)
                .map(|e| 10f64.powi(e))
                .collect()
        } else {
            linear_ticks(self.lo, self.hi)
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn render_svg(points: &[PlotPoint], x_name: &str, y_name: &str, log_x: bool) -> String {
    let ax = Axis::new(points.iter().map(|p| p.x), log_x);
    let ay = Axis::new(points.iter().map(|p| p.y), false);
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let px = |v: f64| LEFT + ax.frac(v) * pw;
    let py = |v: f64| TOP + (1.0 - ay.frac(v)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{} vs {}</text>"#,
        WIDTH / 2.0,
        escape(y_name),
        escape(x_name)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for t in ax.ticks() {
        let x = px(t);
        let _ = writeln!(
            s,
            r##"<line x1="{x:.2}" y1="{y0}" x2="{x:.2}" y2="{y1}" stroke="#ccc"/><text x="{x:.2}" y="{ty}" text-anchor="middle">{}</text>"##,
            tick_label(t),
            y0 = TOP,
            y1 = TOP + ph,
            ty = TOP + ph + 18.0
        );
    }
    for t in ay.ticks() {
        let y = py(t);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{x1}" y2="{y:.2}" stroke="#ccc"/><text x="{tx}" y="{ty:.2}" text-anchor="end">{}</text>"##,
            tick_label(t),
            x1 = LEFT + pw,
            tx = LEFT - 6.0,
            ty = y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 16.0,
        escape(x_name),
        if log_x { " (log scale)" } else { "" }
    );
    let _ = writeln!(
        s,
        r#"<text x="20" y="{}" text-anchor="middle" transform="rotate(-90 20 {})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(y_name)
    );
    for p in points.iter().filter(|p| !p.pareto) {
        let _ = writeln!(
            s,
            r##"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="#7f8c9a" fill-opacity="0.7"><title>{}</title></circle>"##,
            px(p.x),
            py(p.y),
            escape(&p.key)
        );
    }
    for p in points.iter().filter(|p| p.pareto) {
        let _ = writeln!(
            s,
            r##"<circle cx="{:.2}" cy="{:.2}" r="5.5" fill="#d62728" stroke="black"><title>{} (Pareto)</title></circle>"##,
            px(p.x),
            py(p.y),
            escape(&p.key)
        );
    }
    let lx = LEFT + pw - 150.0;
    let _ = writeln!(
        s,
        r##"<circle cx="{lx}" cy="{}" r="3.5" fill="#7f8c9a"/><text x="{}" y="{}">trial</text><circle cx="{lx}" cy="{}" r="5.5" fill="#d62728" stroke="black"/><text x="{}" y="{}">Pareto (2D)</text>"##,
        TOP + 15.0,
        lx + 10.0,
        TOP + 19.0,
        TOP + 33.0,
        lx + 10.0,
        TOP + 37.0
    );
    s.push_str("</svg>\n");
    s
}

/// One point per distinct genome key in `trials.csv`, flagged when it is
/// non-dominated within this pair of metrics alone.
pub fn cmd_plot(run: &Path, x: &str, y: &str, log_x: bool) -> Result<PlotOutput, PipelineError> {
    let trials_path = run.join(TRIALS_CSV);
    if !trials_path.is_file() {
        return Err(PipelineError::MissingArtifact(trials_path.display().to_string()));
    }
    let _lock = RunLock::acquire(run)?;
    let table = read_trials(&trials_path)?;
    for m in [x, y] {
        if !table.metric_columns.iter().any(|c| c == m) {
            return Err(PipelineError::UnknownMetric {
                name: m.into(),
                available: table.metric_columns.clone(),
            });
        }
    }
    let mut seen = HashSet::new();
    let mut points: Vec<PlotPoint> = Vec::new();
    for r in &table.rows {
        if !seen.insert(r.key.clone()) {
            continue;
        }
        let (Some(&vx), Some(&vy)) = (r.metrics.get(x), r.metrics.get(y)) else {
            continue;
        };
        points.push(PlotPoint {
            key: r.key.clone(),
            x: vx,
            y: vy,
            pareto: false,
        });
    }
    if log_x {
        if let Some(p) = points.iter().find(|p| !(p.x > 0.0)) {
            return Err(PipelineError::Usage(format!(
                "log-scale x needs positive values; `{}` has {x} = {}",
                p.key, p.x
            )));
        }
    }
    let senses = (
        metric_sense(x).unwrap_or(Sense::Minimize),
        metric_sense(y).unwrap_or(Sense::Minimize),
    );
    let xy: Vec<(f64, f64)> = points.iter().map(|p| (p.x, p.y)).collect();
    for (p, f) in points.iter_mut().zip(pareto_flags_2d(&xy, senses)) {
        p.pareto = f;
    }

    let dir = run.join(PLOT_DIR);
    fs::create_dir_all(&dir).map_err(PipelineError::io(&dir))?;
    let stem = format!("{x}_vs_{y}");
    let csv_path = dir.join(format!("{stem}.csv"));
    let svg_path = dir.join(format!("{stem}.svg"));
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| PipelineError::Internal(e.to_string());
    w.write_record(["genome_key", x, y, "is_pareto"]).map_err(err)?;
    for p in &points {
        w.write_record([p.key.clone(), p.x.to_string(), p.y.to_string(), p.pareto.to_string()])
            .map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| PipelineError::Internal(e.to_string()))?;
    write_atomic(&csv_path, &bytes)?;
    write_atomic(&svg_path, render_svg(&points, x, y, log_x).as_bytes())?;
    Ok(PlotOutput {
        csv: csv_path,
        svg: svg_path,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_are_round() {
        assert_eq!(linear_ticks(0.0, 10.0), vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
        assert_eq!(tick_label(0.25), "0.25");
        assert_eq!(tick_label(1000.0), "1000");
    }

    #[test]
    fn single_point_svg() {
        let p = vec![PlotPoint {
            key: "k".into(),
            x: 3.0,
            y: 0.5,
            pareto: true,
        }];
        let svg = render_svg(&p, "bops", "accuracy", true);
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains(r#"width="800" height="600""#));
        assert_eq!(svg.matches("(Pareto)").count(), 1);
    }
}

//! JSON and SVG rendering of an audit.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use super::{BiasFlag, Severity, SensorImportanceMap};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReportPaths {
    pub json: PathBuf,
    pub svg: PathBuf,
}

/// `{task, n_trials, importance:{HE:{mean,ci_low,ci_high},..}, flags, metrics}`.
pub fn report_json(map: &SensorImportanceMap, flags: &[BiasFlag], metrics: Option<&MetricsReport>) -> Value {
    let mut importance = Map::new();
    for s in &map.sensors {
        importance.insert(
            s.sensor.clone(),
            json!({ "mean": s.mean, "ci_low": s.ci_low, "ci_high": s.ci_high }),
        );
    }
    json!({
        "task": map.task,
        "n_trials": map.n_trials,
        "unit": map.unit,
        "importance": importance,
        "flags": flags,
        "metrics": metrics,
    })
}

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 320.0;
const LEFT: f64 = 56.0;
const TOP: f64 = 40.0;
const PLOT_H: f64 = 220.0;
const SLOT: f64 = 100.0;
const BAR_W: f64 = 56.0;

fn y_of(v: f64) -> f64 {
    TOP + PLOT_H * (1.0 - v.clamp(0.0, 1.0))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Bar chart of mean attention with CI whiskers; flagged sensors are drawn
/// in red with a marker above the bar.
pub fn render_svg(map: &SensorImportanceMap, flags: &[BiasFlag]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">Sensor importance: {} (n={})</text>"#,
        WIDTH / 2.0,
        escape(&map.task),
        map.n_trials
    );
    let base = y_of(0.0);
    let _ = writeln!(s, r#"<line class="axis" x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{base}" stroke="black"/>"#);
    let _ = writeln!(
        s,
        r#"<line class="axis" x1="{LEFT}" y1="{base}" x2="{}" y2="{base}" stroke="black"/>"#,
        LEFT + SLOT * map.sensors.len() as f64
    );
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let y = y_of(tick);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.2}" text-anchor="end">{tick:.2}</text>"#,
            LEFT - 6.0,
            y + 4.0
        );
    }
    for (i, sensor) in map.sensors.iter().enumerate() {
        let flagged = flags.iter().find(|f| f.sensor == sensor.sensor);
        let x = LEFT + SLOT * i as f64 + (SLOT - BAR_W) / 2.0;
        let cx = x + BAR_W / 2.0;
        let top = y_of(sensor.mean);
        let fill = if flagged.is_some() { "#d62728" } else { "#1f77b4" };
        let _ = writeln!(
            s,
            r#"<rect class="bar" data-sensor="{}" data-mean="{}" x="{x:.2}" y="{top:.2}" width="{BAR_W}" height="{:.2}" fill="{fill}"/>"#,
            sensor.sensor,
            sensor.mean,
            base - top
        );
        let (lo, hi) = (y_of(sensor.ci_low), y_of(sensor.ci_high));
        let _ = writeln!(
            s,
            r#"<g class="error-bar" data-sensor="{}" data-ci-low="{}" data-ci-high="{}" stroke="black"><line x1="{cx:.2}" y1="{lo:.2}" x2="{cx:.2}" y2="{hi:.2}"/><line x1="{:.2}" y1="{lo:.2}" x2="{:.2}" y2="{lo:.2}"/><line x1="{:.2}" y1="{hi:.2}" x2="{:.2}" y2="{hi:.2}"/></g>"#,
            sensor.sensor,
            sensor.ci_low,
            sensor.ci_high,
            cx - 8.0,
            cx + 8.0,
            cx - 8.0,
            cx + 8.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            base + 16.0,
            sensor.sensor
        );
        if let Some(f) = flagged {
            let mark = match f.severity {
                Severity::Critical => "!!",
                Severity::Warning => "!",
                Severity::Info => "i",
            };
            let _ = writeln!(
                s,
                r#"<text class="flag-marker" data-sensor="{}" data-severity="{}" x="{cx:.2}" y="{:.2}" text-anchor="middle" fill="{fill}" font-weight="bold"><title>{}</title>{mark}</text>"#,
                sensor.sensor,
                f.severity.as_str(),
                hi.min(top) - 8.0,
                escape(&f.rationale)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Write `<task>_audit.json` and `<task>_importance.svg` into `out_dir`.
pub fn render_report(
    map: &SensorImportanceMap,
    flags: &[BiasFlag],
    metrics: Option<&MetricsReport>,
    out_dir: &Path,
) -> Result<ReportPaths> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let stem: String = map
        .task
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    let paths = ReportPaths {
        json: out_dir.join(format!("{stem}_audit.json")),
        svg: out_dir.join(format!("{stem}_importance.svg")),
    };
    let mut text = serde_json::to_string_pretty(&report_json(map, flags, metrics)).map_err(|e| Error::json(&paths.json, e))?;
    text.push('\n');
    std::fs::write(&paths.json, text).map_err(|e| Error::io(&paths.json, e))?;
    std::fs::write(&paths.svg, render_svg(map, flags)).map_err(|e| Error::io(&paths.svg, e))?;
    Ok(paths)
}

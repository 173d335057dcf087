//! Calibration tables, scatter plots and summaries for a finished run.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vmfuq_core::calibration::ingest::{read_accuracy_csv, AccuracyTable};
use vmfuq_core::calibration::{calibration_report, CalibrationResult, Component};
use vmfuq_core::pipeline::UncertaintyReport;

use crate::error::{CliError, Result};
use crate::run::{RunManifest, TaskStatus, ACCURACY_CSV, CLIP_METRIC};
use crate::{to_json_bytes, write_atomic};

pub const CALIBRATION_CSV: &str = "calibration.csv";
pub const SCATTER_SVG: &str = "scatter.svg";
pub const SUMMARY_JSON: &str = "summary.json";

#[derive(Debug, Clone)]
pub struct ReportOptions {
    /// Accuracy metric; defaults to the only metric in the run, or `clip`.
    pub metric: Option<String>,
    pub component: Component,
    pub filter_k: Option<usize>,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            metric: None,
            component: Component::Total,
            filter_k: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub task_id: String,
    pub uncertainty: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub run_id: String,
    pub config_hash: String,
    #[serde(flatten)]
    pub calibration: CalibrationResult,
    pub points: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub calibration_csv: PathBuf,
    pub scatter_svg: PathBuf,
    pub summary_json: PathBuf,
}

/// The run manifest and the reports of every task that did not fail, in
/// manifest order.
pub fn load_reports(run_dir: &Path) -> Result<(RunManifest, Vec<UncertaintyReport>)> {
    let manifest = RunManifest::load(run_dir)?;
    let mut reports = Vec::new();
    for task in &manifest.tasks {
        if task.status == TaskStatus::Failed {
            continue;
        }
        let rel = task.report.as_deref().ok_or_else(|| {
            CliError::Usage(format!("task {} has no report path in the run manifest", task.task_id))
        })?;
        reports.push(serde_json::from_slice(&std::fs::read(run_dir.join(rel))?)?);
    }
    Ok((manifest, reports))
}

fn choose_metric(table: &AccuracyTable, requested: Option<&str>) -> Result<String> {
    if let Some(m) = requested {
        return Ok(m.to_string());
    }
    let names: Vec<&str> = table.metric_names().collect();
    match names.as_slice() {
        [] => Ok(CLIP_METRIC.to_string()),
        [only] => Ok(only.to_string()),
        _ => Err(CliError::Usage(format!(
            "run has several accuracy metrics ({}); pick one with --metric",
            names.join(", ")
        ))),
    }
}

/// Computes the calibration summary without writing anything.
pub fn calibrate(run_dir: &Path, options: &ReportOptions) -> Result<Summary> {
    let (manifest, reports) = load_reports(run_dir)?;
    let table = read_accuracy_csv(run_dir.join(ACCURACY_CSV))?;
    let metric = choose_metric(&table, options.metric.as_deref())?;
    let empty = BTreeMap::new();
    let accuracies = table.metric(&metric).unwrap_or(&empty);
    let calibration = calibration_report(&reports, accuracies, &metric, options.component, options.filter_k)?;
    let by_id: BTreeMap<&str, &UncertaintyReport> = reports.iter().map(|r| (r.task_id.as_str(), r)).collect();
    let points = calibration
        .task_ids
        .iter()
        .map(|id| Point {
            task_id: id.clone(),
            uncertainty: options.component.of(by_id[id.as_str()]),
            accuracy: accuracies[id],
        })
        .collect();
    Ok(Summary {
        run_id: manifest.run_id,
        config_hash: manifest.config_hash,
        calibration,
        points,
    })
}

pub fn calibration_csv(summary: &Summary) -> Result<Vec<u8>> {
    let c = &summary.calibration;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["component", "metric", "tau", "p_value", "n"])?;
    w.write_record([
        c.component.as_str().to_string(),
        c.metric_name.clone(),
        c.tau.to_string(),
        c.p_value.to_string(),
        c.n_tasks.to_string(),
    ])?;
    w.into_inner().map_err(|e| CliError::Io(e.into_error()))
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// 1-based ranks, ties broken by position.
fn ranks(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut out = vec![0; values.len()];
    for (rank, i) in order.into_iter().enumerate() {
        out[i] = rank + 1;
    }
    out
}

fn extent(values: &[f64]) -> (f64, f64) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, lo + 0.5)
    }
}

/// Uncertainty on x, accuracy on y; each point is labelled with its
/// uncertainty rank and accuracy rank.
pub fn scatter_svg(summary: &Summary) -> String {
    const W: f64 = 640.0;
    const H: f64 = 480.0;
    const M: f64 = 60.0;
    let c = &summary.calibration;
    let xs: Vec<f64> = summary.points.iter().map(|p| p.uncertainty).collect();
    let ys: Vec<f64> = summary.points.iter().map(|p| p.accuracy).collect();
    let (x0, x1) = extent(&xs);
    let (y0, y1) = extent(&ys);
    let px = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
    let py = |y: f64| H - M - (y - y0) / (y1 - y0) * (H - 2.0 * M);
    let (rx, ry) = (ranks(&xs), ranks(&ys));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(
        s,
        r#"<line x1="{M}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/>"#,
        b = H - M,
        r = W - M
    );
    let _ = writeln!(s, r#"<line x1="{M}" y1="{M}" x2="{M}" y2="{b}" stroke="black"/>"#, b = H - M);
    for (x, anchor) in [(x0, "start"), (x1, "end")] {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="{anchor}">{x:.4}</text>"#,
            px(x),
            H - M + 16.0
        );
    }
    for y in [y0, y1] {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{y:.4}</text>"#,
            M - 4.0,
            py(y) + 3.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{} uncertainty (nats)</text>"#,
        W / 2.0,
        H - 16.0,
        c.component.as_str()
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(&c.metric_name)
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="30" text-anchor="middle" font-size="12">tau = {:.4}, p = {:.4e}, n = {}</text>"#,
        W / 2.0,
        c.tau,
        c.p_value,
        c.n_tasks
    );
    for (i, p) in summary.points.iter().enumerate() {
        let (x, y) = (px(p.uncertainty), py(p.accuracy));
        let _ = writeln!(
            s,
            r#"<circle cx="{x:.2}" cy="{y:.2}" r="3"><title>{}</title></circle>"#,
            escape(&p.task_id)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="8">{}/{}</text>"#,
            x + 4.0,
            y - 4.0,
            rx[i],
            ry[i]
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `calibration.csv`, `scatter.svg` and `summary.json` into `out`
/// (the run directory by default). Nothing is written when calibration
/// fails.
pub fn report(run_dir: &Path, options: &ReportOptions, out: Option<&Path>) -> Result<ReportFiles> {
    let summary = calibrate(run_dir, options)?;
    let csv = calibration_csv(&summary)?;
    let svg = scatter_svg(&summary);
    let json = to_json_bytes(&summary)?;
    let out = out.unwrap_or(run_dir);
    let files = ReportFiles {
        calibration_csv: out.join(CALIBRATION_CSV),
        scatter_svg: out.join(SCATTER_SVG),
        summary_json: out.join(SUMMARY_JSON),
    };
    write_atomic(&files.calibration_csv, &csv)?;
    write_atomic(&files.scatter_svg, svg.as_bytes())?;
    write_atomic(&files.summary_json, &json)?;
    Ok(files)
}

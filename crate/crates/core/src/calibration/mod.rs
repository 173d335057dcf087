//! Calibration of uncertainty against accuracy via Kendall's τ-b.

pub mod ingest;
pub mod kendall;
pub mod metrics;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::UncertaintyReport;

pub use ingest::{read_accuracy_csv, write_accuracy_csv, AccuracyRow, AccuracyTable};
pub use kendall::{kendall_tau_b, KendallResult, PValueMethod};
pub use metrics::{clip_score, psnr, ssim, video_metric, FrameImage, FrameMetric, PSNR_MAX};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    #[default]
    Total,
    Aleatoric,
    Epistemic,
}

impl Component {
    pub fn of(self, report: &UncertaintyReport) -> f64 {
        match self {
            Component::Total => report.total,
            Component::Aleatoric => report.aleatoric,
            Component::Epistemic => report.epistemic,
        }
    }

    /// The component held near zero when filtering for this one.
    pub fn complement(self) -> Option<Component> {
        match self {
            Component::Total => None,
            Component::Aleatoric => Some(Component::Epistemic),
            Component::Epistemic => Some(Component::Aleatoric),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Component::Total => "total",
            Component::Aleatoric => "aleatoric",
            Component::Epistemic => "epistemic",
        }
    }
}

impl std::str::FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "total" => Ok(Component::Total),
            "aleatoric" => Ok(Component::Aleatoric),
            "epistemic" => Ok(Component::Epistemic),
            other => Err(Error::Config(format!(
                "component must be total, aleatoric or epistemic, got {other:?}"
            ))),
        }
    }
}

/// Expected sign of τ for a calibrated estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Negative,
    Positive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub tau: f64,
    pub p_value: f64,
    pub n_tasks: usize,
    pub metric_name: String,
    pub component: Component,
    pub direction: Direction,
    pub p_method: PValueMethod,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter_k: Option<usize>,
    /// Task ids that entered the correlation, in report order.
    pub task_ids: Vec<String>,
}

/// τ-b between uncertainty and accuracy; the expected direction is negative.
pub fn kendall_tau(pairs: &[(f64, f64)]) -> Result<CalibrationResult> {
    let (u, a): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    let r = kendall_tau_b(&u, &a)?;
    Ok(CalibrationResult {
        tau: r.tau,
        p_value: r.p_value,
        n_tasks: r.n,
        metric_name: String::new(),
        component: Component::Total,
        direction: Direction::Negative,
        p_method: r.method,
        filter_k: None,
        task_ids: Vec::new(),
    })
}

/// Default subset size for filtered calibration: `⌈n/4⌉`.
pub fn default_filter_k(n_tasks: usize) -> usize {
    n_tasks.div_ceil(4)
}

/// Correlates one uncertainty component with accuracy across reports.
///
/// With `filter_k`, only tasks whose complementary component is at most the
/// k-th smallest value are kept (ties at the threshold are all kept).
pub fn calibration_report(
    reports: &[UncertaintyReport],
    accuracies: &BTreeMap<String, f64>,
    metric_name: &str,
    component: Component,
    filter_k: Option<usize>,
) -> Result<CalibrationResult> {
    let missing: Vec<String> = reports
        .iter()
        .filter(|r| !accuracies.contains_key(&r.task_id))
        .map(|r| r.task_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingAccuracy(missing));
    }
    let mut selected: Vec<&UncertaintyReport> = reports.iter().collect();
    if let Some(k) = filter_k {
        let other = component.complement().ok_or_else(|| {
            Error::Config("filtering applies to the aleatoric or epistemic component only".into())
        })?;
        if k < 2 {
            return Err(Error::Config(format!("filter k must be >= 2, got {k}")));
        }
        if k < reports.len() {
            let mut values: Vec<f64> = reports.iter().map(|r| other.of(r)).collect();
            values.sort_by(f64::total_cmp);
            let threshold = values[k - 1];
            selected.retain(|r| other.of(r) <= threshold);
        }
    }
    let pairs: Vec<(f64, f64)> = selected
        .iter()
        .map(|r| (component.of(r), accuracies[&r.task_id]))
        .collect();
    let mut result = kendall_tau(&pairs)?;
    result.metric_name = metric_name.to_string();
    result.component = component;
    result.filter_k = filter_k;
    result.task_ids = selected.iter().map(|r| r.task_id.clone()).collect();
    Ok(result)
}

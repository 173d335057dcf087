//! Resumable, cached execution of a task manifest.
//!
//! Layout of a run directory:
//!
//! ```text
//! out/
//!   cache/                   content-addressed backend results
//!   reports/<task>.json      one UncertaintyReport per task
//!   reports/<task>.metrics.json  accuracies computed during the run
//!   accuracy.csv             precomputed and computed accuracies
//!   run-manifest.json
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use vmfuq_core::backends::cache::CacheStore;
use vmfuq_core::backends::{
    bounded_map, content_key, BackendIdentities, BackendKind, BackendSet, SyntheticWorld, VideoHandle,
};
use vmfuq_core::calibration::ingest::{write_accuracy_csv, AccuracyRow, AccuracyTable};
use vmfuq_core::calibration::metrics::clip_score;
use vmfuq_core::embedding::EmbeddingVector;
use vmfuq_core::pipeline::{Pipeline, PipelineConfig, ReportStatus, UncertaintyReport};

use crate::error::Result;
use crate::manifest::{GroundTruth, ManifestEntry, TaskManifestRow};
use crate::{to_json_bytes, write_atomic};

pub const RUN_MANIFEST: &str = "run-manifest.json";
pub const ACCURACY_CSV: &str = "accuracy.csv";
pub const REPORTS_DIR: &str = "reports";
pub const CACHE_DIR: &str = "cache";

/// Accuracy computed from the ground-truth embedding.
pub const CLIP_METRIC: &str = "clip";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskStatus {
    Ok,
    Partial,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: String,
    pub status: TaskStatus,
    /// Report path relative to the run directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// The report was reused from an earlier run with the same config.
    #[serde(default)]
    pub resumed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config_hash: String,
    pub seed: u64,
    pub backends: BackendIdentities,
    /// Seconds since the Unix epoch.
    pub started_at: u64,
    pub finished_at: u64,
    pub tasks: Vec<TaskRecord>,
}

impl RunManifest {
    pub fn load(run_dir: impl AsRef<Path>) -> Result<Self> {
        let path = run_dir.as_ref().join(RUN_MANIFEST);
        if !path.exists() {
            return Err(crate::CliError::NotARun(run_dir.as_ref().to_path_buf()));
        }
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    pub fn count(&self, status: TaskStatus) -> usize {
        self.tasks.iter().filter(|t| t.status == status).count()
    }

    /// 0 when every task is ok, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.tasks.iter().all(|t| t.status == TaskStatus::Ok) {
            0
        } else {
            2
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out: PathBuf,
    pub jobs: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub cache_hits: u64,
    pub cache_misses: u64,
}

/// File stem for a task id: the id itself when it is filesystem-safe,
/// otherwise a sanitized prefix plus a hash.
pub fn task_file_stem(task_id: &str) -> String {
    let safe: String = task_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .take(80)
        .collect();
    if safe == task_id && !task_id.starts_with('.') {
        safe
    } else {
        format!("{safe}-{}", &content_key(task_id)[..12])
    }
}

pub fn report_path(task_id: &str) -> String {
    format!("{REPORTS_DIR}/{}.json", task_file_stem(task_id))
}

fn metrics_path(task_id: &str) -> String {
    format!("{REPORTS_DIR}/{}.metrics.json", task_file_stem(task_id))
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Option<T> {
    serde_json::from_slice(&std::fs::read(path).ok()?).ok()
}

struct Runner<'a> {
    pipeline: Pipeline,
    config_hash: String,
    out: &'a Path,
    world: Option<SyntheticWorld>,
}

impl Runner<'_> {
    /// An ok report from an earlier run under the same config.
    fn resumable(&self, task_id: &str) -> Option<BTreeMap<String, f64>> {
        let report: UncertaintyReport = read_json(&self.out.join(report_path(task_id)))?;
        let metrics = read_json(&self.out.join(metrics_path(task_id)))?;
        (report.status == ReportStatus::Ok
            && report.task_id == task_id
            && report.provenance.config_hash == self.config_hash)
            .then_some(metrics)
    }

    fn ground_truth(&self, row: &TaskManifestRow) -> vmfuq_core::Result<Option<EmbeddingVector>> {
        match &row.ground_truth {
            Some(GroundTruth::Embedding { embedding }) => Ok(Some(EmbeddingVector::video(embedding.clone())?)),
            Some(GroundTruth::Video { video_id }) => {
                let handle = VideoHandle {
                    id: video_id.clone(),
                    storage_ref: video_id.clone(),
                    latent_id: String::new(),
                    embedding: None,
                };
                self.pipeline.backends().video_embedder.embed_video(&handle).map(Some)
            }
            None => Ok(self.world.as_ref().map(|w| w.ground_truth_embedding(&row.prompt))),
        }
    }

    fn execute(&self, row: &TaskManifestRow) -> vmfuq_core::Result<(UncertaintyReport, BTreeMap<String, f64>)> {
        let (report, videos) = self.pipeline.total_with_videos(&row.task_id, &row.prompt)?;
        let mut metrics = BTreeMap::new();
        if let Some(gt) = self.ground_truth(row)? {
            metrics.insert(CLIP_METRIC.to_string(), clip_score(&gt, &videos)?);
        }
        Ok((report, metrics))
    }

    fn task(&self, row: &TaskManifestRow) -> Result<(TaskRecord, BTreeMap<String, f64>)> {
        let report_rel = report_path(&row.task_id);
        if let Some(metrics) = self.resumable(&row.task_id) {
            let record = TaskRecord {
                task_id: row.task_id.clone(),
                status: TaskStatus::Ok,
                report: Some(report_rel),
                error: None,
                resumed: true,
            };
            return Ok((record, metrics));
        }
        match self.execute(row) {
            Ok((report, metrics)) => {
                write_atomic(&self.out.join(metrics_path(&row.task_id)), &to_json_bytes(&metrics)?)?;
                write_atomic(&self.out.join(&report_rel), &to_json_bytes(&report)?)?;
                let status = match report.status {
                    ReportStatus::Ok => TaskStatus::Ok,
                    ReportStatus::Partial => TaskStatus::Partial,
                };
                let record = TaskRecord {
                    task_id: row.task_id.clone(),
                    status,
                    report: Some(report_rel),
                    error: None,
                    resumed: false,
                };
                Ok((record, metrics))
            }
            Err(e) => {
                // a report left over from another config must not be picked up
                for stale in [report_rel, metrics_path(&row.task_id)] {
                    match std::fs::remove_file(self.out.join(stale)) {
                        Err(err) if err.kind() != std::io::ErrorKind::NotFound => return Err(err.into()),
                        _ => {}
                    }
                }
                let record = TaskRecord {
                    task_id: row.task_id.clone(),
                    status: TaskStatus::Failed,
                    report: None,
                    error: Some(e.to_string()),
                    resumed: false,
                };
                Ok((record, BTreeMap::new()))
            }
        }
    }
}

/// Runs every task, skipping those with an ok report under the same config
/// hash, and writes the run manifest and accuracy table.
pub fn run(entries: &[ManifestEntry], config: &PipelineConfig, options: &RunOptions) -> Result<RunOutcome> {
    config.validate()?;
    let started_at = now();
    let out = options.out.as_path();
    std::fs::create_dir_all(out.join(REPORTS_DIR))?;
    let store = Arc::new(CacheStore::open(out.join(CACHE_DIR))?);
    let backends = BackendSet::from_config(&config.backends)?.cached(store.clone());
    let world = match (&config.backends.video_embedder.kind, &config.backends.video_embedder.synthetic) {
        (BackendKind::Synthetic, Some(syn)) => Some(SyntheticWorld::new(syn.clone())?),
        _ => None,
    };
    let runner = Runner {
        pipeline: Pipeline::new(config.clone(), backends)?,
        config_hash: config.hash(),
        out,
        world,
    };
    let rows: Vec<&TaskManifestRow> = entries.iter().map(|e| &e.row).collect();
    let results = bounded_map(&rows, options.jobs.max(1), |row| runner.task(row));

    let mut table = AccuracyTable::default();
    let mut tasks = Vec::with_capacity(rows.len());
    for (row, result) in rows.iter().zip(results) {
        let (record, computed) = result?;
        if record.status != TaskStatus::Failed {
            let mut metrics = computed;
            // manifest values take precedence over computed ones
            metrics.extend(row.precomputed_accuracy.clone().unwrap_or_default());
            for (metric_name, value) in metrics {
                table.insert(AccuracyRow {
                    task_id: row.task_id.clone(),
                    metric_name,
                    value,
                })?;
            }
        }
        tasks.push(record);
    }
    let tmp = out.join(format!(".{ACCURACY_CSV}.{}.tmp", std::process::id()));
    write_accuracy_csv(&tmp, &table.rows())?;
    std::fs::rename(&tmp, out.join(ACCURACY_CSV))?;

    let config_hash = runner.config_hash.clone();
    let manifest = RunManifest {
        run_id: format!("{}-{started_at}", &config_hash[..12]),
        config_hash,
        seed: config.seed,
        backends: runner.pipeline.backends().identities(),
        started_at,
        finished_at: now(),
        tasks,
    };
    write_atomic(&out.join(RUN_MANIFEST), &to_json_bytes(&manifest)?)?;
    Ok(RunOutcome {
        manifest,
        cache_hits: store.hits(),
        cache_misses: store.misses(),
    })
}

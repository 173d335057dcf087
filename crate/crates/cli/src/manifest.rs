//! JSONL task manifests.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Reference output for a task, used for embedding-similarity accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GroundTruth {
    Embedding { embedding: Vec<f64> },
    Video { video_id: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskManifestRow {
    pub task_id: String,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<GroundTruth>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precomputed_accuracy: Option<BTreeMap<String, f64>>,
}

/// A manifest row with its 1-based line number.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub line: usize,
    pub row: TaskManifestRow,
}

/// Parses a JSONL manifest. Blank lines are skipped; every other line must
/// be one row.
pub fn ingest_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| CliError::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let row: TaskManifestRow = serde_json::from_str(raw).map_err(|e| parse_err(e.to_string()))?;
        if row.task_id.is_empty() {
            return Err(parse_err("empty task_id".into()));
        }
        if row.prompt.trim().is_empty() {
            return Err(parse_err("empty prompt".into()));
        }
        if let Some(first) = seen.insert(row.task_id.clone(), line) {
            return Err(CliError::DuplicateTask {
                task_id: row.task_id,
                first,
                second: line,
            });
        }
        out.push(ManifestEntry { line, row });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(lines: &[&str]) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), lines.join("\n")).unwrap();
        f
    }

    #[test]
    fn two_rows_in_order() {
        let f = write(&[
            r#"{"task_id": "b", "prompt": "a dog", "category": "animals"}"#,
            r#"{"task_id": "a", "prompt": "soup", "precomputed_accuracy": {"ssim": 0.5}}"#,
        ]);
        let rows = ingest_manifest(f.path()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!((rows[0].row.task_id.as_str(), rows[0].line), ("b", 1));
        assert_eq!(rows[1].row.precomputed_accuracy.as_ref().unwrap()["ssim"], 0.5);
    }

    #[test]
    fn missing_prompt_names_the_line() {
        let f = write(&[r#"{"task_id": "a", "prompt": "x"}"#, r#"{"task_id": "b"}"#]);
        let err = ingest_manifest(f.path()).unwrap_err();
        assert!(matches!(err, CliError::Parse { line: 2, .. }), "{err}");
        assert!(err.to_string().contains(":2:"));
    }

    #[test]
    fn duplicate_names_both_lines() {
        let mut lines = vec![];
        for i in 0..7 {
            lines.push(format!(r#"{{"task_id": "t{}", "prompt": "p{i}"}}"#, if i == 6 { 2 } else { i }));
        }
        let refs: Vec<&str> = lines.iter().map(String::as_str).collect();
        let f = write(&refs);
        match ingest_manifest(f.path()).unwrap_err() {
            CliError::DuplicateTask { task_id, first, second } => {
                assert_eq!((task_id.as_str(), first, second), ("t2", 3, 7));
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn ground_truth_forms() {
        let f = write(&[
            r#"{"task_id": "a", "prompt": "x", "ground_truth": {"embedding": [1.0, 0.0]}}"#,
            r#"{"task_id": "b", "prompt": "y", "ground_truth": {"video_id": "v7"}}"#,
        ]);
        let rows = ingest_manifest(f.path()).unwrap();
        assert!(matches!(rows[0].row.ground_truth, Some(GroundTruth::Embedding { .. })));
        assert!(matches!(rows[1].row.ground_truth, Some(GroundTruth::Video { .. })));
    }
}

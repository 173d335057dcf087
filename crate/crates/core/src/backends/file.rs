//! Precomputed backend results loaded from a JSONL manifest.
//!
//! One object per line: `{"kind": ..., "key": ..., "value": ...}`.
//!
//! | kind              | key                                   | value                                     |
//! |-------------------|---------------------------------------|-------------------------------------------|
//! | `expansion`       | content key of the user prompt        | array of latent prompt strings            |
//! | `text_embedding`  | content key of the text               | array of reals                            |
//! | `video`           | video id                              | `{"latent_key": ..., "storage_ref": ...}` |
//! | `video_embedding` | video id                              | array of reals                            |
//!
//! Content keys are [`content_key`]: SHA-256 hex of the whitespace-canonical
//! text. A `video` row may give `latent_text` instead of `latent_key`.

use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    content_key, LatentPrompt, PromptExpander, TextEmbedder, VideoEmbedder, VideoGenerator,
    VideoHandle,
};
use crate::embedding::{EmbeddingSource, EmbeddingVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManifestKind {
    Expansion,
    TextEmbedding,
    Video,
    VideoEmbedding,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestRow {
    pub kind: ManifestKind,
    pub key: String,
    pub value: serde_json::Value,
}

#[derive(Debug, Clone, Deserialize)]
struct VideoRow {
    #[serde(default)]
    latent_key: Option<String>,
    #[serde(default)]
    latent_text: Option<String>,
    #[serde(default)]
    storage_ref: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct FileBackend {
    path: PathBuf,
    expansions: HashMap<String, Vec<String>>,
    text_embeddings: HashMap<String, Vec<f64>>,
    videos: HashMap<String, Vec<(String, String)>>,
    video_embeddings: HashMap<String, Vec<f64>>,
}

impl FileBackend {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)?;
        let mut backend = FileBackend {
            path: path.to_path_buf(),
            ..Default::default()
        };
        let mut text_dim = None;
        let mut video_dim = None;
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let lineno = i + 1;
            let row: ManifestRow = serde_json::from_str(&line).map_err(|e| {
                Error::MalformedResponse(format!("{}:{lineno}: {e}", path.display()))
            })?;
            let bad = |what: &str| {
                Error::MalformedResponse(format!("{}:{lineno}: {what}", path.display()))
            };
            match row.kind {
                ManifestKind::Expansion => {
                    let texts: Vec<String> = serde_json::from_value(row.value)
                        .map_err(|_| bad("expansion value must be an array of strings"))?;
                    backend.expansions.insert(row.key, texts);
                }
                ManifestKind::TextEmbedding => {
                    let v: Vec<f64> = serde_json::from_value(row.value)
                        .map_err(|_| bad("embedding value must be an array of numbers"))?;
                    check_dim(&mut text_dim, v.len())?;
                    backend.text_embeddings.insert(row.key, v);
                }
                ManifestKind::VideoEmbedding => {
                    let v: Vec<f64> = serde_json::from_value(row.value)
                        .map_err(|_| bad("embedding value must be an array of numbers"))?;
                    check_dim(&mut video_dim, v.len())?;
                    backend.video_embeddings.insert(row.key, v);
                }
                ManifestKind::Video => {
                    let v: VideoRow = serde_json::from_value(row.value)
                        .map_err(|_| bad("video value must be an object"))?;
                    let latent_key = match (v.latent_key, v.latent_text) {
                        (Some(k), _) => k,
                        (None, Some(t)) => content_key(&t),
                        (None, None) => return Err(bad("video row needs latent_key or latent_text")),
                    };
                    let storage = v.storage_ref.unwrap_or_else(|| row.key.clone());
                    backend.videos.entry(latent_key).or_default().push((row.key, storage));
                }
            }
        }
        Ok(backend)
    }

    fn identity_string(&self) -> String {
        format!("file:{}", self.path.display())
    }
}

fn check_dim(seen: &mut Option<usize>, dim: usize) -> Result<()> {
    match *seen {
        Some(d) if d != dim => Err(Error::DimensionMismatch { expected: d, got: dim }),
        _ => {
            *seen = Some(dim);
            Ok(())
        }
    }
}

impl PromptExpander for FileBackend {
    fn identity(&self) -> String {
        self.identity_string()
    }

    fn expand(&self, prompt: &str, count: usize, _seed: u64) -> Result<Vec<String>> {
        let key = content_key(prompt);
        let stored = self.expansions.get(&key).ok_or_else(|| {
            Error::MalformedResponse(format!("no stored expansion for prompt {prompt:?} (key {key})"))
        })?;
        if stored.len() < count {
            return Err(Error::MalformedResponse(format!(
                "stored expansion for {prompt:?} has {} prompts, {count} requested (short by {})",
                stored.len(),
                count - stored.len()
            )));
        }
        Ok(stored[..count].to_vec())
    }
}

impl TextEmbedder for FileBackend {
    fn identity(&self) -> String {
        self.identity_string()
    }

    fn embed_text(&self, prompts: &[String]) -> Result<Vec<EmbeddingVector>> {
        if prompts.is_empty() {
            return Err(Error::Domain("nothing to embed".into()));
        }
        prompts
            .iter()
            .map(|p| {
                let key = content_key(p);
                let v = self.text_embeddings.get(&key).ok_or_else(|| {
                    Error::BackendUnreachable(format!("no stored text embedding for key {key}"))
                })?;
                EmbeddingVector::new(v.clone(), EmbeddingSource::Text)
            })
            .collect()
    }
}

impl VideoGenerator for FileBackend {
    fn identity(&self) -> String {
        self.identity_string()
    }

    fn generate_videos(&self, latent: &LatentPrompt, count: usize, _seed: u64) -> Result<Vec<VideoHandle>> {
        let key = content_key(&latent.text);
        let stored = self.videos.get(&key).map(Vec::as_slice).unwrap_or_default();
        if stored.len() < count {
            return Err(Error::MalformedResponse(format!(
                "manifest lists {} videos for latent {}, {count} requested",
                stored.len(),
                latent.id
            )));
        }
        Ok(stored[..count]
            .iter()
            .map(|(id, storage)| VideoHandle {
                id: id.clone(),
                storage_ref: storage.clone(),
                latent_id: latent.id.clone(),
                embedding: None,
            })
            .collect())
    }
}

impl VideoEmbedder for FileBackend {
    fn identity(&self) -> String {
        self.identity_string()
    }

    fn embed_video(&self, handle: &VideoHandle) -> Result<EmbeddingVector> {
        if let Some(e) = &handle.embedding {
            return Ok(e.clone());
        }
        let v = self
            .video_embeddings
            .get(&handle.id)
            .ok_or_else(|| Error::MissingVideo(handle.id.clone()))?;
        EmbeddingVector::new(v.clone(), EmbeddingSource::Video)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::expand_prompt;
    use serde_json::json;
    use std::io::Write;

    fn write_manifest(rows: &[serde_json::Value]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for r in rows {
            writeln!(f, "{r}").unwrap();
        }
        f
    }

    #[test]
    fn expansion_shortfall_is_reported() {
        let texts: Vec<String> = (0..8).map(|i| format!("a cat variant {i}")).collect();
        let f = write_manifest(&[json!({"kind": "expansion", "key": content_key("a cat"), "value": texts})]);
        let backend = FileBackend::load(f.path()).unwrap();
        assert_eq!(expand_prompt(&backend, "a cat", 8, 0).unwrap().len(), 8);
        let err = expand_prompt(&backend, "a cat", 10, 0).unwrap_err();
        assert!(matches!(err, Error::MalformedResponse(ref m) if m.contains("short by 2")), "{err}");
    }

    #[test]
    fn videos_follow_manifest_order() {
        let latent = LatentPrompt::new(0, "a cat napping".into(), "a cat").unwrap();
        let key = content_key(&latent.text);
        let mut rows: Vec<serde_json::Value> = (0..4)
            .map(|i| json!({"kind": "video", "key": format!("v{i}"), "value": {"latent_key": key, "storage_ref": format!("/data/v{i}.mp4")}}))
            .collect();
        rows.push(json!({"kind": "video_embedding", "key": "v0", "value": [1.0, 0.0, 0.0]}));
        let f = write_manifest(&rows);
        let backend = FileBackend::load(f.path()).unwrap();
        let handles = backend.generate_videos(&latent, 3, 0).unwrap();
        let ids: Vec<&str> = handles.iter().map(|h| h.id.as_str()).collect();
        assert_eq!(ids, ["v0", "v1", "v2"]);
        assert_eq!(handles[1].storage_ref, "/data/v1.mp4");
        assert!(backend.generate_videos(&latent, 5, 0).is_err());

        let first = backend.embed_video(&handles[0]).unwrap();
        assert_eq!(first, backend.embed_video(&handles[0]).unwrap());
        let err = backend.embed_video(&handles[1]).unwrap_err();
        assert!(matches!(err, Error::MissingVideo(ref id) if id == "v1"));
    }

    #[test]
    fn inconsistent_embedding_dims_rejected() {
        let f = write_manifest(&[
            json!({"kind": "text_embedding", "key": "a", "value": [1.0, 2.0]}),
            json!({"kind": "text_embedding", "key": "b", "value": [1.0, 2.0, 3.0]}),
        ]);
        assert!(matches!(FileBackend::load(f.path()), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn malformed_row_names_line() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "{}", json!({"kind": "expansion", "key": "k", "value": ["x"]})).unwrap();
        writeln!(f, "{{not json").unwrap();
        let err = FileBackend::load(f.path()).unwrap_err().to_string();
        assert!(err.contains(":2:"), "{err}");
    }
}

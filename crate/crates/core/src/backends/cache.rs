//! Content-addressed on-disk cache for backend results.
//!
//! Entries live at `root/<namespace>/<key[..2]>/<key>.json`. Writers take a
//! per-key lock file, write to a temporary file and rename it into place, so
//! concurrent runs never observe a partial entry. Keys hash the backend
//! identity together with every input and seed, so a hit returns exactly
//! what a cold call would.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, SystemTime};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{
    BackendSet, LatentPrompt, PromptExpander, TextEmbedder, VideoEmbedder, VideoGenerator,
    VideoHandle,
};
use crate::embedding::EmbeddingVector;
use crate::error::{Error, Result};

/// Locks older than this are assumed abandoned by a crashed process.
const STALE_LOCK: Duration = Duration::from_secs(600);

#[derive(Debug)]
pub struct CacheStore {
    root: PathBuf,
    hits: AtomicU64,
    misses: AtomicU64,
}

/// Hashes length-prefixed parts into a hex key.
pub fn cache_key(parts: &[&[u8]]) -> String {
    let mut hasher = Sha256::new();
    for p in parts {
        hasher.update((p.len() as u64).to_le_bytes());
        hasher.update(p);
    }
    hex::encode(hasher.finalize())
}

struct LockGuard(PathBuf);

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

impl CacheStore {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root)?;
        Ok(CacheStore {
            root,
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::SeqCst)
    }

    /// Number of lookups that had to call through to a backend.
    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::SeqCst)
    }

    fn entry_path(&self, namespace: &str, key: &str) -> PathBuf {
        self.root.join(namespace).join(&key[..2]).join(format!("{key}.json"))
    }

    fn read<T: DeserializeOwned>(path: &Path) -> Result<Option<T>> {
        match fs::read(path) {
            Ok(bytes) => Ok(serde_json::from_slice(&bytes).ok()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    fn lock(&self, path: &Path) -> Result<LockGuard> {
        let lock = path.with_extension("lock");
        loop {
            match OpenOptions::new().write(true).create_new(true).open(&lock) {
                Ok(_) => return Ok(LockGuard(lock)),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    let stale = fs::metadata(&lock)
                        .and_then(|m| m.modified())
                        .map(|t| SystemTime::now().duration_since(t).unwrap_or_default() > STALE_LOCK)
                        .unwrap_or(false);
                    if stale {
                        let _ = fs::remove_file(&lock);
                    } else {
                        std::thread::sleep(Duration::from_millis(5));
                    }
                }
                Err(e) => return Err(e.into()),
            }
        }
    }

    fn write_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&serde_json::to_vec(value)?)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Returns the cached value under `(namespace, key)` or computes, stores
    /// and returns it. Concurrent callers with the same key compute once.
    pub fn get_or_compute<T, F>(&self, namespace: &str, key: &str, compute: F) -> Result<T>
    where
        T: Serialize + DeserializeOwned,
        F: FnOnce() -> Result<T>,
    {
        let path = self.entry_path(namespace, key);
        if let Some(v) = Self::read(&path)? {
            self.hits.fetch_add(1, Ordering::SeqCst);
            return Ok(v);
        }
        fs::create_dir_all(path.parent().expect("entry has a parent"))?;
        let _guard = self.lock(&path)?;
        if let Some(v) = Self::read(&path)? {
            self.hits.fetch_add(1, Ordering::SeqCst);
            return Ok(v);
        }
        self.misses.fetch_add(1, Ordering::SeqCst);
        let value = compute()?;
        Self::write_atomic(&path, &value)?;
        Ok(value)
    }
}

pub struct CachedExpander {
    inner: Arc<dyn PromptExpander>,
    store: Arc<CacheStore>,
}

impl PromptExpander for CachedExpander {
    fn identity(&self) -> String {
        self.inner.identity()
    }

    fn expand(&self, prompt: &str, count: usize, seed: u64) -> Result<Vec<String>> {
        let key = cache_key(&[
            self.inner.identity().as_bytes(),
            super::canonicalize_text(prompt).as_bytes(),
            &(count as u64).to_le_bytes(),
            &seed.to_le_bytes(),
        ]);
        self.store
            .get_or_compute("expansion", &key, || self.inner.expand(prompt, count, seed))
    }
}

pub struct CachedTextEmbedder {
    inner: Arc<dyn TextEmbedder>,
    store: Arc<CacheStore>,
}

impl TextEmbedder for CachedTextEmbedder {
    fn identity(&self) -> String {
        self.inner.identity()
    }

    fn embed_text(&self, prompts: &[String]) -> Result<Vec<EmbeddingVector>> {
        let identity = self.inner.identity();
        prompts
            .iter()
            .map(|p| {
                let key = cache_key(&[identity.as_bytes(), super::canonicalize_text(p).as_bytes()]);
                self.store.get_or_compute("text_embedding", &key, || {
                    self.inner
                        .embed_text(std::slice::from_ref(p))?
                        .pop()
                        .ok_or_else(|| Error::MalformedResponse("embedder returned no vector".into()))
                })
            })
            .collect()
    }
}

pub struct CachedVideoGenerator {
    inner: Arc<dyn VideoGenerator>,
    store: Arc<CacheStore>,
}

impl VideoGenerator for CachedVideoGenerator {
    fn identity(&self) -> String {
        self.inner.identity()
    }

    fn generate_videos(&self, latent: &LatentPrompt, count: usize, seed: u64) -> Result<Vec<VideoHandle>> {
        let key = cache_key(&[
            self.inner.identity().as_bytes(),
            latent.text.as_bytes(),
            latent.id.as_bytes(),
            &(count as u64).to_le_bytes(),
            &seed.to_le_bytes(),
        ]);
        self.store
            .get_or_compute("video", &key, || self.inner.generate_videos(latent, count, seed))
    }
}

pub struct CachedVideoEmbedder {
    inner: Arc<dyn VideoEmbedder>,
    store: Arc<CacheStore>,
}

impl VideoEmbedder for CachedVideoEmbedder {
    fn identity(&self) -> String {
        self.inner.identity()
    }

    fn embed_video(&self, handle: &VideoHandle) -> Result<EmbeddingVector> {
        let key = cache_key(&[
            self.inner.identity().as_bytes(),
            handle.id.as_bytes(),
            handle.storage_ref.as_bytes(),
        ]);
        self.store
            .get_or_compute("video_embedding", &key, || self.inner.embed_video(handle))
    }
}

impl BackendSet {
    /// Wraps every role in a cache backed by `store`.
    pub fn cached(&self, store: Arc<CacheStore>) -> BackendSet {
        BackendSet {
            expander: Arc::new(CachedExpander {
                inner: self.expander.clone(),
                store: store.clone(),
            }),
            text_embedder: Arc::new(CachedTextEmbedder {
                inner: self.text_embedder.clone(),
                store: store.clone(),
            }),
            video_generator: Arc::new(CachedVideoGenerator {
                inner: self.video_generator.clone(),
                store: store.clone(),
            }),
            video_embedder: Arc::new(CachedVideoEmbedder {
                inner: self.video_embedder.clone(),
                store,
            }),
        }
    }
}

//! Pluggable external models: prompt expansion, text embedding, video
//! generation and video embedding.
//!
//! Each role is a trait with HTTP, file-backed (precomputed) and synthetic
//! implementations. Results align index-for-index with inputs, and every
//! implementation is deterministic given its inputs and seed.

pub mod cache;
pub mod file;
pub mod http;
pub mod synthetic;

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embedding::EmbeddingVector;
use crate::error::{Error, Result};
use crate::vmf::UnitVector;

pub use synthetic::{KappaLaw, SyntheticConfig, SyntheticWorld};

/// A fully specified prompt `z` refining a user prompt `ℓ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentPrompt {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<UnitVector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_embedding: Option<EmbeddingVector>,
    pub parent_prompt: String,
}

impl LatentPrompt {
    pub fn new(index: usize, text: String, parent_prompt: &str) -> Result<Self> {
        if text.trim().is_empty() {
            return Err(Error::MalformedResponse(format!("latent prompt {index} is empty")));
        }
        Ok(LatentPrompt {
            id: format!("z{index:03}"),
            text,
            embedding: None,
            raw_embedding: None,
            parent_prompt: parent_prompt.to_string(),
        })
    }
}

/// An opaque reference to one generated video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoHandle {
    pub id: String,
    pub storage_ref: String,
    pub latent_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<EmbeddingVector>,
}

pub trait PromptExpander: Send + Sync {
    /// Stable identity used in cache keys and provenance.
    fn identity(&self) -> String;
    /// Exactly `count` latent prompt texts for `prompt`.
    fn expand(&self, prompt: &str, count: usize, seed: u64) -> Result<Vec<String>>;
}

pub trait TextEmbedder: Send + Sync {
    fn identity(&self) -> String;
    fn embed_text(&self, prompts: &[String]) -> Result<Vec<EmbeddingVector>>;
}

pub trait VideoGenerator: Send + Sync {
    fn identity(&self) -> String;
    fn generate_videos(
        &self,
        latent: &LatentPrompt,
        count: usize,
        seed: u64,
    ) -> Result<Vec<VideoHandle>>;
}

pub trait VideoEmbedder: Send + Sync {
    fn identity(&self) -> String;
    fn embed_video(&self, handle: &VideoHandle) -> Result<EmbeddingVector>;
}

/// One implementation per backend role.
#[derive(Clone)]
pub struct BackendSet {
    pub expander: Arc<dyn PromptExpander>,
    pub text_embedder: Arc<dyn TextEmbedder>,
    pub video_generator: Arc<dyn VideoGenerator>,
    pub video_embedder: Arc<dyn VideoEmbedder>,
}

impl BackendSet {
    /// Identities of all four roles, in role order.
    pub fn identities(&self) -> BackendIdentities {
        BackendIdentities {
            expander: self.expander.identity(),
            text_embedder: self.text_embedder.identity(),
            video_generator: self.video_generator.identity(),
            video_embedder: self.video_embedder.identity(),
        }
    }

    /// Builds every role from its configuration.
    pub fn from_config(config: &BackendsConfig) -> Result<Self> {
        let budget = Arc::new(RequestBudget::new(config.request_budget));
        Ok(BackendSet {
            expander: build_expander(&config.expander, &budget)?,
            text_embedder: build_text_embedder(&config.text_embedder, &budget)?,
            video_generator: build_video_generator(&config.video_generator, &budget)?,
            video_embedder: build_video_embedder(&config.video_embedder, &budget)?,
        })
    }

    /// All four roles served by one synthetic world.
    pub fn synthetic(config: SyntheticConfig) -> Result<Self> {
        let world = Arc::new(SyntheticWorld::new(config)?);
        Ok(BackendSet {
            expander: world.clone(),
            text_embedder: world.clone(),
            video_generator: world.clone(),
            video_embedder: world,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendIdentities {
    pub expander: String,
    pub text_embedder: String,
    pub video_generator: String,
    pub video_embedder: String,
}

/// Expands `prompt` into `count` latent prompts.
pub fn expand_prompt(
    expander: &dyn PromptExpander,
    prompt: &str,
    count: usize,
    seed: u64,
) -> Result<Vec<LatentPrompt>> {
    if prompt.trim().is_empty() {
        return Err(Error::Domain("prompt must be nonempty".into()));
    }
    if count < 2 {
        return Err(Error::Domain(format!("need at least 2 latent prompts, got {count}")));
    }
    let texts = expander.expand(prompt, count, seed)?;
    if texts.len() < count {
        return Err(Error::MalformedResponse(format!(
            "expected {count} latent prompts, got {} (short by {})",
            texts.len(),
            count - texts.len()
        )));
    }
    texts
        .into_iter()
        .take(count)
        .enumerate()
        .map(|(i, text)| LatentPrompt::new(i, text, prompt))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    File,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_seconds: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            backoff_seconds: 1.0,
        }
    }
}

fn default_timeout() -> f64 {
    60.0
}

fn default_max_parallel() -> usize {
    4
}

/// Configuration of one backend role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_name: Option<String>,
    /// Name of the environment variable holding the API key.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credentials_env: Option<String>,
    /// Per-request timeout in seconds.
    #[serde(default = "default_timeout")]
    pub timeout: f64,
    #[serde(default = "default_max_parallel")]
    pub max_parallel: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
    /// JSONL manifest for the file kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticConfig>,
    /// Sampling temperature for prompt expansion over HTTP.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    /// Overrides the versioned expansion instruction template.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expansion_template: Option<String>,
}

impl BackendConfig {
    pub fn synthetic(config: SyntheticConfig) -> Self {
        BackendConfig {
            kind: BackendKind::Synthetic,
            endpoint: None,
            model_name: None,
            credentials_env: None,
            timeout: default_timeout(),
            max_parallel: default_max_parallel(),
            retry: RetryPolicy::default(),
            manifest: None,
            synthetic: Some(config),
            temperature: None,
            expansion_template: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_parallel < 1 {
            return Err(Error::Config("max_parallel must be >= 1".into()));
        }
        if self.timeout.is_nan() || self.timeout <= 0.0 {
            return Err(Error::Config("timeout must be positive".into()));
        }
        if self.retry.max_attempts < 1 {
            return Err(Error::Config("retry.max_attempts must be >= 1".into()));
        }
        match self.kind {
            BackendKind::Http if self.endpoint.is_none() => {
                Err(Error::Config("http backend requires an endpoint".into()))
            }
            BackendKind::File if self.manifest.is_none() => {
                Err(Error::Config("file backend requires a manifest path".into()))
            }
            BackendKind::Synthetic if self.synthetic.is_none() => {
                Err(Error::Config("synthetic backend requires a synthetic section".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Configuration for all four roles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendsConfig {
    pub expander: BackendConfig,
    pub text_embedder: BackendConfig,
    pub video_generator: BackendConfig,
    pub video_embedder: BackendConfig,
    /// Hard cap on HTTP requests per run, shared by all roles.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_budget: Option<u64>,
}

impl BackendsConfig {
    pub fn synthetic(config: SyntheticConfig) -> Self {
        let role = BackendConfig::synthetic(config);
        BackendsConfig {
            expander: role.clone(),
            text_embedder: role.clone(),
            video_generator: role.clone(),
            video_embedder: role,
            request_budget: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for role in [
            &self.expander,
            &self.text_embedder,
            &self.video_generator,
            &self.video_embedder,
        ] {
            role.validate()?;
        }
        Ok(())
    }
}

fn build_expander(cfg: &BackendConfig, budget: &Arc<RequestBudget>) -> Result<Arc<dyn PromptExpander>> {
    cfg.validate()?;
    Ok(match cfg.kind {
        BackendKind::Synthetic => Arc::new(SyntheticWorld::new(cfg.synthetic.clone().unwrap())?),
        BackendKind::File => Arc::new(file::FileBackend::load(cfg.manifest.as_ref().unwrap())?),
        BackendKind::Http => Arc::new(http::HttpExpander::new(http::HttpClient::from_config(cfg, budget.clone())?, cfg)),
    })
}

fn build_text_embedder(cfg: &BackendConfig, budget: &Arc<RequestBudget>) -> Result<Arc<dyn TextEmbedder>> {
    cfg.validate()?;
    Ok(match cfg.kind {
        BackendKind::Synthetic => Arc::new(SyntheticWorld::new(cfg.synthetic.clone().unwrap())?),
        BackendKind::File => Arc::new(file::FileBackend::load(cfg.manifest.as_ref().unwrap())?),
        BackendKind::Http => Arc::new(http::HttpTextEmbedder::new(http::HttpClient::from_config(cfg, budget.clone())?, cfg)),
    })
}

fn build_video_generator(cfg: &BackendConfig, budget: &Arc<RequestBudget>) -> Result<Arc<dyn VideoGenerator>> {
    cfg.validate()?;
    Ok(match cfg.kind {
        BackendKind::Synthetic => Arc::new(SyntheticWorld::new(cfg.synthetic.clone().unwrap())?),
        BackendKind::File => Arc::new(file::FileBackend::load(cfg.manifest.as_ref().unwrap())?),
        BackendKind::Http => Arc::new(http::HttpVideoGenerator::new(http::HttpClient::from_config(cfg, budget.clone())?)),
    })
}

fn build_video_embedder(cfg: &BackendConfig, budget: &Arc<RequestBudget>) -> Result<Arc<dyn VideoEmbedder>> {
    cfg.validate()?;
    Ok(match cfg.kind {
        BackendKind::Synthetic => Arc::new(SyntheticWorld::new(cfg.synthetic.clone().unwrap())?),
        BackendKind::File => Arc::new(file::FileBackend::load(cfg.manifest.as_ref().unwrap())?),
        BackendKind::Http => Arc::new(http::HttpVideoEmbedder::new(http::HttpClient::from_config(cfg, budget.clone())?)),
    })
}

/// A shared cap on outbound requests. `None` means unlimited.
#[derive(Debug)]
pub struct RequestBudget {
    limit: Option<u64>,
    used: AtomicU64,
}

impl RequestBudget {
    pub fn new(limit: Option<u64>) -> Self {
        RequestBudget {
            limit,
            used: AtomicU64::new(0),
        }
    }

    pub fn unlimited() -> Self {
        Self::new(None)
    }

    /// Reserves one request, failing once the cap is reached.
    pub fn take(&self) -> Result<()> {
        let prev = self.used.fetch_add(1, Ordering::SeqCst);
        match self.limit {
            Some(limit) if prev >= limit => {
                self.used.fetch_sub(1, Ordering::SeqCst);
                Err(Error::BudgetExhausted(limit))
            }
            _ => Ok(()),
        }
    }

    pub fn used(&self) -> u64 {
        self.used.load(Ordering::SeqCst)
    }
}

/// Maps `f` over `items` on at most `max_parallel` threads, preserving order.
pub fn bounded_map<T, R, F>(items: &[T], max_parallel: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = max_parallel.max(1).min(items.len());
    if workers <= 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let mut slots: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    let chunks: Vec<Vec<(usize, R)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                scope.spawn(|| {
                    let mut out = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::SeqCst);
                        if i >= items.len() {
                            break out;
                        }
                        out.push((i, f(&items[i])));
                    }
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker thread panicked"))
            .collect()
    });
    for (i, r) in chunks.into_iter().flatten() {
        slots[i] = Some(r);
    }
    slots.into_iter().map(|r| r.expect("every index visited")).collect()
}

/// Trims and collapses internal whitespace runs to single spaces.
pub fn canonicalize_text(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// SHA-256 hex of the canonicalized text.
pub fn content_key(text: &str) -> String {
    hex::encode(Sha256::digest(canonicalize_text(text).as_bytes()))
}

/// Derives a 64-bit seed from length-prefixed parts.
pub fn derive_seed(parts: &[&[u8]]) -> u64 {
    let mut hasher = Sha256::new();
    for p in parts {
        hasher.update((p.len() as u64).to_le_bytes());
        hasher.update(p);
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Duration;

    #[test]
    fn bounded_map_preserves_order_and_limit() {
        let inflight = AtomicUsize::new(0);
        let peak = AtomicUsize::new(0);
        let items: Vec<usize> = (0..40).collect();
        let out = bounded_map(&items, 3, |&i| {
            let now = inflight.fetch_add(1, Ordering::SeqCst) + 1;
            peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(2));
            inflight.fetch_sub(1, Ordering::SeqCst);
            i * 2
        });
        assert_eq!(out, items.iter().map(|i| i * 2).collect::<Vec<_>>());
        assert!(peak.load(Ordering::SeqCst) <= 3);
    }

    #[test]
    fn budget_caps_requests() {
        let budget = RequestBudget::new(Some(2));
        assert!(budget.take().is_ok());
        assert!(budget.take().is_ok());
        assert!(matches!(budget.take(), Err(Error::BudgetExhausted(2))));
        assert_eq!(budget.used(), 2);
    }

    #[test]
    fn content_key_canonicalizes_whitespace() {
        assert_eq!(content_key("  a  cat\tnapping "), content_key("a cat napping"));
        assert_ne!(content_key("a cat"), content_key("a dog"));
        assert_eq!(content_key("a cat").len(), 64);
    }

    #[test]
    fn config_validation() {
        let mut cfg = BackendConfig::synthetic(SyntheticConfig::default());
        assert!(cfg.validate().is_ok());
        cfg.kind = BackendKind::Http;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.endpoint = Some("http://localhost:1/v1/embeddings".into());
        assert!(cfg.validate().is_ok());
        cfg.max_parallel = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_field_names() {
        let json = r#"{"kind": "http", "endpoint": "http://x", "model_name": "m",
            "credentials_env": "API_KEY", "timeout": 5, "max_parallel": 2,
            "retry": {"max_attempts": 4, "backoff_seconds": 0.5}}"#;
        let cfg: BackendConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.retry.max_attempts, 4);
        assert_eq!(cfg.credentials_env.as_deref(), Some("API_KEY"));
        assert_eq!(cfg.max_parallel, 2);
    }
}

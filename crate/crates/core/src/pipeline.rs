//! End-to-end estimation of aleatoric, epistemic and total uncertainty for
//! one user prompt.
//!
//! Aleatoric: expand the prompt into `N` latent prompts, embed them, project
//! to the text target dimension, fit a VMF and take its entropy `h(Z|ℓ)`.
//!
//! Epistemic: for each latent, generate `m` videos, embed, project, fit and
//! take `h(V|Z=z)`; the estimate of `h(V|Z)` is the mean over latents.
//!
//! Total: both estimators run on one shared latent set and the total is
//! reported as `h(Z|ℓ) + h(V|Z)`.

use serde::{Deserialize, Serialize};

use crate::backends::{
    bounded_map, expand_prompt, BackendIdentities, BackendSet, BackendsConfig, LatentPrompt,
    SyntheticConfig,
};
use crate::embedding::{
    fit_projection_with, Centering, EmbeddingVector, ProjectionModel, DEFAULT_TARGET_DIM,
};
use crate::error::{Error, Result};
use crate::vmf::{fit_vmf, vmf_entropy, UnitVector, VmfParams};

fn default_n() -> usize {
    10
}

fn default_target() -> usize {
    DEFAULT_TARGET_DIM
}

/// Uncentered by default: per-task mean-centered PCA followed by
/// renormalization discards how tight the cluster was.
fn default_centering() -> Centering {
    Centering::None
}

fn default_backends() -> BackendsConfig {
    BackendsConfig::synthetic(SyntheticConfig::default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(default = "default_n")]
    pub n_latents: usize,
    #[serde(default = "default_n")]
    pub m_videos: usize,
    #[serde(default = "default_target")]
    pub text_target_dim: usize,
    #[serde(default = "default_target")]
    pub video_target_dim: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_centering")]
    pub projection_centering: Centering,
    #[serde(default = "default_backends")]
    pub backends: BackendsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            n_latents: default_n(),
            m_videos: default_n(),
            text_target_dim: default_target(),
            video_target_dim: default_target(),
            seed: 0,
            projection_centering: default_centering(),
            backends: default_backends(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_latents < 2 {
            return Err(Error::Config(format!("n_latents must be >= 2, got {}", self.n_latents)));
        }
        if self.m_videos < 2 {
            return Err(Error::Config(format!("m_videos must be >= 2, got {}", self.m_videos)));
        }
        if self.text_target_dim < 2 || self.video_target_dim < 2 {
            return Err(Error::Config("target dimensions must be >= 2".into()));
        }
        self.backends.validate()
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        crate::backends::cache::cache_key(&[json.as_bytes()])
    }

    /// Smallest number of latents that must survive video generation.
    pub fn min_surviving_latents(&self) -> usize {
        2.max(self.n_latents.div_ceil(2))
    }
}

/// Projects raw embeddings to unit vectors, fitting PCA only when the raw
/// dimension exceeds the target.
pub fn project_embeddings(
    raw: &[EmbeddingVector],
    target_dim: usize,
    centering: Centering,
) -> Result<(ProjectionModel, Vec<UnitVector>)> {
    let dim = raw
        .first()
        .ok_or(Error::InsufficientSamples { needed: 2, got: 0 })?
        .dim();
    let model = if dim <= target_dim {
        ProjectionModel::identity(dim)
    } else {
        fit_projection_with(raw, target_dim, centering)?
    };
    let units = raw
        .iter()
        .map(|v| {
            model.project(v).map_err(|e| match e {
                Error::ZeroVector => Error::Degenerate(
                    "embedding projects to the zero vector; samples identical beyond clamping".into(),
                ),
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((model, units))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentFit {
    pub concentration: f64,
    pub effective_dim: usize,
    pub mean_direction: UnitVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AleatoricEstimate {
    pub entropy: f64,
    pub fit: VmfParams,
    /// Latent prompts with raw and projected embeddings attached.
    pub latents: Vec<LatentPrompt>,
}

impl AleatoricEstimate {
    pub fn latent_fit(&self) -> LatentFit {
        LatentFit {
            concentration: self.fit.concentration,
            effective_dim: self.fit.dim,
            mean_direction: self.fit.mean_direction.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerLatent {
    pub latent_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entropy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concentration: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effective_dim: Option<usize>,
    /// Set when the latent was dropped.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl PerLatent {
    pub fn dropped(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpistemicEstimate {
    pub entropy: f64,
    pub per_latent: Vec<PerLatent>,
    /// Raw embeddings of every video of the surviving latents.
    pub video_embeddings: Vec<EmbeddingVector>,
}

impl EpistemicEstimate {
    pub fn dropped(&self) -> usize {
        self.per_latent.iter().filter(|p| p.dropped()).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportStatus {
    Ok,
    Partial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub backends: BackendIdentities,
    pub toolkit_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentSummary {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyReport {
    pub task_id: String,
    pub prompt: String,
    pub status: ReportStatus,
    pub aleatoric: f64,
    pub epistemic: f64,
    pub total: f64,
    pub per_latent: Vec<PerLatent>,
    pub latent_fit: LatentFit,
    pub latents: Vec<LatentSummary>,
    pub provenance: Provenance,
}

/// Whether a latent's failure drops it rather than failing the task.
fn droppable(e: &Error) -> bool {
    matches!(
        e,
        Error::BackendUnreachable(_)
            | Error::Timeout(_)
            | Error::GenerationRefused(_)
            | Error::MalformedResponse(_)
            | Error::MissingVideo(_)
            | Error::Degenerate(_)
            | Error::ZeroVector
    )
}

/// Derives a per-purpose seed from the configured seed.
fn sub_seed(seed: u64, tag: &str, index: u64) -> u64 {
    crate::backends::derive_seed(&[&seed.to_le_bytes(), tag.as_bytes(), &index.to_le_bytes()])
}

/// A configured pipeline bound to concrete backends.
#[derive(Clone)]
pub struct Pipeline {
    config: PipelineConfig,
    backends: BackendSet,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, backends: BackendSet) -> Result<Self> {
        config.validate()?;
        Ok(Pipeline { config, backends })
    }

    /// Builds backends from `config.backends`.
    pub fn from_config(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let backends = BackendSet::from_config(&config.backends)?;
        Ok(Pipeline { config, backends })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn backends(&self) -> &BackendSet {
        &self.backends
    }

    /// Expands and embeds `N` latent prompts, then fits their VMF.
    pub fn aleatoric(&self, prompt: &str) -> Result<AleatoricEstimate> {
        let cfg = &self.config;
        let mut latents = expand_prompt(
            self.backends.expander.as_ref(),
            prompt,
            cfg.n_latents,
            cfg.seed,
        )?;
        let texts: Vec<String> = latents.iter().map(|z| z.text.clone()).collect();
        let raw = self.backends.text_embedder.embed_text(&texts)?;
        if raw.len() != latents.len() {
            return Err(Error::MalformedResponse(format!(
                "text embedder returned {} vectors for {} prompts",
                raw.len(),
                latents.len()
            )));
        }
        let (_, units) = project_embeddings(&raw, cfg.text_target_dim, cfg.projection_centering)?;
        let fit = fit_vmf(&units)?;
        let entropy = vmf_entropy(&fit)?;
        for ((z, r), u) in latents.iter_mut().zip(raw).zip(units) {
            z.raw_embedding = Some(r);
            z.embedding = Some(u);
        }
        Ok(AleatoricEstimate { entropy, fit, latents })
    }

    fn latent_entropy(
        &self,
        index: usize,
        latent: &LatentPrompt,
    ) -> Result<(f64, VmfParams, Vec<EmbeddingVector>)> {
        let cfg = &self.config;
        let handles = self.backends.video_generator.generate_videos(
            latent,
            cfg.m_videos,
            sub_seed(cfg.seed, "videos", index as u64),
        )?;
        if handles.len() != cfg.m_videos {
            return Err(Error::MalformedResponse(format!(
                "generator returned {} videos for latent {}, expected {}",
                handles.len(),
                latent.id,
                cfg.m_videos
            )));
        }
        let raw = handles
            .iter()
            .map(|h| self.backends.video_embedder.embed_video(h))
            .collect::<Result<Vec<_>>>()?;
        let (_, units) = project_embeddings(&raw, cfg.video_target_dim, cfg.projection_centering)?;
        let fit = fit_vmf(&units)?;
        Ok((vmf_entropy(&fit)?, fit, raw))
    }

    /// Mean per-latent video entropy over the given latents.
    pub fn epistemic_given(&self, latents: &[LatentPrompt]) -> Result<EpistemicEstimate> {
        let indexed: Vec<(usize, &LatentPrompt)> = latents.iter().enumerate().collect();
        let parallel = self.config.backends.video_generator.max_parallel;
        let outcomes = bounded_map(&indexed, parallel, |&(i, z)| self.latent_entropy(i, z));
        let mut per_latent = Vec::with_capacity(latents.len());
        let mut entropies = Vec::new();
        let mut video_embeddings = Vec::new();
        for (z, outcome) in latents.iter().zip(outcomes) {
            per_latent.push(match outcome {
                Ok((h, fit, raw)) => {
                    entropies.push(h);
                    video_embeddings.extend(raw);
                    PerLatent {
                        latent_id: z.id.clone(),
                        entropy: Some(h),
                        concentration: Some(fit.concentration),
                        effective_dim: Some(fit.dim),
                        error: None,
                    }
                }
                Err(e) if droppable(&e) => PerLatent {
                    latent_id: z.id.clone(),
                    entropy: None,
                    concentration: None,
                    effective_dim: None,
                    error: Some(e.to_string()),
                },
                Err(e) => return Err(e),
            });
        }
        let needed = self.config.min_surviving_latents();
        if entropies.len() < needed {
            return Err(Error::TooFewLatents {
                survived: entropies.len(),
                total: latents.len(),
                needed,
            });
        }
        let entropy = entropies.iter().sum::<f64>() / entropies.len() as f64;
        Ok(EpistemicEstimate {
            entropy,
            per_latent,
            video_embeddings,
        })
    }

    /// Expands fresh latents and estimates `h(V|Z)`.
    pub fn epistemic(&self, prompt: &str) -> Result<EpistemicEstimate> {
        let latents = expand_prompt(
            self.backends.expander.as_ref(),
            prompt,
            self.config.n_latents,
            self.config.seed,
        )?;
        self.epistemic_given(&latents)
    }

    /// Both components on one shared latent set.
    pub fn total(&self, task_id: &str, prompt: &str) -> Result<UncertaintyReport> {
        self.total_with_videos(task_id, prompt).map(|(r, _)| r)
    }

    /// [`Pipeline::total`] plus the raw embeddings of all surviving videos.
    pub fn total_with_videos(
        &self,
        task_id: &str,
        prompt: &str,
    ) -> Result<(UncertaintyReport, Vec<EmbeddingVector>)> {
        let aleatoric = self.aleatoric(prompt)?;
        let epistemic = self.epistemic_given(&aleatoric.latents)?;
        let status = if epistemic.dropped() > 0 {
            ReportStatus::Partial
        } else {
            ReportStatus::Ok
        };
        let report = UncertaintyReport {
            task_id: task_id.to_string(),
            prompt: prompt.to_string(),
            status,
            aleatoric: aleatoric.entropy,
            epistemic: epistemic.entropy,
            total: aleatoric.entropy + epistemic.entropy,
            latent_fit: aleatoric.latent_fit(),
            latents: aleatoric
                .latents
                .iter()
                .map(|z| LatentSummary {
                    id: z.id.clone(),
                    text: z.text.clone(),
                })
                .collect(),
            per_latent: epistemic.per_latent,
            provenance: self.provenance(),
        };
        Ok((report, epistemic.video_embeddings))
    }

    pub fn provenance(&self) -> Provenance {
        Provenance {
            config_hash: self.config.hash(),
            seed: self.config.seed,
            backends: self.backends.identities(),
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

/// `h(Z|ℓ)` with backends built from `config`.
pub fn aleatoric_uncertainty(prompt: &str, config: &PipelineConfig) -> Result<AleatoricEstimate> {
    Pipeline::from_config(config.clone())?.aleatoric(prompt)
}

/// `h(V|Z)` with backends built from `config`.
pub fn epistemic_uncertainty(prompt: &str, config: &PipelineConfig) -> Result<EpistemicEstimate> {
    Pipeline::from_config(config.clone())?.epistemic(prompt)
}

/// Full report with backends built from `config`; the prompt doubles as the
/// task id.
pub fn total_uncertainty(prompt: &str, config: &PipelineConfig) -> Result<UncertaintyReport> {
    Pipeline::from_config(config.clone())?.total(prompt, prompt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vmf::{vmf_entropy_for, KAPPA_MAX};

    #[test]
    fn additivity_is_exact() {
        let p = Pipeline::from_config(PipelineConfig::default()).unwrap();
        let r = p.total("t0", "a cat doing something").unwrap();
        assert_eq!(r.total, r.aleatoric + r.epistemic);
        assert_eq!(r.per_latent.len(), 10);
        assert_eq!(r.status, ReportStatus::Ok);
    }

    #[test]
    fn config_defaults_and_validation() {
        let cfg: PipelineConfig = serde_json::from_str(r#"{"seed": 3}"#).unwrap();
        assert_eq!((cfg.n_latents, cfg.m_videos), (10, 10));
        assert_eq!((cfg.text_target_dim, cfg.video_target_dim), (16, 16));
        assert_eq!(cfg.min_surviving_latents(), 5);
        let bad = PipelineConfig { m_videos: 1, ..cfg };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn floors_compose() {
        let cfg = PipelineConfig {
            backends: BackendsConfig::synthetic(SyntheticConfig {
                latent_kappa: crate::backends::KappaLaw::Constant { kappa: KAPPA_MAX },
                video_kappa: crate::backends::KappaLaw::Constant { kappa: KAPPA_MAX },
                ..SyntheticConfig::default()
            }),
            ..PipelineConfig::default()
        };
        let r = total_uncertainty("a cat napping", &cfg).unwrap();
        let floor = vmf_entropy_for(16, KAPPA_MAX).unwrap();
        // Banerjee on 10 near-identical samples lands just under the clamp
        assert!((r.aleatoric - floor).abs() < 0.5, "{} vs {floor}", r.aleatoric);
        assert!((r.epistemic - floor).abs() < 0.5);
        assert_eq!(r.total, r.aleatoric + r.epistemic);
    }
}

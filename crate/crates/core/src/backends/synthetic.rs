//! A closed generative world with known laws, standing in for an LLM, an
//! embedding model and a video model.
//!
//! For a user prompt `ℓ`:
//!
//! * the latent law is `VMF(μ_ℓ, κ_z(ℓ))` on `S^{text_dim−1}`, where `μ_ℓ` is
//!   either the configured `latent_direction` or a uniform direction seeded by
//!   the prompt text, and `κ_z` comes from `latent_kappa`;
//! * latent `i` drawn with seed `s` is the VMF sample seeded by
//!   `(world seed, ℓ, s, i)`; its text is `"{ℓ} [latent {i} / draw {s}]"` and
//!   its text embedding is the sample itself;
//! * videos for latent `z` are `VMF(g(z), κ_v)` samples on
//!   `S^{video_dim−1}`, where `g` is the identity when the dimensions agree and
//!   otherwise `z ↦ normalize(A z)` for a fixed seeded Gaussian matrix `A`;
//!   `κ_v` comes from `video_kappa`;
//! * when an ambient dimension larger than the base dimension is configured,
//!   embeddings are lifted isometrically through fixed seeded orthonormal
//!   columns, so downstream PCA has something to do.
//!
//! Every text, embedding and handle is a pure function of its inputs and the
//! world seed.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    content_key, derive_seed, LatentPrompt, PromptExpander, TextEmbedder, VideoEmbedder,
    VideoGenerator, VideoHandle,
};
use crate::embedding::{EmbeddingSource, EmbeddingVector};
use crate::error::{Error, Result};
use crate::vmf::{sample_vmf, UnitVector, VmfParams, KAPPA_MAX};

/// How a concentration is assigned to a prompt or latent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum KappaLaw {
    Constant { kappa: f64 },
    /// Log-uniform on `[min, max]`, chosen by hashing the prompt text.
    LogUniform { min: f64, max: f64 },
    PerPrompt {
        default: f64,
        overrides: BTreeMap<String, f64>,
    },
    /// Alternates by latent index; only meaningful for video laws.
    AlternatingLatents { even: f64, odd: f64 },
    /// Depends on the sign of the latent's first coordinate.
    LatentSign { positive: f64, negative: f64 },
}

impl KappaLaw {
    fn validate(&self) -> Result<()> {
        let values: Vec<f64> = match self {
            KappaLaw::Constant { kappa } => vec![*kappa],
            KappaLaw::LogUniform { min, max } => {
                if !(min > &0.0 && min <= max) {
                    return Err(Error::Config(format!("log-uniform law needs 0 < min <= max, got [{min}, {max}]")));
                }
                vec![*min, *max]
            }
            KappaLaw::PerPrompt { default, overrides } => {
                std::iter::once(*default).chain(overrides.values().copied()).collect()
            }
            KappaLaw::AlternatingLatents { even, odd } => vec![*even, *odd],
            KappaLaw::LatentSign { positive, negative } => vec![*positive, *negative],
        };
        for v in values {
            if !(0.0..=KAPPA_MAX).contains(&v) {
                return Err(Error::Config(format!("concentration {v} outside [0, {KAPPA_MAX}]")));
            }
        }
        Ok(())
    }

    /// Resolves the concentration for `prompt`, optionally at a latent.
    pub fn resolve(
        &self,
        world_seed: u64,
        salt: &str,
        prompt: &str,
        latent: Option<(usize, &UnitVector)>,
    ) -> f64 {
        match self {
            KappaLaw::Constant { kappa } => *kappa,
            KappaLaw::LogUniform { min, max } => {
                let h = derive_seed(&[&world_seed.to_le_bytes(), salt.as_bytes(), prompt.as_bytes()]);
                let u = (h >> 11) as f64 / (1u64 << 53) as f64;
                (min.ln() + u * (max.ln() - min.ln())).exp()
            }
            KappaLaw::PerPrompt { default, overrides } => {
                *overrides.get(prompt).unwrap_or(default)
            }
            KappaLaw::AlternatingLatents { even, odd } => match latent {
                Some((i, _)) if i % 2 == 1 => *odd,
                _ => *even,
            },
            KappaLaw::LatentSign { positive, negative } => match latent {
                Some((_, z)) if z.as_slice()[0] < 0.0 => *negative,
                _ => *positive,
            },
        }
    }
}

/// Every field defaults to [`SyntheticConfig::default`]'s value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub text_dim: usize,
    pub video_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_ambient_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub video_ambient_dim: Option<usize>,
    pub latent_kappa: KappaLaw,
    /// Shared latent mean for every prompt; per-prompt hashed otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent_direction: Option<UnitVector>,
    pub video_kappa: KappaLaw,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            text_dim: 16,
            video_dim: 16,
            text_ambient_dim: None,
            video_ambient_dim: None,
            latent_kappa: KappaLaw::LogUniform { min: 2.0, max: 200.0 },
            latent_direction: None,
            video_kappa: KappaLaw::LogUniform { min: 2.0, max: 200.0 },
            seed: 0,
        }
    }
}

/// The synthetic world; implements all four backend roles.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    config: SyntheticConfig,
    /// `video_dim × text_dim` map from latents to video means, if needed.
    latent_to_video: Option<DMatrix<f64>>,
    text_lift: Option<DMatrix<f64>>,
    video_lift: Option<DMatrix<f64>>,
}

const LABEL_MARKER: &str = " [latent ";

impl SyntheticWorld {
    pub fn new(config: SyntheticConfig) -> Result<Self> {
        if config.text_dim < 2 || config.video_dim < 2 {
            return Err(Error::Config("synthetic dimensions must be >= 2".into()));
        }
        config.latent_kappa.validate()?;
        config.video_kappa.validate()?;
        if let Some(dir) = &config.latent_direction {
            if dir.dim() != config.text_dim {
                return Err(Error::DimensionMismatch {
                    expected: config.text_dim,
                    got: dir.dim(),
                });
            }
        }
        for (ambient, base) in [
            (config.text_ambient_dim, config.text_dim),
            (config.video_ambient_dim, config.video_dim),
        ] {
            if matches!(ambient, Some(a) if a < base) {
                return Err(Error::Config("ambient dimension must be >= base dimension".into()));
            }
        }
        let seed = config.seed;
        let latent_to_video = (config.text_dim != config.video_dim)
            .then(|| gaussian_matrix(config.video_dim, config.text_dim, derive_seed(&[&seed.to_le_bytes(), b"latent-to-video"])));
        let lift = |ambient: Option<usize>, base: usize, tag: &[u8]| {
            ambient
                .filter(|&a| a > base)
                .map(|a| orthonormal_columns(a, base, derive_seed(&[&seed.to_le_bytes(), tag])))
        };
        Ok(SyntheticWorld {
            text_lift: lift(config.text_ambient_dim, config.text_dim, b"text-lift"),
            video_lift: lift(config.video_ambient_dim, config.video_dim, b"video-lift"),
            latent_to_video,
            config,
        })
    }

    pub fn config(&self) -> &SyntheticConfig {
        &self.config
    }

    fn seed_bytes(&self) -> [u8; 8] {
        self.config.seed.to_le_bytes()
    }

    /// Mean direction `μ_ℓ` of the latent law for `prompt`.
    pub fn prompt_direction(&self, prompt: &str) -> UnitVector {
        match &self.config.latent_direction {
            Some(d) => d.clone(),
            None => self.hashed_direction(b"prompt-direction", prompt, self.config.text_dim),
        }
    }

    fn hashed_direction(&self, tag: &[u8], text: &str, dim: usize) -> UnitVector {
        let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(&[&self.seed_bytes(), tag, text.as_bytes()]));
        loop {
            let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            if let Ok(u) = UnitVector::new(v) {
                return u;
            }
        }
    }

    /// The true `p(Z|ℓ)`.
    pub fn latent_law(&self, prompt: &str) -> VmfParams {
        let kappa = self.config.latent_kappa.resolve(self.config.seed, "latent", prompt, None);
        VmfParams::new(self.prompt_direction(prompt), kappa).expect("validated law")
    }

    /// Latent `index` for `prompt` under expansion seed `seed`.
    pub fn latent_direction(&self, prompt: &str, seed: u64, index: usize) -> UnitVector {
        let s = derive_seed(&[
            &self.seed_bytes(),
            b"latent",
            prompt.as_bytes(),
            &seed.to_le_bytes(),
            &(index as u64).to_le_bytes(),
        ]);
        sample_vmf(&self.latent_law(prompt), 1, s)
            .expect("validated law")
            .pop()
            .expect("one sample")
    }

    pub fn label(prompt: &str, seed: u64, index: usize) -> String {
        format!("{prompt}{LABEL_MARKER}{index} / draw {seed}]")
    }

    /// Inverse of [`SyntheticWorld::label`].
    pub fn parse_label(text: &str) -> Option<(String, usize, u64)> {
        let at = text.rfind(LABEL_MARKER)?;
        let rest = text[at + LABEL_MARKER.len()..].strip_suffix(']')?;
        let (index, seed) = rest.split_once(" / draw ")?;
        Some((text[..at].to_string(), index.parse().ok()?, seed.parse().ok()?))
    }

    /// Latent direction encoded by a latent text; free text hashes to a
    /// uniform direction.
    fn latent_for_text(&self, text: &str) -> (String, Option<usize>, UnitVector) {
        match Self::parse_label(text) {
            Some((prompt, index, seed)) => {
                let z = self.latent_direction(&prompt, seed, index);
                (prompt, Some(index), z)
            }
            None => (
                text.to_string(),
                None,
                self.hashed_direction(b"free-text", text, self.config.text_dim),
            ),
        }
    }

    /// `g(z)`: the video-space mean for a latent.
    pub fn video_mean(&self, z: &UnitVector) -> UnitVector {
        match &self.latent_to_video {
            None => z.clone(),
            Some(a) => {
                let v = a * nalgebra::DVector::from_column_slice(z.as_slice());
                UnitVector::new(v.iter().copied().collect())
                    .unwrap_or_else(|_| UnitVector::basis(self.config.video_dim, 0))
            }
        }
    }

    /// The conditional law `p(V|Z=z)` for latent `index` of `prompt`.
    pub fn conditional_law(&self, prompt: &str, index: Option<usize>, z: &UnitVector) -> VmfParams {
        let kappa = self
            .config
            .video_kappa
            .resolve(self.config.seed, "video", prompt, index.map(|i| (i, z)));
        VmfParams::new(self.video_mean(z), kappa).expect("validated law")
    }

    /// A reference "ground-truth video" embedding for `prompt`: the video mean
    /// of the prompt's latent mean direction, in the video ambient space.
    pub fn ground_truth_embedding(&self, prompt: &str) -> EmbeddingVector {
        let v = self.video_mean(&self.prompt_direction(prompt));
        self.lift(&self.video_lift, &v, EmbeddingSource::Video)
    }

    fn lift(&self, lift: &Option<DMatrix<f64>>, v: &UnitVector, source: EmbeddingSource) -> EmbeddingVector {
        let components = match lift {
            None => v.as_slice().to_vec(),
            Some(q) => (q * nalgebra::DVector::from_column_slice(v.as_slice())).iter().copied().collect(),
        };
        EmbeddingVector::new(components, source).expect("finite")
    }

    fn world_identity(&self) -> String {
        let json = serde_json::to_string(&self.config).expect("config serializes");
        format!("synthetic:{}", &content_key(&json)[..16])
    }
}

fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn orthonormal_columns(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let qr = gaussian_matrix(rows, cols, seed).qr();
    qr.q()
}

impl PromptExpander for SyntheticWorld {
    fn identity(&self) -> String {
        self.world_identity()
    }

    fn expand(&self, prompt: &str, count: usize, seed: u64) -> Result<Vec<String>> {
        Ok((0..count).map(|i| Self::label(prompt, seed, i)).collect())
    }
}

impl TextEmbedder for SyntheticWorld {
    fn identity(&self) -> String {
        self.world_identity()
    }

    fn embed_text(&self, prompts: &[String]) -> Result<Vec<EmbeddingVector>> {
        if prompts.is_empty() {
            return Err(Error::Domain("nothing to embed".into()));
        }
        Ok(prompts
            .iter()
            .map(|t| {
                let (_, _, z) = self.latent_for_text(t);
                self.lift(&self.text_lift, &z, EmbeddingSource::Text)
            })
            .collect())
    }
}

impl VideoGenerator for SyntheticWorld {
    fn identity(&self) -> String {
        self.world_identity()
    }

    fn generate_videos(&self, latent: &LatentPrompt, count: usize, seed: u64) -> Result<Vec<VideoHandle>> {
        if count < 2 {
            return Err(Error::Domain(format!("need at least 2 videos, got {count}")));
        }
        let (prompt, index, z) = self.latent_for_text(&latent.text);
        let law = self.conditional_law(&prompt, index, &z);
        let sample_seed = derive_seed(&[&self.seed_bytes(), b"video", latent.text.as_bytes(), &seed.to_le_bytes()]);
        let samples = sample_vmf(&law, count, sample_seed)?;
        let tag = &content_key(&latent.text)[..12];
        Ok(samples
            .iter()
            .enumerate()
            .map(|(j, v)| {
                let id = format!("syn-{tag}-{seed}-{j}");
                VideoHandle {
                    storage_ref: format!("synthetic://{id}"),
                    id,
                    latent_id: latent.id.clone(),
                    embedding: Some(self.lift(&self.video_lift, v, EmbeddingSource::Video)),
                }
            })
            .collect())
    }
}

impl VideoEmbedder for SyntheticWorld {
    fn identity(&self) -> String {
        self.world_identity()
    }

    fn embed_video(&self, handle: &VideoHandle) -> Result<EmbeddingVector> {
        handle
            .embedding
            .clone()
            .ok_or_else(|| Error::MissingVideo(handle.id.clone()))
    }
}

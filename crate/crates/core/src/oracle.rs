//! A two-stage generative model with known laws, for validating the
//! estimators and the identity `h(V|ℓ) = h(V|Z) + h(Z|ℓ)`.
//!
//! Latents follow `Z ~ VMF(μ_z, κ_z)` on `S^{text_dim−1}`; videos follow
//! `V | Z=z ~ VMF(g(z), κ_v(z))` on `S^{video_dim−1}`, where `g` is the
//! synthetic world's latent-to-video map (the identity when the dimensions
//! agree).

use std::cell::RefCell;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::backends::{bounded_map, derive_seed, BackendSet, KappaLaw, SyntheticConfig, SyntheticWorld};
use crate::error::{Error, Result};
use crate::vmf::{bessel_ratio, log_bessel_i, vmf_entropy, UnitVector, VmfParams, VmfSampler};

/// Samples per Monte-Carlo batch; each batch has its own derived seed, so
/// results do not depend on the thread count.
pub const MC_BATCH: usize = 50_000;

const ROUNDING_SLACK: f64 = 1e-9;

/// Default mixture size for the marginal density when no closed form exists.
pub const DEFAULT_MIXTURE_COMPONENTS: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchicalModelSpec {
    pub text_dim: usize,
    pub video_dim: usize,
    pub latent_law: VmfParams,
    /// `κ_v` as a function of the latent; `constant` or `latent_sign`.
    pub conditional_kappa: KappaLaw,
    pub seed: u64,
}

impl HierarchicalModelSpec {
    /// Equal dimensions, mean `e_0` and constant concentrations.
    pub fn constant(dim: usize, kappa_z: f64, kappa_v: f64, seed: u64) -> Result<Self> {
        let spec = HierarchicalModelSpec {
            text_dim: dim,
            video_dim: dim,
            latent_law: VmfParams::new(UnitVector::basis(dim, 0), kappa_z)?,
            conditional_kappa: KappaLaw::Constant { kappa: kappa_v },
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.latent_law.validate()?;
        if self.latent_law.dim != self.text_dim {
            return Err(Error::DimensionMismatch {
                expected: self.text_dim,
                got: self.latent_law.dim,
            });
        }
        if !matches!(
            self.conditional_kappa,
            KappaLaw::Constant { .. } | KappaLaw::LatentSign { .. }
        ) {
            return Err(Error::Config(
                "conditional concentration must be constant or latent_sign".into(),
            ));
        }
        self.world().map(|_| ())
    }

    fn synthetic_config(&self) -> SyntheticConfig {
        SyntheticConfig {
            text_dim: self.text_dim,
            video_dim: self.video_dim,
            text_ambient_dim: None,
            video_ambient_dim: None,
            latent_kappa: KappaLaw::Constant {
                kappa: self.latent_law.concentration,
            },
            latent_direction: Some(self.latent_law.mean_direction.clone()),
            video_kappa: self.conditional_kappa.clone(),
            seed: self.seed,
        }
    }

    pub fn world(&self) -> Result<SyntheticWorld> {
        SyntheticWorld::new(self.synthetic_config())
    }

    /// `p(V | Z = z)`.
    pub fn conditional_law(&self, world: &SyntheticWorld, z: &UnitVector) -> VmfParams {
        world.conditional_law("", Some(0), z)
    }

    fn constant_conditional_kappa(&self) -> Option<f64> {
        match self.conditional_kappa {
            KappaLaw::Constant { kappa } => Some(kappa),
            _ => None,
        }
    }
}

/// Backends whose induced laws are exactly `spec`'s: expansion texts are
/// labels, text embeddings are the latent samples and video embeddings are
/// the conditional samples.
pub fn make_synthetic_backends(spec: &HierarchicalModelSpec) -> Result<BackendSet> {
    spec.validate()?;
    BackendSet::synthetic(spec.synthetic_config())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: usize,
}

impl McEstimate {
    /// An exact value, with zero error.
    pub fn exact(value: f64) -> Self {
        McEstimate {
            value,
            std_error: 0.0,
            n_samples: 0,
        }
    }

    /// Pools batch estimates as if all samples came from one run.
    pub fn pool(parts: &[McEstimate]) -> Self {
        let n: usize = parts.iter().map(|p| p.n_samples).sum();
        let nf = n as f64;
        let mean = parts.iter().map(|p| p.value * p.n_samples as f64).sum::<f64>() / nf;
        let ss: f64 = parts
            .iter()
            .map(|p| {
                let k = p.n_samples as f64;
                let var = p.std_error * p.std_error * k;
                var * (k - 1.0) + k * (p.value - mean).powi(2)
            })
            .sum();
        McEstimate {
            value: mean,
            std_error: (ss / (nf - 1.0) / nf).sqrt(),
            n_samples: n,
        }
    }
}

fn sample_mean(xs: &[f64]) -> McEstimate {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|h| (h - mean).powi(2)).sum::<f64>() / (n - 1.0);
    McEstimate {
        value: mean,
        std_error: (var / n).sqrt(),
        n_samples: xs.len(),
    }
}

/// Mean of `−log_density(x)` over `count` draws, with its standard error.
pub fn mc_entropy<T, S, L>(mut sample: S, log_density: L, count: usize, seed: u64) -> Result<McEstimate>
where
    S: FnMut(&mut ChaCha20Rng) -> T,
    L: Fn(&T) -> f64,
{
    if count < 1000 {
        return Err(Error::InsufficientSamples {
            needed: 1000,
            got: count,
        });
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (mut mean, mut m2) = (0.0, 0.0);
    for i in 0..count {
        let x = sample(&mut rng);
        let lp = log_density(&x);
        if !lp.is_finite() {
            return Err(Error::NonFiniteLogDensity(i));
        }
        let delta = -lp - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (-lp - mean);
    }
    let var = m2 / (count - 1) as f64;
    Ok(McEstimate {
        value: mean,
        std_error: (var / count as f64).sqrt(),
        n_samples: count,
    })
}

/// `ln C_n(κ)` for any `κ >= 0`, including beyond `KAPPA_MAX`.
fn log_c(dim: usize, kappa: f64) -> Result<f64> {
    let half = dim as f64 / 2.0;
    if kappa == 0.0 {
        return Ok(libm::lgamma(half) - std::f64::consts::LN_2 - half * std::f64::consts::PI.ln());
    }
    let order = half - 1.0;
    Ok(order * kappa.ln() - half * (2.0 * std::f64::consts::PI).ln() - log_bessel_i(order, kappa)?)
}

/// Entropy of a VMF on `S^{dim−1}` for any `κ >= 0`.
fn entropy_unbounded(dim: usize, kappa: f64) -> Result<f64> {
    Ok(-log_c(dim, kappa)? - kappa * bessel_ratio(dim as f64 / 2.0 - 1.0, kappa)?)
}

/// How the audit evaluates the marginal density `p(v|ℓ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum MarginalDensity {
    /// `C(κ_z) C(κ_v) / C(‖κ_z μ_z + κ_v v‖)`; needs equal dimensions and a
    /// constant conditional concentration.
    Exact,
    /// Average of `K` conditional densities at fresh latent draws per
    /// sample. Its log is biased downward (so the entropy upward) by roughly
    /// `CV²/(2K)`, where `CV` is the coefficient of variation of `f(v|z)`
    /// over `z`.
    Mixture { components: usize },
}

impl MarginalDensity {
    /// Exact when the closed form applies, the default mixture otherwise.
    pub fn default_for(spec: &HierarchicalModelSpec) -> Self {
        if spec.text_dim == spec.video_dim && spec.constant_conditional_kappa().is_some() {
            MarginalDensity::Exact
        } else {
            MarginalDensity::Mixture {
                components: DEFAULT_MIXTURE_COMPONENTS,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionAudit {
    /// Monte-Carlo `h(V|ℓ)`.
    pub lhs: McEstimate,
    /// Closed-form `h(Z|ℓ)`.
    pub rhs_aleatoric: f64,
    /// Monte-Carlo `h(V|Z)`.
    pub rhs_epistemic: McEstimate,
    pub marginal: MarginalDensity,
    /// Monte-Carlo `h(Z|V)`, when the posterior is a VMF (equal dims and a
    /// constant conditional concentration). The exact chain rule is
    /// `h(V|ℓ) = h(V|Z) + h(Z|ℓ) − h(Z|V,ℓ)`, so this is minus the gap.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub posterior: Option<McEstimate>,
}

impl DecompositionAudit {
    pub fn gap(&self) -> f64 {
        self.lhs.value - (self.rhs_aleatoric + self.rhs_epistemic.value)
    }

    pub fn combined_std_error(&self) -> f64 {
        self.lhs.std_error.hypot(self.rhs_epistemic.std_error)
    }

    /// `|gap| <= sigmas · combined std error`, plus rounding slack for
    /// estimates with zero variance.
    pub fn holds(&self, sigmas: f64) -> bool {
        self.gap().abs() <= sigmas * self.combined_std_error() + ROUNDING_SLACK
    }

    /// The identity with the posterior term included, at `sigmas` joint
    /// standard errors. `None` without a posterior estimate.
    pub fn holds_with_posterior(&self, sigmas: f64) -> Option<bool> {
        let post = self.posterior?;
        let se = self.combined_std_error().hypot(post.std_error);
        Some((self.gap() + post.value).abs() <= sigmas * se + ROUNDING_SLACK)
    }
}

/// Witnesses the decomposition identity by Monte Carlo with the default
/// marginal density for `spec`.
pub fn decomposition_audit(spec: &HierarchicalModelSpec, samples: usize) -> Result<DecompositionAudit> {
    decomposition_audit_with(spec, samples, MarginalDensity::default_for(spec))
}

pub fn decomposition_audit_with(
    spec: &HierarchicalModelSpec,
    samples: usize,
    marginal: MarginalDensity,
) -> Result<DecompositionAudit> {
    spec.validate()?;
    let exact_kappa_v = match marginal {
        MarginalDensity::Exact => {
            if spec.text_dim != spec.video_dim {
                return Err(Error::Domain("exact marginal needs equal text and video dims".into()));
            }
            spec.constant_conditional_kappa().ok_or_else(|| {
                Error::Domain("exact marginal needs a constant conditional concentration".into())
            })?
        }
        MarginalDensity::Mixture { .. } => f64::NAN,
    };
    if let MarginalDensity::Mixture { components } = marginal {
        if components < 1 {
            return Err(Error::Domain("mixture needs at least one component".into()));
        }
    }
    let posterior_kappa_v = match spec.constant_conditional_kappa() {
        Some(k) if spec.text_dim == spec.video_dim => Some(k),
        _ => None,
    };
    let world = spec.world()?;
    let latent = VmfSampler::new(&spec.latent_law)?;
    let kappa_z = spec.latent_law.concentration;
    let mu_z = spec.latent_law.mean_direction.as_slice();
    let vd = spec.video_dim;
    let log_cz = log_c(spec.text_dim, kappa_z)?;

    let log_marginal = |v: &UnitVector, rng: &mut ChaCha20Rng| -> f64 {
        match marginal {
            MarginalDensity::Exact => {
                let norm = mu_z
                    .iter()
                    .zip(v.as_slice())
                    .map(|(m, x)| (kappa_z * m + exact_kappa_v * x).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let log_cv = log_c(vd, exact_kappa_v).unwrap_or(f64::NAN);
                log_cz + log_cv - log_c(vd, norm).unwrap_or(f64::NAN)
            }
            MarginalDensity::Mixture { components } => {
                let terms: Vec<f64> = (0..components)
                    .map(|_| {
                        let law = spec.conditional_law(&world, &latent.sample(rng));
                        let k = law.concentration;
                        log_c(vd, k).unwrap_or(f64::NAN) + k * law.mean_direction.dot(v)
                    })
                    .collect();
                let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
                max + sum.ln() - (components as f64).ln()
            }
        }
    };

    if samples < 1000 {
        return Err(Error::InsufficientSamples {
            needed: 1000,
            got: samples,
        });
    }
    // equal-ish batches, each at least min(samples, MC_BATCH) long
    let batches = (samples / MC_BATCH).max(1);
    let jobs: Vec<(usize, usize)> = (0..batches)
        .map(|b| (b, samples / batches + usize::from(b < samples % batches)))
        .collect();
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    type BatchOut = (McEstimate, McEstimate, Option<McEstimate>);
    let parts = bounded_map(&jobs, threads, |&(b, count)| -> Result<BatchOut> {
        let seed = derive_seed(&[&spec.seed.to_le_bytes(), b"audit", &(b as u64).to_le_bytes()]);
        let density_rng = RefCell::new(ChaCha20Rng::seed_from_u64(derive_seed(&[
            &seed.to_le_bytes(),
            b"mixture",
        ])));
        let mut conditional_entropies = Vec::with_capacity(count);
        let mut posterior_entropies = Vec::new();
        let lhs = mc_entropy(
            |rng| {
                let z = latent.sample(rng);
                let law = spec.conditional_law(&world, &z);
                conditional_entropies.push(vmf_entropy(&law).unwrap_or(f64::NAN));
                let v = VmfSampler::new(&law).expect("valid law").sample(rng);
                if let Some(kv) = posterior_kappa_v {
                    // Z | V=v ~ VMF(κ_z μ_z + κ_v v) up to normalisation
                    let norm = mu_z
                        .iter()
                        .zip(v.as_slice())
                        .map(|(m, x)| (kappa_z * m + kv * x).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    posterior_entropies.push(entropy_unbounded(spec.text_dim, norm).unwrap_or(f64::NAN));
                }
                v
            },
            |v| log_marginal(v, &mut density_rng.borrow_mut()),
            count,
            seed,
        )?;
        let posterior = (!posterior_entropies.is_empty()).then(|| sample_mean(&posterior_entropies));
        Ok((lhs, sample_mean(&conditional_entropies), posterior))
    });
    let parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
    let lhs: Vec<McEstimate> = parts.iter().map(|p| p.0).collect();
    let epi: Vec<McEstimate> = parts.iter().map(|p| p.1).collect();
    let post: Option<Vec<McEstimate>> = parts.iter().map(|p| p.2).collect();
    if let Some(p) = post.iter().flatten().find(|p| !p.value.is_finite()) {
        return Err(Error::Domain(format!("non-finite posterior entropy {}", p.value)));
    }
    Ok(DecompositionAudit {
        posterior: post.map(|p| McEstimate::pool(&p)),
        lhs: McEstimate::pool(&lhs),
        rhs_aleatoric: vmf_entropy(&spec.latent_law)?,
        rhs_epistemic: McEstimate::pool(&epi),
        marginal,
    })
}

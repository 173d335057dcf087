//! Black-box uncertainty quantification for text-conditioned generative
//! models.
//!
//! Predictive uncertainty `h(V|ℓ)` of a generator is split into an aleatoric
//! part `h(Z|ℓ)`, the entropy of fully specified latent prompts `z` drawn for
//! a user prompt `ℓ`, and an epistemic part `h(V|Z)`, the expected entropy of
//! generated outputs given a latent prompt. Both are estimated by fitting von
//! Mises–Fisher distributions to unit-normalized embeddings.

pub mod error;
pub mod embedding;
pub mod vmf;
pub mod backends;
pub mod pipeline;
pub mod calibration;
pub mod oracle;

pub use error::{Error, Result};

//! Raw embeddings, PCA projection onto a low-dimensional sphere, and cosine
//! similarity.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vmf::{dot, l2_norm, UnitVector};

/// Default PCA target dimension.
pub const DEFAULT_TARGET_DIM: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingSource {
    Text,
    Video,
}

/// An embedding as returned by a model, before any normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEmbedding")]
pub struct EmbeddingVector {
    components: Vec<f64>,
    source: EmbeddingSource,
}

#[derive(Deserialize)]
struct RawEmbedding {
    components: Vec<f64>,
    source: EmbeddingSource,
}

impl TryFrom<RawEmbedding> for EmbeddingVector {
    type Error = Error;
    fn try_from(raw: RawEmbedding) -> Result<Self> {
        EmbeddingVector::new(raw.components, raw.source)
    }
}

impl EmbeddingVector {
    pub fn new(components: Vec<f64>, source: EmbeddingSource) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Domain("embedding has no components".into()));
        }
        if let Some(i) = components.iter().position(|c| !c.is_finite()) {
            return Err(Error::Domain(format!("embedding component {i} is not finite")));
        }
        Ok(EmbeddingVector { components, source })
    }

    pub fn text(components: Vec<f64>) -> Result<Self> {
        Self::new(components, EmbeddingSource::Text)
    }

    pub fn video(components: Vec<f64>) -> Result<Self> {
        Self::new(components, EmbeddingSource::Video)
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[f64] {
        &self.components
    }

    pub fn source(&self) -> EmbeddingSource {
        self.source
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.components)
    }
}

/// `v / ‖v‖₂`.
pub fn normalize(v: &EmbeddingVector) -> Result<UnitVector> {
    UnitVector::new(v.components.clone())
}

/// `a·b / (‖a‖‖b‖)`, clamped to `[−1, 1]`.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    // divide before multiplying so extreme magnitudes stay representable
    let s: f64 = a
        .components
        .iter()
        .zip(&b.components)
        .map(|(x, y)| (x / na) * (y / nb))
        .sum();
    Ok(s.clamp(-1.0, 1.0))
}

/// Whether PCA subtracts the sample mean before finding principal axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Centering {
    /// Covariance PCA; `project` subtracts the fitted mean.
    #[default]
    Mean,
    /// Second-moment PCA about the origin; the stored mean is zero. Keeps the
    /// dominant direction of a tight cluster as the first axis.
    None,
}

/// A fitted linear projection `R^d → R^n` followed by renormalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionModel {
    pub mean: Vec<f64>,
    pub basis: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
    pub ambient_dim: usize,
    pub target_dim: usize,
}

impl ProjectionModel {
    /// The identity map on `R^dim`, used when embeddings are already small.
    pub fn identity(dim: usize) -> Self {
        ProjectionModel {
            mean: vec![0.0; dim],
            basis: (0..dim)
                .map(|i| UnitVector::basis(dim, i).into_inner())
                .collect(),
            explained_variance: vec![0.0; dim],
            ambient_dim: dim,
            target_dim: dim,
        }
    }

    /// Coordinates of `v − mean` in the basis, before renormalization.
    pub fn coordinates(&self, v: &EmbeddingVector) -> Result<Vec<f64>> {
        if v.dim() != self.ambient_dim {
            return Err(Error::DimensionMismatch {
                expected: self.ambient_dim,
                got: v.dim(),
            });
        }
        let centered: Vec<f64> = v
            .components()
            .iter()
            .zip(&self.mean)
            .map(|(x, m)| x - m)
            .collect();
        Ok(self.basis.iter().map(|b| dot(b, &centered)).collect())
    }

    /// Projects and renormalizes onto `S^{n−1}`.
    pub fn project(&self, v: &EmbeddingVector) -> Result<UnitVector> {
        let coords = self.coordinates(v)?;
        let scale = l2_norm(v.components()).max(l2_norm(&self.mean)).max(1.0);
        if l2_norm(&coords) <= 1e-12 * scale {
            return Err(Error::ZeroVector);
        }
        UnitVector::new(coords)
    }
}

/// Mean-centered PCA keeping at most `target_dim` components.
pub fn fit_projection(samples: &[EmbeddingVector], target_dim: usize) -> Result<ProjectionModel> {
    fit_projection_with(samples, target_dim, Centering::Mean)
}

/// PCA with explicit centering. The effective target dimension is
/// `min(target_dim, d, N − 1)` when centered and `min(target_dim, d, N)`
/// otherwise.
pub fn fit_projection_with(
    samples: &[EmbeddingVector],
    target_dim: usize,
    centering: Centering,
) -> Result<ProjectionModel> {
    if samples.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    if target_dim < 2 {
        return Err(Error::Domain(format!("target dimension must be >= 2, got {target_dim}")));
    }
    let d = samples[0].dim();
    for s in samples {
        if s.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: s.dim(),
            });
        }
    }
    let n_samples = samples.len();

    let mean = match centering {
        Centering::Mean => {
            let mut m = vec![0.0; d];
            for s in samples {
                for (acc, x) in m.iter_mut().zip(s.components()) {
                    *acc += x;
                }
            }
            m.iter_mut().for_each(|x| *x /= n_samples as f64);
            m
        }
        Centering::None => vec![0.0; d],
    };
    let (rank_cap, denom) = match centering {
        Centering::Mean => (n_samples - 1, (n_samples - 1) as f64),
        Centering::None => (n_samples, n_samples as f64),
    };
    let k = target_dim.min(d).min(rank_cap);

    let x = DMatrix::from_fn(n_samples, d, |i, j| samples[i].components()[j] - mean[j]);

    let (mut values, mut basis) = if d <= n_samples {
        let cov = (x.transpose() * &x) / denom;
        let eig = SymmetricEigen::new(cov);
        let order = descending_order(eig.eigenvalues.as_slice());
        let values: Vec<f64> = order[..k].iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
        let basis: Vec<Vec<f64>> = order[..k]
            .iter()
            .map(|&i| eig.eigenvectors.column(i).iter().copied().collect())
            .collect();
        (values, basis)
    } else {
        // Gram trick: eigenvectors of X Xᵀ map to those of Xᵀ X through Xᵀ
        let gram = (&x * x.transpose()) / denom;
        let eig = SymmetricEigen::new(gram);
        let order = descending_order(eig.eigenvalues.as_slice());
        let top = eig.eigenvalues[order[0]].max(0.0);
        let mut values = Vec::with_capacity(k);
        let mut basis = Vec::with_capacity(k);
        for &i in &order[..k] {
            let lambda = eig.eigenvalues[i].max(0.0);
            values.push(lambda);
            if lambda > top * 1e-12 && lambda > 0.0 {
                let v = x.transpose() * eig.eigenvectors.column(i);
                let norm = v.norm();
                basis.push(v.iter().map(|c| c / norm).collect());
            } else {
                basis.push(vec![0.0; d]);
            }
        }
        (values, basis)
    };

    orthonormalize(&mut basis, d);
    for b in basis.iter_mut() {
        canonical_sign(b);
    }
    // eigen solvers can return values that are out of order by rounding
    for i in 1..values.len() {
        if values[i] > values[i - 1] {
            values[i] = values[i - 1];
        }
    }

    Ok(ProjectionModel {
        mean,
        basis,
        explained_variance: values,
        ambient_dim: d,
        target_dim: k,
    })
}

fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

/// Modified Gram–Schmidt, run twice; null vectors are replaced by the first
/// standard basis vector that is not yet spanned.
fn orthonormalize(basis: &mut [Vec<f64>], dim: usize) {
    let mut next_axis = 0;
    for i in 0..basis.len() {
        for _pass in 0..2 {
            for j in 0..i {
                let (done, rest) = basis.split_at_mut(i);
                let p = dot(&done[j], &rest[0]);
                for (x, y) in rest[0].iter_mut().zip(&done[j]) {
                    *x -= p * y;
                }
            }
        }
        let mut norm = l2_norm(&basis[i]);
        while norm < 1e-8 && next_axis < dim {
            let mut candidate = vec![0.0; dim];
            candidate[next_axis] = 1.0;
            next_axis += 1;
            for _pass in 0..2 {
                for prev in basis.iter().take(i) {
                    let p = dot(prev, &candidate);
                    for (x, y) in candidate.iter_mut().zip(prev) {
                        *x -= p * y;
                    }
                }
            }
            norm = l2_norm(&candidate);
            basis[i] = candidate;
        }
        basis[i].iter_mut().for_each(|x| *x /= norm);
    }
}

fn canonical_sign(v: &mut [f64]) {
    let pivot = v
        .iter()
        .copied()
        .fold(0.0_f64, |best, x| if x.abs() > best.abs() { x } else { best });
    if pivot < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

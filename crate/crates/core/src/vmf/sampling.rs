//! Wood (1994) rejection sampler for the VMF distribution.
//!
//! Randomness comes from ChaCha20 (`rand_chacha::ChaCha20Rng::seed_from_u64`),
//! so a `(params, count, seed)` triple always yields the same samples.
//! Per draw: `Z ~ Beta((n−1)/2, (n−1)/2)`, candidate cosine
//! `w = (1 − (1+b)Z) / (1 − (1−b)Z)`, accepted when
//! `κw + (n−1) ln(1 − x₀w) − c ≥ ln U`; the tangent direction is a normalized
//! standard-normal vector, and the result is reflected from `e₁` onto `μ`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

use super::{l2_norm, UnitVector, VmfParams};
use crate::error::{Error, Result};

/// Precomputed state for drawing repeatedly from one VMF.
#[derive(Debug, Clone)]
pub struct VmfSampler {
    params: VmfParams,
    b: f64,
    x0: f64,
    c: f64,
    beta: Option<Beta<f64>>,
    /// Householder vector mapping `e₁` to `μ`, if they differ.
    reflector: Option<Vec<f64>>,
}

impl VmfSampler {
    pub fn new(params: &VmfParams) -> Result<Self> {
        params.validate()?;
        let n1 = params.dim as f64 - 1.0;
        let kappa = params.concentration;
        // stable form of (−2κ + sqrt(4κ² + (n−1)²)) / (n−1)
        let b = n1 / (2.0 * kappa + (4.0 * kappa * kappa + n1 * n1).sqrt());
        let x0 = (1.0 - b) / (1.0 + b);
        let c = kappa * x0 + n1 * (1.0 - x0 * x0).ln();
        let beta = if kappa > 0.0 {
            Some(
                Beta::new(n1 / 2.0, n1 / 2.0)
                    .map_err(|e| Error::Domain(format!("beta parameters: {e}")))?,
            )
        } else {
            None
        };

        let mu = params.mean_direction.as_slice();
        let mut u: Vec<f64> = mu.iter().map(|m| -m).collect();
        u[0] += 1.0;
        let norm = l2_norm(&u);
        let reflector = (norm > 1e-15).then(|| u.into_iter().map(|x| x / norm).collect());

        Ok(VmfSampler {
            params: params.clone(),
            b,
            x0,
            c,
            beta,
            reflector,
        })
    }

    pub fn params(&self) -> &VmfParams {
        &self.params
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> UnitVector {
        let dim = self.params.dim;
        let Some(beta) = &self.beta else {
            return uniform_on_sphere(dim, rng);
        };
        let n1 = dim as f64 - 1.0;
        let kappa = self.params.concentration;
        let w = loop {
            let z: f64 = beta.sample(rng);
            let w = (1.0 - (1.0 + self.b) * z) / (1.0 - (1.0 - self.b) * z);
            let u: f64 = rng.random();
            if kappa * w + n1 * (1.0 - self.x0 * w).ln() - self.c >= u.ln() {
                break w;
            }
        };

        let tangent = uniform_on_sphere(dim - 1, rng);
        let radial = (1.0 - w * w).max(0.0).sqrt();
        let mut x = Vec::with_capacity(dim);
        x.push(w);
        x.extend(tangent.as_slice().iter().map(|t| radial * t));

        if let Some(u) = &self.reflector {
            let proj = 2.0 * super::dot(u, &x);
            for (xi, ui) in x.iter_mut().zip(u) {
                *xi -= proj * ui;
            }
        }
        // re-normalize to absorb rounding from the reflection
        UnitVector::new(x).expect("sampled vector is nonzero")
    }

    pub fn sample_n<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<UnitVector> {
        (0..count).map(|_| self.sample(rng)).collect()
    }
}

fn uniform_on_sphere<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> UnitVector {
    if dim == 1 {
        return UnitVector::from_normalized(vec![if rng.random::<bool>() { 1.0 } else { -1.0 }]);
    }
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if let Ok(u) = UnitVector::new(v) {
            return u;
        }
    }
}

/// Draws `count` samples from `params`, deterministically in `seed`.
pub fn sample_vmf(params: &VmfParams, count: usize, seed: u64) -> Result<Vec<UnitVector>> {
    if count == 0 {
        return Err(Error::Domain("sample count must be at least 1".into()));
    }
    let sampler = VmfSampler::new(params)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    Ok(sampler.sample_n(count, &mut rng))
}

//! Von Mises–Fisher distributions on the unit hypersphere `S^{n-1}`.
//!
//! Density `f(x) = C_n(κ) exp(κ μᵀx)` with
//! `C_n(κ) = κ^{n/2−1} / ((2π)^{n/2} I_{n/2−1}(κ))`. Everything here works in
//! natural-log scale and reports entropies in nats.

pub mod bessel;
mod sampling;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bessel::{bessel_ratio, log_bessel_i};
pub use sampling::{sample_vmf, VmfSampler};

/// Upper bound on any concentration handled by this crate.
pub const KAPPA_MAX: f64 = 1e5;

/// Sample mean resultant lengths are clamped to this before estimating `κ`.
pub const MAX_MEAN_RESULTANT: f64 = 1.0 - 1e-12;

const UNIT_TOLERANCE: f64 = 1e-9;

/// A point on the unit hypersphere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct UnitVector(Vec<f64>);

impl UnitVector {
    /// Renormalizes `components` onto the sphere.
    pub fn new(components: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Domain("unit vector needs at least one component".into()));
        }
        if components.iter().any(|c| !c.is_finite()) {
            return Err(Error::Domain("unit vector components must be finite".into()));
        }
        let norm = l2_norm(&components);
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroVector);
        }
        Ok(UnitVector(components.into_iter().map(|c| c / norm).collect()))
    }

    /// The `index`-th standard basis vector of `R^dim`.
    pub fn basis(dim: usize, index: usize) -> Self {
        assert!(index < dim, "basis index {index} out of range for dim {dim}");
        let mut v = vec![0.0; dim];
        v[index] = 1.0;
        UnitVector(v)
    }

    /// Wraps components already known to have unit norm.
    pub(crate) fn from_normalized(components: Vec<f64>) -> Self {
        debug_assert!((l2_norm(&components) - 1.0).abs() <= 1e-6);
        UnitVector(components)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &UnitVector) -> f64 {
        dot(&self.0, &other.0)
    }

    /// Angle to `other` in radians.
    pub fn angle_to(&self, other: &UnitVector) -> f64 {
        self.dot(other).clamp(-1.0, 1.0).acos()
    }
}

impl TryFrom<Vec<f64>> for UnitVector {
    type Error = Error;

    fn try_from(components: Vec<f64>) -> Result<Self> {
        // tolerates serialized round-off, not arbitrary vectors
        let norm = l2_norm(&components);
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::Domain(format!("vector norm {norm} is not 1")));
        }
        UnitVector::new(components)
    }
}

impl From<UnitVector> for Vec<f64> {
    fn from(v: UnitVector) -> Self {
        v.0
    }
}

impl AsRef<[f64]> for UnitVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    // scale first so huge or tiny inputs neither overflow nor underflow
    let scale = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    scale * v.iter().map(|x| (x / scale).powi(2)).sum::<f64>().sqrt()
}

/// Parameters of a fitted or specified VMF distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmfParams {
    pub mean_direction: UnitVector,
    pub concentration: f64,
    pub dim: usize,
}

impl VmfParams {
    pub fn new(mean_direction: UnitVector, concentration: f64) -> Result<Self> {
        let params = VmfParams {
            dim: mean_direction.dim(),
            mean_direction,
            concentration,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        check_dim(self.dim)?;
        check_kappa(self.concentration)?;
        if self.mean_direction.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: self.mean_direction.dim(),
            });
        }
        let norm = l2_norm(self.mean_direction.as_slice());
        if (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::Domain(format!("mean direction has norm {norm}")));
        }
        Ok(())
    }

    /// `ln f(x)` for a point on the sphere.
    pub fn log_pdf(&self, x: &UnitVector) -> Result<f64> {
        if x.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.dim(),
            });
        }
        Ok(log_norm_const(self.dim, self.concentration)?
            + self.concentration * self.mean_direction.dot(x))
    }

    pub fn entropy(&self) -> Result<f64> {
        vmf_entropy(self)
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim < 2 {
        return Err(Error::Domain(format!("sphere dimension must be >= 2, got {dim}")));
    }
    Ok(())
}

fn check_kappa(kappa: f64) -> Result<()> {
    if !(0.0..=KAPPA_MAX).contains(&kappa) {
        return Err(Error::Domain(format!(
            "concentration {kappa} outside [0, {KAPPA_MAX}]"
        )));
    }
    Ok(())
}

/// `ln C_n(κ)`.
pub fn log_norm_const(dim: usize, kappa: f64) -> Result<f64> {
    check_dim(dim)?;
    check_kappa(kappa)?;
    let half = dim as f64 / 2.0;
    let order = half - 1.0;
    // ln(Γ(n/2) / (2π^{n/2})), the κ → 0 limit
    let uniform = libm::lgamma(half) - std::f64::consts::LN_2 - half * PI.ln();
    if kappa == 0.0 {
        return Ok(uniform);
    }
    if kappa <= 1.0 && bessel::Regime::select(order, kappa) == bessel::Regime::Series {
        // κ^ν cancels against the series prefactor analytically
        return Ok(uniform - bessel::log_series_sum(order, kappa));
    }
    Ok(order * kappa.ln() - half * (2.0 * PI).ln() - log_bessel_i(order, kappa)?)
}

/// `W_n(κ) = I_{n/2}(κ) / I_{n/2−1}(κ)`, the length of the VMF mean vector.
pub fn mean_resultant(dim: usize, kappa: f64) -> Result<f64> {
    check_dim(dim)?;
    check_kappa(kappa)?;
    bessel_ratio(dim as f64 / 2.0 - 1.0, kappa)
}

/// Differential entropy in nats: `h = −ln C_n(κ) − κ W_n(κ)`.
pub fn vmf_entropy(params: &VmfParams) -> Result<f64> {
    params.validate()?;
    let kappa = params.concentration;
    Ok(-log_norm_const(params.dim, kappa)? - kappa * mean_resultant(params.dim, kappa)?)
}

/// Entropy of a VMF with the given dimension and concentration; the mean
/// direction does not matter.
pub fn vmf_entropy_for(dim: usize, kappa: f64) -> Result<f64> {
    check_dim(dim)?;
    check_kappa(kappa)?;
    Ok(-log_norm_const(dim, kappa)? - kappa * mean_resultant(dim, kappa)?)
}

/// Banerjee et al. closed-form estimate `κ̂ = r̄(n − r̄²)/(1 − r̄²)`.
pub fn approx_kappa(dim: usize, mean_resultant_length: f64) -> f64 {
    let r = mean_resultant_length.clamp(0.0, MAX_MEAN_RESULTANT);
    let n = dim as f64;
    (r * (n - r * r) / (1.0 - r * r)).clamp(0.0, KAPPA_MAX)
}

/// Closed-form VMF fit: normalized resultant for `μ̂`, Banerjee for `κ̂`.
pub fn fit_vmf(samples: &[UnitVector]) -> Result<VmfParams> {
    if samples.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    let dim = samples[0].dim();
    check_dim(dim)?;
    let mut resultant = vec![0.0; dim];
    for s in samples {
        if s.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: s.dim(),
            });
        }
        for (acc, x) in resultant.iter_mut().zip(s.as_slice()) {
            *acc += x;
        }
    }
    let length = l2_norm(&resultant);
    if length == 0.0 {
        return Err(Error::Degenerate(
            "samples sum to the zero vector; mean direction undefined".into(),
        ));
    }
    let r_bar = length / samples.len() as f64;
    let mean_direction =
        UnitVector::from_normalized(resultant.into_iter().map(|x| x / length).collect());
    Ok(VmfParams {
        mean_direction,
        concentration: approx_kappa(dim, r_bar),
        dim,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // n = 3 closed forms: C₃(κ) = κ / (4π sinh κ), W₃(κ) = coth κ − 1/κ.
    fn c3_log(k: f64) -> f64 {
        k.ln() - (4.0 * PI).ln() - k.sinh().ln()
    }
    fn w3(k: f64) -> f64 {
        1.0 / k.tanh() - 1.0 / k
    }

    #[test]
    fn unit_vector_normalizes_and_rejects_zero() {
        let v = UnitVector::new(vec![3.0, 0.0, 4.0]).unwrap();
        assert_eq!(v.as_slice(), &[0.6, 0.0, 0.8]);
        assert!(matches!(UnitVector::new(vec![0.0, 0.0]), Err(Error::ZeroVector)));
        assert!(UnitVector::new(vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn unit_vector_serde_rejects_non_unit() {
        let ok: UnitVector = serde_json::from_str("[0.6, 0.8]").unwrap();
        assert_eq!(ok.dim(), 2);
        assert!(serde_json::from_str::<UnitVector>("[3.0, 4.0]").is_err());
    }

    #[test]
    fn norm_const_examples() {
        let uniform = -(4.0 * PI).ln();
        assert!((log_norm_const(3, 1e-9).unwrap() - uniform).abs() < 1e-12);
        assert!((log_norm_const(3, 0.0).unwrap() - uniform).abs() < 1e-15);
        assert!((log_norm_const(3, 1.0).unwrap() - c3_log(1.0)).abs() < 1e-12);
        assert!((log_norm_const(3, 1.0).unwrap() - -2.692_463_608_540_486).abs() < 1e-9);

        // n = 2: C₂(κ) = 1/(2π I₀(κ)), I₀(2) by its own power series
        let i0: f64 = (0..40)
            .map(|k| {
                let fact: f64 = (1..=k).map(|j| j as f64).product();
                1.0 / (fact * fact)
            })
            .sum();
        let direct = -(2.0 * PI * i0).ln();
        assert!((log_norm_const(2, 2.0).unwrap() - direct).abs() <= 1e-10 * direct.abs());
    }

    #[test]
    fn norm_const_matches_closed_form_across_range() {
        for &k in &[1e-6_f64, 0.3, 0.999, 1.001, 5.0, 49.0, 51.0, 700.0, 1e4, 1e5] {
            let got = log_norm_const(3, k).unwrap();
            let want = if k > 30.0 {
                // ln sinh κ = κ − ln 2 + ln(1 − e^{−2κ})
                k.ln() - (4.0 * PI).ln() - (k - std::f64::consts::LN_2 + (-2.0 * k).exp().ln_1p())
            } else {
                c3_log(k)
            };
            assert!((got - want).abs() <= 1e-10 * want.abs().max(1.0), "k={k}");
        }
    }

    #[test]
    fn norm_const_domain_errors() {
        assert!(log_norm_const(1, 1.0).is_err());
        assert!(log_norm_const(3, -1.0).is_err());
        assert!(log_norm_const(3, KAPPA_MAX * 2.0).is_err());
    }

    #[test]
    fn mean_resultant_examples() {
        assert_eq!(mean_resultant(3, 0.0).unwrap(), 0.0);
        assert!((mean_resultant(3, 1.0).unwrap() - w3(1.0)).abs() < 1e-14);
        assert!((mean_resultant(3, 1.0).unwrap() - 0.313_035_285_499_331_3).abs() < 1e-12);
        let high = mean_resultant(10, 1e4).unwrap();
        assert!((1.0 - high).abs() < 1e-3 && high < 1.0);
        assert!(mean_resultant(1, 1.0).is_err());
    }

    #[test]
    fn mean_resultant_is_monotone() {
        for &n in &[2usize, 3, 16, 768] {
            let mut prev = -1.0;
            for i in 0..200 {
                let k = 1e-3 * 1.08_f64.powi(i);
                if k > KAPPA_MAX {
                    break;
                }
                let w = mean_resultant(n, k).unwrap();
                assert!(w > prev && w < 1.0, "n={n} k={k}");
                prev = w;
            }
        }
    }

    #[test]
    fn entropy_examples() {
        let uniform = (4.0 * PI).ln();
        let e = vmf_entropy_for(3, 1e-9).unwrap();
        assert!((e - uniform).abs() < 1e-9);
        // ln(4π sinh 1) − (coth 1 − 1)
        let want = (4.0 * PI * 1.0_f64.sinh()).ln() - (w3(1.0));
        let got = vmf_entropy_for(3, 1.0).unwrap();
        assert!((got - want).abs() < 1e-12);
        assert!((got - 2.379_428_323_041_155).abs() < 1e-9);
    }

    #[test]
    fn entropy_zero_kappa_is_log_surface_area() {
        for n in 2..40usize {
            let half = n as f64 / 2.0;
            let area = (2.0_f64).ln() + half * PI.ln() - libm::lgamma(half);
            assert!((vmf_entropy_for(n, 0.0).unwrap() - area).abs() < 1e-12);
        }
    }

    #[test]
    fn entropy_floor_is_finite() {
        for &n in &[2usize, 3, 16, 768] {
            assert!(vmf_entropy_for(n, KAPPA_MAX).unwrap().is_finite());
        }
    }

    #[test]
    fn fit_examples() {
        let e1 = UnitVector::basis(3, 0);
        let fit = fit_vmf(&vec![e1.clone(); 5]).unwrap();
        assert_eq!(fit.mean_direction, e1);
        assert_eq!(fit.concentration, KAPPA_MAX);

        // r̄ = 0.5 in n = 3: two samples at ±60° from e₁ in the e₁e₂ plane
        let half_angle = (0.5_f64).acos();
        let a = UnitVector::new(vec![half_angle.cos(), half_angle.sin(), 0.0]).unwrap();
        let b = UnitVector::new(vec![half_angle.cos(), -half_angle.sin(), 0.0]).unwrap();
        let fit = fit_vmf(&[a, b]).unwrap();
        assert!((fit.concentration - 0.5 * (3.0 - 0.25) / 0.75).abs() < 1e-12);
        assert!((fit.mean_direction.dot(&UnitVector::basis(3, 0)) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn fit_errors() {
        let e1 = UnitVector::basis(3, 0);
        assert!(matches!(
            fit_vmf(std::slice::from_ref(&e1)),
            Err(Error::InsufficientSamples { .. })
        ));
        let neg = UnitVector::new(vec![-1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(fit_vmf(&[e1.clone(), neg]), Err(Error::Degenerate(_))));
        assert!(matches!(
            fit_vmf(&[e1, UnitVector::basis(2, 0)]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    proptest! {
        #[test]
        fn entropy_decreases_in_kappa(a in 0.0..1e4f64, b in 0.0..1e4f64, n in 2usize..64) {
            prop_assume!((a - b).abs() > 1e-6);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(vmf_entropy_for(n, lo).unwrap() > vmf_entropy_for(n, hi).unwrap());
        }

        #[test]
        fn mean_resultant_in_unit_interval(k in 0.0..=KAPPA_MAX, n in 2usize..1024) {
            let w = mean_resultant(n, k).unwrap();
            prop_assert!((0.0..1.0).contains(&w));
        }
    }
}

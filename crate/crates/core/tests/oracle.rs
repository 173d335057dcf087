use std::f64::consts::PI;

use vmfuq_core::backends::KappaLaw;
use rand::SeedableRng;
use vmfuq_core::oracle::{
    decomposition_audit, DecompositionAudit, decomposition_audit_with, make_synthetic_backends, mc_entropy, HierarchicalModelSpec,
    MarginalDensity, McEstimate,
};
use vmfuq_core::pipeline::{Pipeline, PipelineConfig};
use vmfuq_core::vmf::{fit_vmf, vmf_entropy, vmf_entropy_for, UnitVector, VmfParams, VmfSampler};
use vmfuq_core::Error;

// n = 3 closed forms, written out independently of the library
fn log_pdf_s2(kappa: f64, mu_dot_x: f64) -> f64 {
    // C_3(κ) = κ / (4π sinh κ); stable for large κ via ln sinh κ = κ + ln(1 − e^{−2κ}) − ln 2
    let ln_sinh = kappa + (-(-2.0 * kappa).exp()).ln_1p() - 2f64.ln();
    kappa.ln() - (4.0 * PI).ln() - ln_sinh + kappa * mu_dot_x
}

fn entropy_s2(kappa: f64) -> f64 {
    // h = −ln C_3(κ) − κ (coth κ − 1/κ)
    let coth = 1.0 / kappa.tanh();
    -log_pdf_s2(kappa, 0.0) - kappa * (coth - 1.0 / kappa)
}

#[test]
fn mc_entropy_matches_closed_form_on_the_two_sphere() {
    let law = VmfParams::new(UnitVector::basis(3, 2), 1.0).unwrap();
    let sampler = VmfSampler::new(&law).unwrap();
    let est = mc_entropy(|r| sampler.sample(r), |x| log_pdf_s2(1.0, x.as_slice()[2]), 200_000, 7).unwrap();
    let truth = entropy_s2(1.0);
    assert!((truth - 2.3794283).abs() < 1e-7);
    assert!(
        (est.value - truth).abs() < 4.0 * est.std_error,
        "{} vs {truth} (se {})",
        est.value,
        est.std_error
    );
    assert_eq!(est.n_samples, 200_000);
}

#[test]
fn uniform_density_gives_log_area_with_zero_error() {
    let law = VmfParams::new(UnitVector::basis(3, 0), 0.0).unwrap();
    let sampler = VmfSampler::new(&law).unwrap();
    let est = mc_entropy(|r| sampler.sample(r), |_| -(4.0 * PI).ln(), 5000, 1).unwrap();
    assert!((est.value - (4.0 * PI).ln()).abs() < 1e-12);
    assert!(est.std_error < 1e-12);
}

#[test]
fn mc_entropy_rejects_small_counts_and_non_finite_densities() {
    let err = mc_entropy(|_| 0.0, |_| 0.0, 999, 1).unwrap_err();
    assert!(matches!(err, Error::InsufficientSamples { needed: 1000, got: 999 }));
    let mut i = 0usize;
    let err = mc_entropy(
        |_| {
            i += 1;
            i
        },
        |&k| if k == 17 { f64::NEG_INFINITY } else { 0.0 },
        2000,
        1,
    )
    .unwrap_err();
    assert!(matches!(err, Error::NonFiniteLogDensity(16)));
}

#[test]
fn pooled_estimate_equals_single_run_statistics() {
    let data: Vec<f64> = (0..3000).map(|i| ((i * 37 % 101) as f64).sqrt()).collect();
    let stats = |xs: &[f64]| {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        McEstimate {
            value: m,
            std_error: (v / n).sqrt(),
            n_samples: xs.len(),
        }
    };
    let whole = stats(&data);
    let pooled = McEstimate::pool(&[stats(&data[..1000]), stats(&data[1000..2200]), stats(&data[2200..])]);
    assert!((whole.value - pooled.value).abs() < 1e-12);
    assert!((whole.std_error - pooled.std_error).abs() < 1e-12);
    assert_eq!(pooled.n_samples, 3000);
}

fn assert_chain_rule(audit: &DecompositionAudit, what: &str) {
    assert_eq!(
        audit.holds_with_posterior(4.0),
        Some(true),
        "{what}: gap {} posterior {:?} se {}",
        audit.gap(),
        audit.posterior,
        audit.combined_std_error()
    );
}

#[test]
fn moderate_regime_gap_is_the_posterior_entropy() {
    let spec = HierarchicalModelSpec::constant(8, 20.0, 50.0, 11).unwrap();
    let audit = decomposition_audit(&spec, 100_000).unwrap();
    assert_eq!(audit.marginal, MarginalDensity::Exact);
    // constant κ_v: h(V|Z) is deterministic
    assert!(audit.rhs_epistemic.std_error < 1e-12);
    assert_chain_rule(&audit, "moderate");
    // h(Z|V) is far from zero here, so the two-term sum misses by nats
    assert!(audit.gap() > 3.0, "gap {}", audit.gap());
    assert!(!audit.holds(3.0));
}

#[test]
fn concentration_limits() {
    let floor = vmf_entropy_for(8, 1e5).unwrap();
    // near-deterministic latent: V|ℓ is V|z₀
    let spec = HierarchicalModelSpec::constant(8, 1e5, 30.0, 3).unwrap();
    let audit = decomposition_audit(&spec, 50_000).unwrap();
    assert!((audit.rhs_aleatoric - floor).abs() < 1e-9);
    assert!((audit.lhs.value - audit.rhs_epistemic.value).abs() < 4.0 * audit.lhs.std_error + 0.01);
    assert_chain_rule(&audit, "κz = 1e5");
    // near-deterministic second stage: V is Z plus a negligible perturbation
    let spec = HierarchicalModelSpec::constant(8, 30.0, 1e5, 3).unwrap();
    let audit = decomposition_audit(&spec, 50_000).unwrap();
    assert!((audit.rhs_epistemic.value - floor).abs() < 1e-9);
    assert!((audit.lhs.value - audit.rhs_aleatoric).abs() < 4.0 * audit.lhs.std_error + 0.01);
    assert_chain_rule(&audit, "κv = 1e5");
    for (kz, kv) in [(1e5, 1e5), (0.0, 10.0), (10.0, 0.0)] {
        let spec = HierarchicalModelSpec::constant(8, kz, kv, 3).unwrap();
        assert_chain_rule(&decomposition_audit(&spec, 20_000).unwrap(), &format!("κz {kz} κv {kv}"));
    }
    // a uniform second stage makes V uniform whatever Z does
    let spec = HierarchicalModelSpec::constant(8, 10.0, 0.0, 3).unwrap();
    let audit = decomposition_audit(&spec, 20_000).unwrap();
    assert!((audit.lhs.value - vmf_entropy_for(8, 0.0).unwrap()).abs() < 1e-9);
}

#[test]
fn two_sphere_audit_matches_hand_formulas() {
    let spec = HierarchicalModelSpec::constant(3, 5.0, 12.0, 5).unwrap();
    let audit = decomposition_audit(&spec, 50_000).unwrap();
    assert!((audit.rhs_aleatoric - entropy_s2(5.0)).abs() < 1e-9);
    assert!((audit.rhs_epistemic.value - entropy_s2(12.0)).abs() < 1e-9);
    // posterior term from the n = 3 closed form at Z|V=v ~ VMF(‖5μ + 12v‖)
    let v_law = |z: &UnitVector| VmfSampler::new(&VmfParams::new(z.clone(), 12.0).unwrap()).unwrap();
    let z_law = VmfSampler::new(&spec.latent_law).unwrap();
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(99);
    let m = 50_000;
    let post: f64 = (0..m)
        .map(|_| {
            let v = v_law(&z_law.sample(&mut rng)).sample(&mut rng);
            let s = v.as_slice();
            let k = ((5.0 + 12.0 * s[0]).powi(2) + (12.0 * s[1]).powi(2) + (12.0 * s[2]).powi(2)).sqrt();
            entropy_s2(k)
        })
        .sum::<f64>()
        / m as f64;
    let p = audit.posterior.unwrap();
    assert!((p.value - post).abs() < 4.0 * p.std_error * 2f64.sqrt(), "{} vs {post}", p.value);
    assert_chain_rule(&audit, "S²");
}

#[test]
fn mixture_lhs_is_invariant_to_k_in_a_benign_regime() {
    let spec = HierarchicalModelSpec::constant(8, 200.0, 5.0, 9).unwrap();
    let exact = decomposition_audit(&spec, 20_000).unwrap();
    assert_chain_rule(&exact, "benign");
    for k in [64, 512] {
        let mix = decomposition_audit_with(&spec, 20_000, MarginalDensity::Mixture { components: k }).unwrap();
        assert_eq!(mix.marginal, MarginalDensity::Mixture { components: k });
        let diff = mix.lhs.value - exact.lhs.value;
        assert!(diff.abs() < 0.01, "K={k}: {diff}");
    }
}

#[test]
fn mixture_marginal_is_biased_when_conditionals_are_sharp() {
    // f(v|z) varies over z by orders of magnitude here, so K = 256 draws
    // underestimate the marginal density well outside the Monte-Carlo error
    let spec = HierarchicalModelSpec::constant(8, 20.0, 50.0, 2).unwrap();
    let exact = decomposition_audit(&spec, 5000).unwrap();
    let mix = decomposition_audit_with(&spec, 5000, MarginalDensity::Mixture { components: 256 }).unwrap();
    let bias = mix.lhs.value - exact.lhs.value;
    assert!(bias > 0.1, "bias {bias}");
    // the spec-style tolerance does not absorb it
    assert!(bias > 3.0 * mix.lhs.std_error.hypot(exact.lhs.std_error), "bias {bias} se {}", mix.lhs.std_error);
}

#[test]
fn latent_dependent_concentration_is_audited_with_the_mixture() {
    let spec = HierarchicalModelSpec {
        text_dim: 3,
        video_dim: 3,
        latent_law: VmfParams::new(UnitVector::basis(3, 0), 1.0).unwrap(),
        conditional_kappa: KappaLaw::LatentSign {
            positive: 1.0,
            negative: 3.0,
        },
        seed: 4,
    };
    assert!(matches!(MarginalDensity::default_for(&spec), MarginalDensity::Mixture { .. }));
    assert!(decomposition_audit_with(&spec, 5000, MarginalDensity::Exact).is_err());
    let audit = decomposition_audit(&spec, 20_000).unwrap();
    assert!(audit.posterior.is_none());
    // P(z₀ < 0) under VMF(e₀, 1) on S²: z₀ has density ∝ e^{t} on [−1, 1]
    let p_neg = (1.0 - (-1f64).exp()) / (1f64.exp() - (-1f64).exp());
    let expected = (1.0 - p_neg) * entropy_s2(1.0) + p_neg * entropy_s2(3.0);
    let e = audit.rhs_epistemic;
    assert!((e.value - expected).abs() < 4.0 * e.std_error, "{} vs {expected}", e.value);
    let small = decomposition_audit_with(&spec, 20_000, MarginalDensity::Mixture { components: 64 }).unwrap();
    assert!((small.lhs.value - audit.lhs.value).abs() < 0.01);
}

#[test]
fn audit_is_deterministic() {
    let spec = HierarchicalModelSpec::constant(8, 20.0, 40.0, 21).unwrap();
    let a = decomposition_audit(&spec, 60_000).unwrap();
    let b = decomposition_audit(&spec, 60_000).unwrap();
    assert_eq!(a.lhs.value.to_bits(), b.lhs.value.to_bits());
    assert_eq!(a.lhs.std_error.to_bits(), b.lhs.std_error.to_bits());
}

#[test]
fn spec_validation() {
    assert!(HierarchicalModelSpec::constant(8, -1.0, 5.0, 0).is_err());
    let mut spec = HierarchicalModelSpec::constant(8, 1.0, 5.0, 0).unwrap();
    spec.conditional_kappa = KappaLaw::LogUniform { min: 1.0, max: 2.0 };
    assert!(spec.validate().is_err());
    spec.conditional_kappa = KappaLaw::Constant { kappa: 5.0 };
    spec.text_dim = 6;
    assert!(matches!(spec.validate(), Err(Error::DimensionMismatch { .. })));
    let json = serde_json::to_string(&HierarchicalModelSpec::constant(4, 2.0, 3.0, 1).unwrap()).unwrap();
    let back: HierarchicalModelSpec = serde_json::from_str(&json).unwrap();
    assert_eq!(back, HierarchicalModelSpec::constant(4, 2.0, 3.0, 1).unwrap());
}

#[test]
fn synthetic_backends_realise_the_model() {
    let spec = HierarchicalModelSpec::constant(8, 40.0, 1e5, 13).unwrap();
    let backends = make_synthetic_backends(&spec).unwrap();
    let config = PipelineConfig {
        n_latents: 400,
        m_videos: 3,
        text_target_dim: 8,
        video_target_dim: 8,
        ..PipelineConfig::default()
    };
    let pipeline = Pipeline::new(config, backends).unwrap();
    let ale = pipeline.aleatoric("anything").unwrap();
    let truth = vmf_entropy(&spec.latent_law).unwrap();
    // Banerjee at n = 8, κ = 40 is within a few percent; N = 400 adds little
    assert!((ale.fit.concentration / 40.0 - 1.0).abs() < 0.1, "{}", ale.fit.concentration);
    assert!((ale.entropy - truth).abs() < 0.3, "{} vs {truth}", ale.entropy);
    let samples: Vec<UnitVector> = ale
        .latents
        .iter()
        .map(|l| l.embedding.clone().unwrap())
        .collect();
    assert!(fit_vmf(&samples).unwrap().mean_direction.dot(&spec.latent_law.mean_direction) > 0.99);
}

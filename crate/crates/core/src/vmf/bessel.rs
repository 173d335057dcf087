//! Modified Bessel functions of the first kind, evaluated in log scale.
//!
//! Three regimes cover the whole `(order, arg)` quadrant:
//!
//! * ascending power series for small and moderate arguments,
//! * the large-argument (Hankel) expansion when `arg` dominates `order²`,
//! * the uniform (Debye) expansion for orders of 20 and above.
//!
//! The ratio `I_{ν+1}(x) / I_ν(x)` is computed separately with a continued
//! fraction so that it never has to be recovered from two huge logarithms.

use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Orders at or above this use the uniform asymptotic expansion.
const DEBYE_MIN_ORDER: f64 = 20.0;
/// Number of Debye correction polynomials kept.
const DEBYE_TERMS: usize = 14;
/// Smallest argument handed to the Hankel expansion.
const HANKEL_MIN_ARG: f64 = 50.0;

const SERIES_MAX_TERMS: usize = 100_000;
const LENTZ_MAX_ITER: usize = 10_000_000;
const TINY: f64 = 1e-300;

fn check_inputs(order: f64, arg: f64) -> Result<()> {
    if !order.is_finite() || !arg.is_finite() {
        return Err(Error::Domain(format!(
            "bessel inputs must be finite (order={order}, arg={arg})"
        )));
    }
    if order < 0.0 || arg < 0.0 {
        return Err(Error::Domain(format!(
            "bessel inputs must be non-negative (order={order}, arg={arg})"
        )));
    }
    Ok(())
}

/// `ln I_ν(x)` for `ν ≥ 0`, `x ≥ 0`.
///
/// Returns `0` at `x = 0, ν = 0` and `-∞` at `x = 0, ν > 0`.
pub fn log_bessel_i(order: f64, arg: f64) -> Result<f64> {
    check_inputs(order, arg)?;
    if arg == 0.0 {
        return Ok(if order == 0.0 { 0.0 } else { f64::NEG_INFINITY });
    }
    Ok(match Regime::select(order, arg) {
        Regime::Series => series_prefactor(order, arg) + log_series_sum(order, arg),
        Regime::Hankel => log_hankel(order, arg),
        Regime::Debye => log_debye(order, arg),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Regime {
    Series,
    Hankel,
    Debye,
}

impl Regime {
    pub(crate) fn select(order: f64, arg: f64) -> Self {
        if order >= DEBYE_MIN_ORDER {
            Regime::Debye
        } else if arg >= HANKEL_MIN_ARG.max(order * order) {
            Regime::Hankel
        } else {
            Regime::Series
        }
    }
}

/// `ν ln(x/2) − ln Γ(ν+1)`, the leading factor of the ascending series.
fn series_prefactor(order: f64, arg: f64) -> f64 {
    order * (0.5 * arg).ln() - libm::lgamma(order + 1.0)
}

/// `ln Σ_k (x²/4)^k / (k! (ν+1)_k)`.
///
/// Every term is positive, so the sum is computed without cancellation; the
/// `ln_1p` keeps full relative precision when the correction is tiny.
pub(crate) fn log_series_sum(order: f64, arg: f64) -> f64 {
    let q = 0.25 * arg * arg;
    let mut term = 1.0;
    let mut tail = 0.0;
    for k in 0..SERIES_MAX_TERMS {
        let kf = k as f64;
        term *= q / ((kf + 1.0) * (order + kf + 1.0));
        tail += term;
        // terms decrease monotonically once past the peak
        if term <= tail * 1e-17 && (kf + 1.0) * (order + kf + 1.0) > q {
            break;
        }
    }
    tail.ln_1p()
}

fn log_hankel(order: f64, arg: f64) -> f64 {
    let mu = 4.0 * order * order;
    let mut term = 1.0_f64;
    let mut sum = 1.0_f64;
    let mut k = 1.0_f64;
    loop {
        let odd = 2.0 * k - 1.0;
        let next = -term * (mu - odd * odd) / (8.0 * k * arg);
        if next == 0.0 {
            break;
        }
        // asymptotic series: stop at the smallest term
        if next.abs() >= term.abs() && k > 1.0 {
            break;
        }
        sum += next;
        term = next;
        if term.abs() <= sum.abs() * 1e-17 {
            break;
        }
        k += 1.0;
    }
    arg - 0.5 * (2.0 * PI * arg).ln() + sum.ln()
}

/// Coefficients of the Debye polynomials `u_k(t)`, lowest power first.
fn debye_polynomials() -> &'static [Vec<f64>] {
    static POLYS: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    POLYS.get_or_init(|| {
        let mut polys: Vec<Vec<f64>> = vec![vec![1.0]];
        for k in 0..DEBYE_TERMS - 1 {
            let prev = &polys[k];
            let mut next = vec![0.0; prev.len() + 3];
            // u_{k+1} = ½ t²(1−t²) u_k' + ⅛ ∫₀ᵗ (1−5s²) u_k(s) ds
            for (j, &c) in prev.iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                let jf = j as f64;
                next[j + 1] += 0.5 * jf * c + c / (8.0 * (jf + 1.0));
                next[j + 3] += -0.5 * jf * c - 5.0 * c / (8.0 * (jf + 3.0));
            }
            polys.push(next);
        }
        polys
    })
}

fn eval_poly(coeffs: &[f64], t: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * t + c)
}

fn log_debye(order: f64, arg: f64) -> f64 {
    let z = arg / order;
    let root = z.hypot(1.0);
    let t = 1.0 / root;
    let eta = root + (z / (1.0 + root)).ln();

    let mut sum = 1.0;
    let mut scale = 1.0;
    for poly in &debye_polynomials()[1..] {
        scale /= order;
        let term = eval_poly(poly, t) * scale;
        sum += term;
        if term.abs() <= 1e-18 {
            break;
        }
    }
    order * eta - 0.5 * (2.0 * PI * order).ln() - 0.5 * root.ln() + sum.ln()
}

/// `I_{ν+1}(x) / I_ν(x)` by modified Lentz evaluation of the Gauss continued
/// fraction `1 / (2(ν+1)/x + 1 / (2(ν+2)/x + …))`.
///
/// The result lies in `[0, 1)` for every finite non-negative input.
pub fn bessel_ratio(order: f64, arg: f64) -> Result<f64> {
    check_inputs(order, arg)?;
    if arg == 0.0 {
        return Ok(0.0);
    }
    let inv = 2.0 / arg;
    let b = |j: usize| (order + 1.0 + j as f64) * inv;

    let mut f = b(0).max(TINY);
    let mut c = f;
    let mut d = 0.0;
    for j in 1..LENTZ_MAX_ITER {
        let bj = b(j);
        d += bj;
        if d.abs() < TINY {
            d = TINY;
        }
        c = bj + 1.0 / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    Ok((1.0 / f).min(1.0 - f64::EPSILON))
}

//! Kendall's τ-b with tie-corrected significance.
//!
//! τ is computed in O(n log n) by Knight's method: sort by `x` (ties broken
//! by `y`), then count discordant pairs as the exchanges a stable merge sort
//! on `y` performs. All pair counts are exact integers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest `n` for which the exact permutation distribution is used when
/// there are no ties.
pub const EXACT_MAX_N: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PValueMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KendallResult {
    pub tau: f64,
    pub p_value: f64,
    pub n: usize,
    /// Concordant minus discordant pairs, `S`.
    pub score: i64,
    pub method: PValueMethod,
}

/// Pair counts used by both τ and its variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairCounts {
    pub n: i64,
    pub concordant_minus_discordant: i64,
    /// Pairs tied in `x` (including joint ties).
    pub x_ties: i64,
    pub y_ties: i64,
    pub joint_ties: i64,
}

fn tie_groups(sorted: &[f64]) -> Vec<i64> {
    let mut groups = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        if j - i > 1 {
            groups.push((j - i) as i64);
        }
        i = j;
    }
    groups
}

fn pairs_in(groups: &[i64]) -> i64 {
    groups.iter().map(|t| t * (t - 1) / 2).sum()
}

/// Sorts `v` and returns the number of strict inversions.
fn merge_count(v: &mut [f64], buf: &mut Vec<f64>) -> i64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid], buf) + merge_count(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf.push(v[j]);
            swaps += (mid - i) as i64;
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..]);
    v.copy_from_slice(buf);
    swaps
}

fn validate(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
    }
    if x.len() < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: x.len() });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Domain("kendall_tau requires finite values".into()));
    }
    Ok(())
}

pub fn pair_counts(x: &[f64], y: &[f64]) -> Result<PairCounts> {
    validate(x, y)?;
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));
    let xs: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
    let mut ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();

    let x_ties = pairs_in(&tie_groups(&xs));
    let mut joint = 0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && xs[j] == xs[i] && ys[j] == ys[i] {
            j += 1;
        }
        let t = (j - i) as i64;
        joint += t * (t - 1) / 2;
        i = j;
    }
    let discordant = merge_count(&mut ys, &mut Vec::with_capacity(n));
    let y_ties = pairs_in(&tie_groups(&ys));
    let total = (n as i64) * (n as i64 - 1) / 2;
    Ok(PairCounts {
        n: n as i64,
        concordant_minus_discordant: total - x_ties - y_ties + joint - 2 * discordant,
        x_ties,
        y_ties,
        joint_ties: joint,
    })
}

/// Tie-adjusted variance of `S` under independence.
fn score_variance(x_groups: &[i64], y_groups: &[i64], n: i64) -> f64 {
    let f = |t: i64| t as f64;
    let v0 = f(n) * f(n - 1) * f(2 * n + 5);
    let vx: f64 = x_groups.iter().map(|&t| f(t) * f(t - 1) * f(2 * t + 5)).sum();
    let vy: f64 = y_groups.iter().map(|&t| f(t) * f(t - 1) * f(2 * t + 5)).sum();
    let x1: f64 = x_groups.iter().map(|&t| f(t) * f(t - 1)).sum();
    let y1: f64 = y_groups.iter().map(|&t| f(t) * f(t - 1)).sum();
    let x2: f64 = x_groups.iter().map(|&t| f(t) * f(t - 1) * f(t - 2)).sum();
    let y2: f64 = y_groups.iter().map(|&t| f(t) * f(t - 1) * f(t - 2)).sum();
    let mut var = (v0 - vx - vy) / 18.0 + x1 * y1 / (2.0 * f(n) * f(n - 1));
    if n > 2 {
        var += x2 * y2 / (9.0 * f(n) * f(n - 1) * f(n - 2));
    }
    var
}

/// Two-sided normal-approximation p-value with a continuity correction of 1
/// on `|S|`.
pub fn normal_p_value(score: i64, variance: f64) -> f64 {
    if variance <= 0.0 {
        return 1.0;
    }
    let z = ((score.abs() - 1).max(0) as f64) / variance.sqrt();
    libm::erfc(z / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
}

/// Number of permutations of `n` items with each inversion count.
fn inversion_counts(n: usize) -> Vec<u64> {
    let mut counts = vec![1u64];
    for k in 2..=n {
        let mut next = vec![0u64; counts.len() + k - 1];
        for (inv, &c) in counts.iter().enumerate() {
            for add in 0..k {
                next[inv + add] += c;
            }
        }
        counts = next;
    }
    counts
}

/// Two-sided exact p-value for `S` with `n` untied items.
pub fn exact_p_value(score: i64, n: usize) -> f64 {
    let counts = inversion_counts(n);
    let total_pairs = (n * (n - 1) / 2) as i64;
    let all: u64 = counts.iter().sum();
    let extreme: u64 = counts
        .iter()
        .enumerate()
        .filter(|(inv, _)| (total_pairs - 2 * *inv as i64).abs() >= score.abs())
        .map(|(_, c)| c)
        .sum();
    (extreme as f64 / all as f64).min(1.0)
}

/// τ-b and its two-sided p-value. Uses the exact permutation distribution
/// for `n <= 8` without ties, the normal approximation otherwise.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Result<KendallResult> {
    let counts = pair_counts(x, y)?;
    let n = counts.n;
    let total = n * (n - 1) / 2;
    if counts.x_ties == total || counts.y_ties == total {
        return Err(Error::Degenerate(
            "all values tied in one coordinate; tau is undefined".into(),
        ));
    }
    let denom = ((total - counts.x_ties) as f64 * (total - counts.y_ties) as f64).sqrt();
    let tau = (counts.concordant_minus_discordant as f64 / denom).clamp(-1.0, 1.0);
    let score = counts.concordant_minus_discordant;
    let no_ties = counts.x_ties == 0 && counts.y_ties == 0;
    let (p_value, method) = if no_ties && x.len() <= EXACT_MAX_N {
        (exact_p_value(score, x.len()), PValueMethod::Exact)
    } else {
        let mut xs = x.to_vec();
        let mut ys = y.to_vec();
        xs.sort_by(f64::total_cmp);
        ys.sort_by(f64::total_cmp);
        let var = score_variance(&tie_groups(&xs), &tie_groups(&ys), n);
        (normal_p_value(score, var), PValueMethod::Normal)
    };
    Ok(KendallResult {
        tau,
        p_value,
        n: x.len(),
        score,
        method,
    })
}

/// Normal-approximation p-value regardless of `n`, for comparison with the
/// exact distribution.
pub fn kendall_normal_p_value(x: &[f64], y: &[f64]) -> Result<f64> {
    let counts = pair_counts(x, y)?;
    let mut xs = x.to_vec();
    let mut ys = y.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let var = score_variance(&tie_groups(&xs), &tie_groups(&ys), counts.n);
    Ok(normal_p_value(counts.concordant_minus_discordant, var))
}

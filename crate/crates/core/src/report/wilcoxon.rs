//! Paired Wilcoxon signed-rank test.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Largest sample size evaluated with the exact permutation distribution.
pub const EXACT_MAX_N: usize = 20;
/// Fewest non-zero differences accepted.
pub const MIN_PAIRS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wilcoxon {
    /// Pairs left after dropping zero differences.
    pub n: usize,
    /// Rank sum of positive differences `a - b`.
    pub w_plus: f64,
    pub w_minus: f64,
    /// Two-sided p-value.
    pub p: f64,
    pub exact: bool,
}

/// 1-based ranks with ties given the average of the positions they span.
pub fn mid_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Two-sided signed-rank test of `a` against `b` (paired by position).
///
/// Exact for up to [`EXACT_MAX_N`] pairs; above that a normal approximation
/// with continuity and tie corrections.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<Wilcoxon> {
    if a.len() != b.len() {
        return Err(invalid(format!("paired samples differ in length: {} vs {}", a.len(), b.len())));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(invalid("paired samples contain non-finite values"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if d.is_empty() {
        return Err(invalid("all paired differences are zero"));
    }
    let n = d.len();
    if n < MIN_PAIRS {
        return Err(invalid(format!("{n} non-zero differences, need at least {MIN_PAIRS}")));
    }
    let ranks = mid_ranks(&d.iter().map(|v| v.abs()).collect::<Vec<_>>());
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let w_minus = total - w_plus;
    let (p, exact) = if n <= EXACT_MAX_N {
        // Mid-ranks are multiples of 1/2, so doubled ranks are integers.
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        (exact_p(&doubled, (2.0 * w_plus).round() as usize), true)
    } else {
        (normal_p(&ranks, w_plus), false)
    };
    Ok(Wilcoxon {
        n,
        w_plus,
        w_minus,
        p,
        exact,
    })
}

/// Fraction of the `2^n` sign assignments whose rank sum lies at least as far
/// from the null mean as `observed` (all quantities in doubled-rank units).
fn exact_p(doubled: &[usize], observed: usize) -> f64 {
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0u64; total + 1];
    counts[0] = 1;
    let mut reach = 0;
    for &r in doubled {
        for s in (0..=reach).rev() {
            if counts[s] > 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let dev = (2 * observed).abs_diff(total);
    let hits: u64 = counts
        .iter()
        .enumerate()
        .filter(|(s, _)| (2 * s).abs_diff(total) >= dev)
        .map(|(_, c)| c)
        .sum();
    (hits as f64 / 2f64.powi(doubled.len() as i32)).min(1.0)
}

fn normal_p(ranks: &[f64], w_plus: f64) -> f64 {
    let n = ranks.len() as f64;
    let mu = n * (n + 1.0) / 4.0;
    let mut sorted = ranks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|r| **r == sorted[i]).count();
        let t = j as f64;
        tie += t * t * t - t;
        i += j;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie / 48.0;
    let z = ((w_plus - mu).abs() - 0.5).max(0.0) / var.sqrt();
    libm::erfc(z / std::f64::consts::SQRT_2).min(1.0)
}

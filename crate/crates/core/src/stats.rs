//! Relative performance and the Wilcoxon-Mann-Whitney rank-sum test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Significance level used for every comparison.
pub const ALPHA: f64 = 0.01;

/// Largest per-sample size handled by exact enumeration.
pub const EXACT_MAX: usize = 12;

/// `100 * (baseline - candidate) / baseline`; positive means the candidate
/// has the lower loss.
pub fn relative_performance(candidate_loss: f64, baseline_loss: f64) -> Result<f64> {
    if !(baseline_loss > 0.0) {
        return Err(Error::Input(format!("baseline loss {baseline_loss} must be positive")));
    }
    Ok(100.0 * (baseline_loss - candidate_loss) / baseline_loss)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    TwoSided,
    /// `xs` tends to be smaller than `ys`.
    Less,
    Greater,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact,
    NormalApprox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    /// Mann-Whitney `U` of `xs`: pairs with `x > y`, ties counting one half.
    pub u_statistic: f64,
    pub p_value: f64,
    pub method: Method,
    pub alpha: f64,
    pub significant: bool,
}

/// Midranks (1-based) of `values`, in input order.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn check(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::Input("rank-sum test needs two non-empty samples".into()));
    }
    if xs.iter().chain(ys).any(|v| v.is_nan()) {
        return Err(Error::Input("rank-sum test samples contain NaN".into()));
    }
    Ok(())
}

fn u_from_rank_sum(rank_sum: f64, n: usize) -> f64 {
    rank_sum - (n * (n + 1)) as f64 / 2.0
}

fn result(u: f64, p: f64, method: Method) -> ComparisonResult {
    let p_value = p.clamp(0.0, 1.0);
    ComparisonResult {
        u_statistic: u,
        p_value,
        method,
        alpha: ALPHA,
        significant: p_value < ALPHA,
    }
}

fn combine(alternative: Alternative, p_less: f64, p_greater: f64) -> f64 {
    match alternative {
        Alternative::Less => p_less,
        Alternative::Greater => p_greater,
        Alternative::TwoSided => (2.0 * p_less.min(p_greater)).min(1.0),
    }
}

/// Exact when both samples have at most [`EXACT_MAX`] values, normal
/// approximation otherwise.
pub fn wmw_test(xs: &[f64], ys: &[f64], alternative: Alternative) -> Result<ComparisonResult> {
    if xs.len() <= EXACT_MAX && ys.len() <= EXACT_MAX {
        wmw_exact(xs, ys, alternative)
    } else {
        wmw_normal(xs, ys, alternative)
    }
}

/// Exact permutation p-value under the observed tie pattern. Counts the
/// labelings whose `xs` rank sum is at most (or at least) the observed one;
/// the two-sided value doubles the smaller tail.
pub fn wmw_exact(xs: &[f64], ys: &[f64], alternative: Alternative) -> Result<ComparisonResult> {
    check(xs, ys)?;
    let n = xs.len();
    let pooled: Vec<f64> = xs.iter().chain(ys).copied().collect();
    // doubled midranks are integers
    let ranks2: Vec<usize> = midranks(&pooled).iter().map(|r| (2.0 * r) as usize).collect();
    let observed: usize = ranks2[..n].iter().sum();
    let max_sum: usize = ranks2.iter().sum();

    // ways[k][s]: subsets of size k with doubled rank sum s
    let mut ways = vec![vec![0u64; max_sum + 1]; n + 1];
    ways[0][0] = 1;
    for &r in &ranks2 {
        for k in (1..=n).rev() {
            let (lo, hi) = ways.split_at_mut(k);
            for s in (r..=max_sum).rev() {
                hi[0][s] += lo[k - 1][s - r];
            }
        }
    }
    let total: u64 = ways[n].iter().sum();
    let le: u64 = ways[n][..=observed].iter().sum();
    let ge: u64 = ways[n][observed..].iter().sum();
    let p = combine(alternative, le as f64 / total as f64, ge as f64 / total as f64);
    Ok(result(u_from_rank_sum(observed as f64 / 2.0, n), p, Method::Exact))
}

/// Normal approximation with tie-corrected variance and a 0.5 continuity
/// correction.
pub fn wmw_normal(xs: &[f64], ys: &[f64], alternative: Alternative) -> Result<ComparisonResult> {
    check(xs, ys)?;
    let (n, m) = (xs.len() as f64, ys.len() as f64);
    let pooled: Vec<f64> = xs.iter().chain(ys).copied().collect();
    let ranks = midranks(&pooled);
    let u = u_from_rank_sum(ranks[..xs.len()].iter().sum(), xs.len());

    let total = n + m;
    let mut sorted = pooled.clone();
    sorted.sort_by(f64::total_cmp);
    let ties: f64 = sorted
        .chunk_by(|a, b| a == b)
        .map(|g| {
            let t = g.len() as f64;
            t * t * t - t
        })
        .sum();
    let var = n * m / 12.0 * ((total + 1.0) - ties / (total * (total - 1.0)));
    if !(var > 0.0) {
        return Ok(result(u, 1.0, Method::NormalApprox));
    }
    let sd = var.sqrt();
    let mean = n * m / 2.0;
    let normal = Normal::standard();
    let p_less = normal.cdf((u - mean + 0.5) / sd);
    let p_greater = normal.sf((u - mean - 0.5) / sd);
    Ok(result(u, combine(alternative, p_less, p_greater), Method::NormalApprox))
}

/// Mean, minimum and maximum of a non-empty sample.
pub fn summarize(values: &[f64]) -> Option<(f64, f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Some((mean, min, max))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_performance_examples() {
        assert_eq!(relative_performance(99.0, 100.0).unwrap(), 1.0);
        assert_eq!(relative_performance(100.0, 100.0).unwrap(), 0.0);
        assert!(relative_performance(1.0, 0.0).is_err());
    }

    #[test]
    fn midranks_share_ties() {
        assert_eq!(midranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn empty_is_input_error() {
        assert!(matches!(wmw_test(&[], &[1.0], Alternative::Less), Err(Error::Input(_))));
    }

    #[test]
    fn identical_samples_two_sided_one() {
        let r = wmw_test(&[2.0, 2.0, 2.0], &[2.0, 2.0, 2.0], Alternative::TwoSided).unwrap();
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.u_statistic, 4.5);
    }
}

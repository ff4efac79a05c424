//! Two-sided Mann-Whitney U test with midrank ties.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Exact p-values are used when both samples have at most this many values.
pub const EXACT_MAX_SIDE: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PValueMethod {
    /// Full permutation distribution of the (tied) rank sum.
    Exact,
    /// Normal approximation with tie-corrected variance and a 0.5 continuity correction.
    Normal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// Pairs `(x, y)` with `x` from the first sample above `y`, ties counting half.
    pub u: f64,
    /// The same count for the second sample: `n * m - u`.
    pub u_prime: f64,
    pub p_value: f64,
    pub method: PValueMethod,
}

/// Doubled midranks of the pooled sample (integers), plus the tie term
/// `sum(t^3 - t)` over tie groups.
fn doubled_midranks(pooled: &[f64]) -> (Vec<u64>, f64) {
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&a, &b| pooled[a].total_cmp(&pooled[b]));
    let mut ranks = vec![0u64; pooled.len()];
    let mut ties = 0.0;
    let mut s = 0;
    while s < order.len() {
        let mut e = s;
        while e + 1 < order.len() && pooled[order[e + 1]] == pooled[order[s]] {
            e += 1;
        }
        // ranks are s+1..=e+1; doubled mean is s + e + 2
        for &o in &order[s..=e] {
            ranks[o] = (s + e + 2) as u64;
        }
        let t = (e - s + 1) as f64;
        ties += t * t * t - t;
        s = e + 1;
    }
    (ranks, ties)
}

/// Probability that a random size-`n` subset of `ranks` has a doubled rank sum
/// at least as far from its mean as `observed`.
fn exact_p(ranks: &[u64], n: usize, observed: u64) -> f64 {
    let total: u64 = ranks.iter().sum();
    // counts[k][s]: subsets of size k with doubled rank sum s
    let mut counts = vec![vec![0.0f64; total as usize + 1]; n + 1];
    counts[0][0] = 1.0;
    for &r in ranks {
        for k in (1..=n).rev() {
            for s in (r as usize..=total as usize).rev() {
                counts[k][s] += counts[k - 1][s - r as usize];
            }
        }
    }
    // mean doubled sum is n * total / N; compare 2N-scaled deviations in integers
    let big_n = ranks.len() as i128;
    let center = n as i128 * total as i128;
    let dev = |s: i128| (s * big_n - center).abs();
    let obs = dev(observed as i128);
    let (mut extreme, mut all) = (0.0, 0.0);
    for (s, &c) in counts[n].iter().enumerate() {
        all += c;
        if c > 0.0 && dev(s as i128) >= obs {
            extreme += c;
        }
    }
    (extreme / all).min(1.0)
}

pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("Mann-Whitney needs two nonempty samples".into()));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("Mann-Whitney samples must be finite".into()));
    }
    let (n, m) = (a.len(), b.len());
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = doubled_midranks(&pooled);
    let sum_a: u64 = ranks[..n].iter().sum();
    let nm = (n * m) as f64;
    let u = (sum_a as f64 - (n * (n + 1)) as f64) / 2.0;
    let (p_value, method) = if n <= EXACT_MAX_SIDE && m <= EXACT_MAX_SIDE {
        (exact_p(&ranks, n, sum_a), PValueMethod::Exact)
    } else {
        let big_n = (n + m) as f64;
        let var = nm / 12.0 * ((big_n + 1.0) - ties / (big_n * (big_n - 1.0)));
        let p = if var <= 0.0 {
            1.0
        } else {
            let z = ((u - nm / 2.0).abs() - 0.5).max(0.0) / var.sqrt();
            let normal = Normal::standard();
            (2.0 * normal.sf(z)).min(1.0)
        };
        (p, PValueMethod::Normal)
    };
    Ok(MannWhitney {
        u,
        u_prime: nm - u,
        p_value,
        method,
    })
}

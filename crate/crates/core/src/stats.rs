//! Rank-based tests used to analyse the perception experiments:
//! Kruskal-Wallis, Wilcoxon rank-sum (exact and normal), Benjamini-Hochberg,
//! plus the chi-square survival function they rely on.
//!
//! Ties get average ranks and tie-corrected variances throughout. All
//! p-values are two-sided.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest combined sample size handled by exact enumeration.
pub const EXACT_MAX_N: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    KruskalWallis,
    WilcoxonExact,
    WilcoxonNormal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    /// Degrees of freedom, for chi-square based methods.
    pub df: Option<u32>,
    pub p_value: f64,
    pub method: Method,
}

/// Average ranks (1-based) and the sizes of tied runs.
fn rank(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        if j - i > 1 {
            ties.push(j - i);
        }
        i = j;
    }
    (ranks, ties)
}

fn tie_term(ties: &[usize]) -> f64 {
    ties.iter().map(|&t| (t as f64).powi(3) - t as f64).sum()
}

pub fn kruskal_wallis<S: AsRef<[f64]>>(groups: &[S]) -> Result<TestResult> {
    if groups.len() < 2 {
        return Err(Error::invalid("Kruskal-Wallis needs at least two groups"));
    }
    if groups.iter().any(|g| g.as_ref().is_empty()) {
        return Err(Error::Empty("Kruskal-Wallis group"));
    }
    if groups.iter().flat_map(|g| g.as_ref()).any(|v| v.is_nan()) {
        return Err(Error::invalid("NaN observation"));
    }
    let pooled: Vec<f64> = groups.iter().flat_map(|g| g.as_ref().iter().copied()).collect();
    let n = pooled.len() as f64;
    let (ranks, ties) = rank(&pooled);

    let mut offset = 0;
    let mut sum_sq = 0.0;
    for g in groups {
        let len = g.as_ref().len();
        let r: f64 = ranks[offset..offset + len].iter().sum();
        sum_sq += r * r / len as f64;
        offset += len;
    }
    let df = (groups.len() - 1) as u32;
    let correction = 1.0 - tie_term(&ties) / (n * n * n - n);
    if correction <= 0.0 {
        return Ok(TestResult { statistic: 0.0, df: Some(df), p_value: 1.0, method: Method::KruskalWallis });
    }
    let h = ((12.0 / (n * (n + 1.0)) * sum_sq - 3.0 * (n + 1.0)) / correction).max(0.0);
    Ok(TestResult { statistic: h, df: Some(df), p_value: chi_square_sf(h, df)?, method: Method::KruskalWallis })
}

/// Number of ways each Mann-Whitney U value arises when `m` of `m + n`
/// distinct ranks are drawn, indexed by U.
fn u_distribution(m: usize, n: usize) -> Vec<u64> {
    // counts[j][u] for a first sample of size j drawn from the ranks seen so far
    let mut counts = vec![vec![0u64; m * n + 1]; m + 1];
    counts[0][0] = 1;
    for total in 1..=(m + n) {
        // the new largest rank either joins the first sample (adding the
        // number of second-sample members below it to U) or the second
        for j in (1..=m.min(total)).rev() {
            let below = total - j;
            if below > n {
                continue;
            }
            for u in (below..=m * n).rev() {
                counts[j][u] += counts[j - 1][u - below];
            }
        }
    }
    counts.swap_remove(m)
}

pub fn wilcoxon_rank_sum(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("Wilcoxon sample"));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::invalid("NaN observation"));
    }
    let (na, nb) = (a.len(), b.len());
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = rank(&pooled);
    let rank_sum: f64 = ranks[..na].iter().sum();
    let u = rank_sum - (na * (na + 1)) as f64 / 2.0;

    if ties.is_empty() && na + nb <= EXACT_MAX_N {
        let dist = u_distribution(na, nb);
        let total: u64 = dist.iter().sum();
        let u_idx = u.round() as usize;
        let lower: u64 = dist[..=u_idx].iter().sum();
        let upper: u64 = dist[u_idx..].iter().sum();
        let p = (2.0 * lower.min(upper) as f64 / total as f64).min(1.0);
        return Ok(TestResult { statistic: u, df: None, p_value: p, method: Method::WilcoxonExact });
    }

    let (naf, nbf) = (na as f64, nb as f64);
    let n = naf + nbf;
    let mean = naf * nbf / 2.0;
    let var = naf * nbf / 12.0 * ((n + 1.0) - tie_term(&ties) / (n * (n - 1.0)));
    let p = if var <= 0.0 {
        1.0
    } else {
        let z = ((u - mean).abs() - 0.5).max(0.0) / var.sqrt();
        (2.0 * normal_sf(z)).min(1.0)
    };
    Ok(TestResult { statistic: u, df: None, p_value: p, method: Method::WilcoxonNormal })
}

/// Benjamini-Hochberg adjusted p-values, returned in input order.
pub fn benjamini_hochberg(p_values: &[f64]) -> Result<Vec<f64>> {
    if let Some(p) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::invalid(format!("p-value {p} outside [0, 1]")));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| p_values[i].total_cmp(&p_values[j]));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for (pos, &idx) in order.iter().enumerate().rev() {
        running = running.min(p_values[idx] * m as f64 / (pos + 1) as f64);
        // p * m / m can round below p
        adjusted[idx] = running.min(1.0).max(p_values[idx]);
    }
    Ok(adjusted)
}

/// Upper tail of the chi-square distribution.
pub fn chi_square_sf(x: f64, df: u32) -> Result<f64> {
    if df == 0 {
        return Err(Error::invalid("chi-square needs df >= 1"));
    }
    if !(x >= 0.0) {
        return Err(Error::invalid(format!("chi-square statistic {x} must be non-negative")));
    }
    Ok(gamma_q(df as f64 / 2.0, x / 2.0))
}

/// Upper tail of the standard normal.
pub fn normal_sf(z: f64) -> f64 {
    if z >= 0.0 {
        0.5 * gamma_q(0.5, z * z / 2.0)
    } else {
        1.0 - normal_sf(-z)
    }
}

fn ln_gamma(x: f64) -> f64 {
    // Lanczos, g = 7, n = 9
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized upper incomplete gamma Q(s, x).
fn gamma_q(s: f64, x: f64) -> f64 {
    const EPS: f64 = 1e-16;
    const MAX_ITER: usize = 10_000;
    if x <= 0.0 {
        return 1.0;
    }
    let log_prefix = s * x.ln() - x - ln_gamma(s);
    if x < s + 1.0 {
        // series for P
        let mut term = 1.0 / s;
        let mut sum = term;
        let mut denom = s;
        for _ in 0..MAX_ITER {
            denom += 1.0;
            term *= x / denom;
            sum += term;
            if term.abs() < sum.abs() * EPS {
                break;
            }
        }
        (1.0 - sum * log_prefix.exp()).clamp(0.0, 1.0)
    } else {
        // modified Lentz continued fraction for Q
        let tiny = 1e-300;
        let mut b = x + 1.0 - s;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..MAX_ITER {
            let an = -(i as f64) * (i as f64 - s);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < EPS {
                break;
            }
        }
        (log_prefix.exp() * h).clamp(0.0, 1.0)
    }
}

//! Pearson and Spearman correlation with two-sided p-values from the
//! Student-t approximation, plus tie-aware ranking and an exact
//! permutation p-value for small samples.

use crate::error::{Error, Result};
use crate::numcore::student_t_two_sided_p;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrMethod {
    Pearson,
    Spearman,
}

impl std::fmt::Display for CorrMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CorrMethod::Pearson => write!(f, "pearson"),
            CorrMethod::Spearman => write!(f, "spearman"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationResult {
    pub r: f64,
    pub p_value: f64,
    pub n: usize,
    pub method: CorrMethod,
    /// p_value < 0.05.
    pub significant: bool,
}

fn check_inputs(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Structural(format!(
            "correlation inputs differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::Domain(format!(
            "correlation needs at least 3 observations, got {}",
            x.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Domain("correlation inputs must be finite".into()));
    }
    Ok(())
}

/// Centered second moments: (sxx, syy, sxy).
fn moments(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    (sxx, syy, sxy)
}

fn raw_r(x: &[f64], y: &[f64], what: &str) -> Result<f64> {
    let (sxx, syy, sxy) = moments(x, y);
    if sxx == 0.0 {
        return Err(Error::Degenerate(format!("first {what} sequence is constant")));
    }
    if syy == 0.0 {
        return Err(Error::Degenerate(format!("second {what} sequence is constant")));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Clamps near-perfect correlations and derives the two-sided p-value
/// via t = r sqrt((n-2)/(1-r^2)) with n-2 degrees of freedom.
fn finish(r: f64, n: usize, method: CorrMethod) -> Result<CorrelationResult> {
    // Within 1e-12 of +-1 counts as perfect; avoids dividing by ~0 in t.
    let r = if 1.0 - r.abs() < 1e-12 { r.signum() } else { r };
    let p_value = if r.abs() == 1.0 {
        0.0
    } else {
        let dof = n - 2;
        let t = r * (dof as f64 / (1.0 - r * r)).sqrt();
        student_t_two_sided_p(t, dof)?
    };
    Ok(CorrelationResult { r, p_value, n, method, significant: p_value < 0.05 })
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<CorrelationResult> {
    check_inputs(x, y)?;
    let r = raw_r(x, y, "input")?;
    finish(r, x.len(), CorrMethod::Pearson)
}

/// Ranks 1..n with tied values sharing the mean of their positions.
pub fn rank_average_ties(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).expect("ranks need comparable values"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) share the mean rank.
        let mean = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = mean;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<CorrelationResult> {
    check_inputs(x, y)?;
    let rx = rank_average_ties(x);
    let ry = rank_average_ties(y);
    let r = raw_r(&rx, &ry, "rank")?;
    finish(r, x.len(), CorrMethod::Spearman)
}

/// Exact two-sided permutation p-value for Spearman, enumerating all n!
/// orderings of the second sequence's ranks. Restricted to n <= 10.
pub fn spearman_exact_p(x: &[f64], y: &[f64]) -> Result<CorrelationResult> {
    check_inputs(x, y)?;
    let n = x.len();
    if n > 10 {
        return Err(Error::Domain(format!(
            "exact permutation p-value is limited to n <= 10, got {n}"
        )));
    }
    let rx = rank_average_ties(x);
    let mut ry = rank_average_ties(y);
    let observed = raw_r(&rx, &ry, "rank")?;

    // rho under permutation: denominators are permutation-invariant, so
    // only the centered cross product changes.
    let mean = (n + 1) as f64 / 2.0;
    let cx: Vec<f64> = rx.iter().map(|v| v - mean).collect();
    let sxx: f64 = cx.iter().map(|v| v * v).sum();
    let syy: f64 = ry.iter().map(|v| (v - mean) * (v - mean)).sum();
    let denom = (sxx * syy).sqrt();
    let rho_of = |perm: &[f64]| -> f64 {
        let sxy: f64 = cx.iter().zip(perm).map(|(a, b)| a * (b - mean)).sum();
        sxy / denom
    };

    // Heap's algorithm over ry in place.
    let threshold = observed.abs() - 1e-12;
    let mut hits = 0u64;
    let mut total = 0u64;
    let mut c = vec![0usize; n];
    let mut count = |perm: &[f64]| {
        total += 1;
        if rho_of(perm).abs() >= threshold {
            hits += 1;
        }
    };
    count(&ry);
    let mut i = 1;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                ry.swap(0, i);
            } else {
                ry.swap(c[i], i);
            }
            count(&ry);
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    let p_value = hits as f64 / total as f64;
    Ok(CorrelationResult {
        r: observed,
        p_value,
        n,
        method: CorrMethod::Spearman,
        significant: p_value < 0.05,
    })
}

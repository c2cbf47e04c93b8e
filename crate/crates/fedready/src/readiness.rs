//! Readiness indices over a federation's embedding geometry: cohesion
//! (mean pairwise cosine), dispersion (centroid spread, negated
//! downstream), density (RBF kernel mass), their weighted combination
//! (CDI), and the label-entropy baseline. All operations are pure and
//! refuse embeddings that are not mutually comparable.

use crate::datasets::{label_histogram, FederationSnapshot, LabelHistogram};
use crate::embedding::TaskEmbedding;
use crate::error::{Error, Result};

/// Weights of the cohesion-dispersion combination.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdiWeights {
    pub beta: f64,
    pub gamma: f64,
}

impl Default for CdiWeights {
    fn default() -> CdiWeights {
        CdiWeights { beta: 1.0, gamma: 1000.0 }
    }
}

impl CdiWeights {
    /// Configuration-boundary check: weights must be positive. The
    /// arithmetic itself accepts any finite weights (a zero beta is a
    /// meaningful reduction), so this is enforced where configs enter.
    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::Domain(format!("cdi beta must be > 0, got {}", self.beta)));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::Domain(format!("cdi gamma must be > 0, got {}", self.gamma)));
        }
        Ok(())
    }
}

/// All readiness indices of one federation snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadinessReport {
    pub cohesion: f64,
    /// Negated dispersion; the form consumed as a readiness index.
    pub neg_dispersion: f64,
    pub density: f64,
    pub cdi: f64,
    pub avg_entropy: f64,
    pub k: usize,
    /// RBF bandwidth actually applied by the density index.
    pub sigma_used: f64,
    pub fingerprint: u64,
}

/// Shared guard: at least `min_k` embeddings, uniform length, uniform
/// fingerprint. Returns the embedding length.
fn check_comparable(embeddings: &[TaskEmbedding], min_k: usize) -> Result<usize> {
    if embeddings.len() < min_k {
        return Err(Error::Domain(format!(
            "need at least {min_k} embeddings, got {}",
            embeddings.len()
        )));
    }
    let first = &embeddings[0];
    for e in &embeddings[1..] {
        if e.values.len() != first.values.len() {
            return Err(Error::Structural(format!(
                "client {} embedding has length {}, client {} has {}",
                first.client_id,
                first.values.len(),
                e.client_id,
                e.values.len()
            )));
        }
        if e.fingerprint != first.fingerprint {
            return Err(Error::Comparability(format!(
                "client {} embedding fingerprint {:016x} does not match client {} fingerprint {:016x}; \
                 embeddings must come from the same frozen probe",
                e.client_id, e.fingerprint, first.client_id, first.fingerprint
            )));
        }
    }
    if first.values.is_empty() {
        return Err(Error::Structural("embeddings have zero length".into()));
    }
    Ok(first.values.len())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Mean cosine similarity over ordered client pairs (i != j).
pub fn cohesion(embeddings: &[TaskEmbedding]) -> Result<f64> {
    check_comparable(embeddings, 2)?;
    let norms: Vec<f64> = embeddings.iter().map(|e| norm(&e.values)).collect();
    for (e, &n) in embeddings.iter().zip(&norms) {
        if n == 0.0 {
            return Err(Error::Domain(format!(
                "client {} has a zero-norm embedding; cosine similarity is undefined",
                e.client_id
            )));
        }
    }
    let k = embeddings.len();
    let mut sum = 0.0;
    for i in 0..k {
        for j in 0..k {
            if i == j {
                continue;
            }
            let c = dot(&embeddings[i].values, &embeddings[j].values) / (norms[i] * norms[j]);
            sum += c.clamp(-1.0, 1.0);
        }
    }
    Ok(sum / (k * (k - 1)) as f64)
}

/// Mean Euclidean distance from the centroid, normalized by the square
/// root of the embedding length. Downstream consumers negate it.
pub fn dispersion(embeddings: &[TaskEmbedding]) -> Result<f64> {
    let d = check_comparable(embeddings, 1)?;
    let k = embeddings.len();
    let mut centroid = vec![0.0; d];
    for e in embeddings {
        for (c, &v) in centroid.iter_mut().zip(&e.values) {
            *c += v;
        }
    }
    for c in &mut centroid {
        *c /= k as f64;
    }
    let mut sum = 0.0;
    for e in embeddings {
        let sq: f64 = e
            .values
            .iter()
            .zip(&centroid)
            .map(|(&v, &c)| (v - c) * (v - c))
            .sum();
        sum += sq.sqrt();
    }
    Ok(sum / k as f64 / (d as f64).sqrt())
}

/// Lower median: for odd counts the middle element, for even counts the
/// lower of the two middle elements.
fn lower_median(sorted: &[f64]) -> f64 {
    sorted[(sorted.len() - 1) / 2]
}

/// Mean RBF kernel value over client pairs, with the bandwidth set to
/// the lower median of the pairwise distances. Returns (density, sigma).
/// Coincident embeddings (sigma = 0) give density 1 by continuity.
pub fn density_detail(embeddings: &[TaskEmbedding]) -> Result<(f64, f64)> {
    check_comparable(embeddings, 2)?;
    let k = embeddings.len();
    let mut dists = Vec::with_capacity(k * (k - 1) / 2);
    for i in 0..k {
        for j in i + 1..k {
            let sq: f64 = embeddings[i]
                .values
                .iter()
                .zip(&embeddings[j].values)
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum();
            dists.push(sq.sqrt());
        }
    }
    let mut sorted = dists.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("distances are finite"));
    let sigma = lower_median(&sorted);
    if sigma == 0.0 {
        return Ok((1.0, 0.0));
    }
    let denom = 2.0 * sigma * sigma;
    let mean = dists.iter().map(|&d| (-(d * d) / denom).exp()).sum::<f64>() / dists.len() as f64;
    Ok((mean, sigma))
}

pub fn density(embeddings: &[TaskEmbedding]) -> Result<f64> {
    density_detail(embeddings).map(|(v, _)| v)
}

/// beta * cohesion - gamma * dispersion.
pub fn cdi(embeddings: &[TaskEmbedding], weights: &CdiWeights) -> Result<f64> {
    if !(weights.beta.is_finite() && weights.gamma.is_finite()) {
        return Err(Error::Domain("cdi weights must be finite".into()));
    }
    let c = cohesion(embeddings)?;
    let d = dispersion(embeddings)?;
    Ok(weights.beta * c - weights.gamma * d)
}

/// Mean Shannon entropy (nats) of the clients' label histograms, each
/// taken over that client's observed classes.
pub fn average_entropy(histograms: &[LabelHistogram]) -> Result<f64> {
    if histograms.is_empty() {
        return Err(Error::Domain("cannot average entropy over zero clients".into()));
    }
    let sum: f64 = histograms.iter().map(|h| h.entropy()).sum();
    Ok(sum / histograms.len() as f64)
}

/// Computes every readiness index of a federation snapshot on identical
/// inputs. `embeddings` must hold one embedding per shard, in shard
/// order.
pub fn build_report(
    federation: &FederationSnapshot,
    embeddings: &[TaskEmbedding],
    weights: &CdiWeights,
) -> Result<ReadinessReport> {
    if embeddings.len() != federation.client_count() {
        return Err(Error::Structural(format!(
            "{} embeddings for {} shards; need exactly one per client",
            embeddings.len(),
            federation.client_count()
        )));
    }
    let cohesion = cohesion(embeddings)?;
    let disp = dispersion(embeddings)?;
    let neg_dispersion = -disp;
    let (density, sigma_used) = density_detail(embeddings)?;
    // Same value the standalone cdi() yields: gamma * (-d) == -(gamma * d).
    let cdi = weights.beta * cohesion + weights.gamma * neg_dispersion;
    let histograms: Vec<LabelHistogram> = federation
        .shards
        .iter()
        .map(|s| label_histogram(s, &federation.pool))
        .collect::<Result<_>>()?;
    let avg_entropy = average_entropy(&histograms)?;
    let report = ReadinessReport {
        cohesion,
        neg_dispersion,
        density,
        cdi,
        avg_entropy,
        k: embeddings.len(),
        sigma_used,
        fingerprint: embeddings[0].fingerprint,
    };
    for (name, v) in [
        ("cohesion", report.cohesion),
        ("neg_dispersion", report.neg_dispersion),
        ("density", report.density),
        ("cdi", report.cdi),
        ("avg_entropy", report.avg_entropy),
    ] {
        if !v.is_finite() {
            return Err(Error::Domain(format!("readiness index {name} is not finite: {v}")));
        }
    }
    Ok(report)
}

/// Aligned human-readable block for the CLI.
pub fn report_text(r: &ReadinessReport) -> String {
    format!(
        "readiness report (K = {k}, probe {fp:016x})\n\
         \x20 cohesion        {coh:>14.8}\n\
         \x20 neg_dispersion  {nd:>14.8}\n\
         \x20 density         {den:>14.8}  (sigma = {sig:.6e})\n\
         \x20 cdi             {cdi:>14.8}\n\
         \x20 avg_entropy     {ent:>14.8}\n",
        k = r.k,
        fp = r.fingerprint,
        coh = r.cohesion,
        nd = r.neg_dispersion,
        den = r.density,
        sig = r.sigma_used,
        cdi = r.cdi,
        ent = r.avg_entropy,
    )
}

//! Datasets and federated partitioning: a synthetic Gaussian-blob
//! generator, an IDX-format loader for real images, and the Dirichlet
//! non-IID splitter that cuts a pool into client shards.

mod blobs;
mod idx;
mod partition;

pub use blobs::{make_blobs, make_blobs_split};
pub use idx::{load_idx, parse_idx_images, parse_idx_labels, IdxImages, IdxLabels};
pub use partition::dirichlet_partition;

use crate::error::{Error, Result};
use crate::numcore::SimplexVector;
use crate::probe::Batch;

/// A normalized image-classification dataset. Images are stored flat in
/// [sample][channel][y][x] order, already standardized per channel and
/// clamped to [-3, 3].
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<f64>,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub channels: usize,
    pub side: usize,
    /// Per-channel mean of the raw data, as used for normalization.
    pub norm_mean: Vec<f64>,
    /// Per-channel std of the raw data, as used for normalization.
    pub norm_std: Vec<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn image_len(&self) -> usize {
        self.channels * self.side * self.side
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let len = self.image_len();
        &self.images[i * len..(i + 1) * len]
    }

    /// Assembles a batch from the given sample indices (copied out).
    pub fn batch_of(&self, indices: &[usize]) -> Batch {
        let len = self.image_len();
        let mut images = Vec::with_capacity(indices.len() * len);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            images.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        Batch { images, labels, channels: self.channels, side: self.side }
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Structural("dataset holds no samples".into()));
        }
        if self.images.len() != self.len() * self.image_len() {
            return Err(Error::Structural(format!(
                "dataset holds {} pixel values, expected {}",
                self.images.len(),
                self.len() * self.image_len()
            )));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.class_count) {
            return Err(Error::Structural(format!(
                "label {bad} out of range for {} classes",
                self.class_count
            )));
        }
        if self.norm_mean.len() != self.channels || self.norm_std.len() != self.channels {
            return Err(Error::Structural(
                "normalization stats do not match channel count".into(),
            ));
        }
        // Standardization contract: near-zero mean, near-unit std, clamped.
        let (mean, std) = channel_stats(&self.images, self.len(), self.channels, self.side);
        for c in 0..self.channels {
            if mean[c].abs() > 0.05 {
                return Err(Error::Structural(format!(
                    "channel {c} mean {:.4} exceeds the ±0.05 normalization contract",
                    mean[c]
                )));
            }
            if (std[c] - 1.0).abs() > 0.1 {
                return Err(Error::Structural(format!(
                    "channel {c} std {:.4} outside the 1±0.1 normalization contract",
                    std[c]
                )));
            }
        }
        if let Some(&v) = self.images.iter().find(|v| !v.is_finite() || v.abs() > 3.0) {
            return Err(Error::Structural(format!(
                "pixel value {v} outside the clamped [-3, 3] range"
            )));
        }
        Ok(())
    }
}

/// Per-channel population mean and std of a flat image block.
pub(crate) fn channel_stats(
    images: &[f64],
    n: usize,
    channels: usize,
    side: usize,
) -> (Vec<f64>, Vec<f64>) {
    let plane = side * side;
    let mut mean = vec![0.0; channels];
    let mut std = vec![0.0; channels];
    let count = (n * plane) as f64;
    for i in 0..n {
        for c in 0..channels {
            let base = (i * channels + c) * plane;
            for &v in &images[base..base + plane] {
                mean[c] += v;
            }
        }
    }
    for m in &mut mean {
        *m /= count;
    }
    for i in 0..n {
        for c in 0..channels {
            let base = (i * channels + c) * plane;
            for &v in &images[base..base + plane] {
                let d = v - mean[c];
                std[c] += d * d;
            }
        }
    }
    for s in &mut std {
        *s = (*s / count).sqrt();
    }
    (mean, std)
}

/// Standardizes images per channel in place and clamps to [-3, 3].
/// Returns the (mean, std) used. Channels with ~zero variance are left
/// centered but unscaled.
pub(crate) fn normalize_per_channel(
    images: &mut [f64],
    n: usize,
    channels: usize,
    side: usize,
) -> (Vec<f64>, Vec<f64>) {
    let (mean, mut std) = channel_stats(images, n, channels, side);
    for s in &mut std {
        if *s < 1e-12 {
            *s = 1.0;
        }
    }
    let plane = side * side;
    for i in 0..n {
        for c in 0..channels {
            let base = (i * channels + c) * plane;
            for v in &mut images[base..base + plane] {
                *v = ((*v - mean[c]) / std[c]).clamp(-3.0, 3.0);
            }
        }
    }
    (mean, std)
}

/// One client's slice of the training pool, stored as sorted indices
/// into the pool (the samples themselves stay in the shared Dataset).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientShard {
    pub client_id: usize,
    pub indices: Vec<usize>,
}

impl ClientShard {
    /// n_c: the client's sample count.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// An immutable federation: the training pool cut into K disjoint
/// shards, plus a centralized held-out test set that is never
/// partitioned.
#[derive(Debug, Clone)]
pub struct FederationSnapshot {
    pub pool: Dataset,
    pub shards: Vec<ClientShard>,
    pub test_set: Dataset,
    pub alpha: f64,
}

impl FederationSnapshot {
    /// K: number of clients.
    pub fn client_count(&self) -> usize {
        self.shards.len()
    }

    /// N: total training samples across shards.
    pub fn total_samples(&self) -> usize {
        self.shards.iter().map(|s| s.len()).sum()
    }

    /// Checks that shards are disjoint and exhaustive over the pool.
    pub fn validate(&self) -> Result<()> {
        self.pool.validate()?;
        self.test_set.validate()?;
        let mut seen = vec![false; self.pool.len()];
        for shard in &self.shards {
            for w in shard.indices.windows(2) {
                if w[0] >= w[1] {
                    return Err(Error::Structural(format!(
                        "client {} indices not strictly ascending",
                        shard.client_id
                    )));
                }
            }
            for &i in &shard.indices {
                if i >= self.pool.len() {
                    return Err(Error::Structural(format!(
                        "client {} references sample {i} beyond pool size {}",
                        shard.client_id,
                        self.pool.len()
                    )));
                }
                if seen[i] {
                    return Err(Error::Structural(format!(
                        "sample {i} assigned to more than one shard"
                    )));
                }
                seen[i] = true;
            }
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(Error::Structural(format!(
                "sample {missing} not assigned to any shard"
            )));
        }
        Ok(())
    }
}

/// Label proportions of one shard over its observed class support.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelHistogram {
    /// Classes with at least one sample, ascending.
    pub class_ids: Vec<usize>,
    /// Proportion per observed class, aligned with `class_ids`.
    pub proportions: SimplexVector,
}

impl LabelHistogram {
    /// Shannon entropy over the observed support, in nats.
    pub fn entropy(&self) -> f64 {
        self.proportions
            .as_slice()
            .iter()
            .map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 })
            .sum()
    }
}

/// Computes the label histogram of a shard over its observed classes.
pub fn label_histogram(shard: &ClientShard, pool: &Dataset) -> Result<LabelHistogram> {
    if shard.is_empty() {
        return Err(Error::Domain(format!(
            "client {} shard is empty; histogram undefined",
            shard.client_id
        )));
    }
    let mut counts = vec![0usize; pool.class_count];
    for &i in &shard.indices {
        if i >= pool.len() {
            return Err(Error::Structural(format!(
                "client {} references sample {i} beyond pool size {}",
                shard.client_id,
                pool.len()
            )));
        }
        counts[pool.labels[i]] += 1;
    }
    let total = shard.len() as f64;
    let mut class_ids = Vec::new();
    let mut proportions = Vec::new();
    for (c, &count) in counts.iter().enumerate() {
        if count > 0 {
            class_ids.push(c);
            proportions.push(count as f64 / total);
        }
    }
    Ok(LabelHistogram {
        class_ids,
        proportions: SimplexVector::new(proportions)?,
    })
}

#[cfg(test)]
pub(crate) fn plain_dataset(labels: Vec<usize>, class_count: usize) -> Dataset {
    // Minimal valid dataset for partition/histogram tests: 1-channel 8x8
    // images whose pixels alternate ±1 so the normalization contract holds.
    let n = labels.len();
    let mut images = vec![0.0; n * 64];
    for (i, v) in images.iter_mut().enumerate() {
        *v = if i % 2 == 0 { 1.0 } else { -1.0 };
    }
    Dataset {
        images,
        labels,
        class_count,
        channels: 1,
        side: 8,
        norm_mean: vec![0.0],
        norm_std: vec![1.0],
    }
}

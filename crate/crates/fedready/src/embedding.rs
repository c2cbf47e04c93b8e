//! Dataset embeddings: freeze a probe extractor, fit a linear head on a
//! client's data, estimate the diagonal Fisher information by Monte
//! Carlo, and average it per conv filter into a fixed-length vector.
//! Embeddings of different clients are comparable only when produced by
//! the same frozen extractor, which is enforced via a fingerprint.

use crate::datasets::{ClientShard, Dataset};
use crate::error::{Error, Result};
use crate::numcore::{stream_id, Rng};
use crate::probe::{
    backward, cross_entropy_loss, fit_linear_head, forward, softmax_rows, ConvLayer,
    FeatureMatrix, ProbeSpec, ProbeState,
};

const SELECT_STREAM: u64 = 0xE4BE_0001;
const HEAD_STREAM: u64 = 0xE4BE_0002;
const FISHER_STREAM: u64 = 0xE4BE_0003;

/// Knobs of the embedding pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedConfig {
    /// Cap on samples used per client.
    pub max_samples: usize,
    pub head_epochs: usize,
    pub head_lr: f64,
    /// Monte-Carlo passes over the selected samples (one label draw per
    /// sample per pass).
    pub fisher_passes: usize,
    /// Leading filters dropped from the embedding.
    pub skip_filters: usize,
    pub seed: u64,
}

impl Default for EmbedConfig {
    fn default() -> EmbedConfig {
        EmbedConfig {
            max_samples: 1000,
            head_epochs: 30,
            head_lr: 0.1,
            fisher_passes: 1,
            skip_filters: 0,
            seed: 0,
        }
    }
}

impl EmbedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_samples == 0 {
            return Err(Error::Domain("embed max_samples must be >= 1".into()));
        }
        if self.fisher_passes == 0 {
            return Err(Error::Domain("embed fisher_passes must be >= 1".into()));
        }
        if self.head_epochs == 0 {
            return Err(Error::Domain("embed head_epochs must be >= 1".into()));
        }
        if !(self.head_lr.is_finite() && self.head_lr > 0.0) {
            return Err(Error::Domain(format!(
                "embed head_lr must be > 0, got {}",
                self.head_lr
            )));
        }
        Ok(())
    }
}

/// Diagonal Fisher estimates for the extractor's conv parameters (head
/// excluded), shaped exactly like the conv layers.
#[derive(Debug, Clone)]
pub struct FisherDiagonal {
    pub conv: Vec<ConvLayer>,
    /// Total Monte-Carlo label draws accumulated.
    pub sample_draws: usize,
}

/// One client's dataset embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskEmbedding {
    pub client_id: usize,
    pub values: Vec<f64>,
    /// Hash of the probe spec plus extractor conv weights; embeddings
    /// are comparable only when fingerprints match.
    pub fingerprint: u64,
    pub skip_filters: usize,
}

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

fn fnv1a(h: &mut u64, bytes: &[u8]) {
    for &b in bytes {
        *h ^= b as u64;
        *h = h.wrapping_mul(FNV_PRIME);
    }
}

/// Hash of the spec and the conv (extractor) weights. The head is
/// deliberately excluded: it is refit per client and does not affect
/// comparability.
pub fn probe_fingerprint(spec: &ProbeSpec, state: &ProbeState) -> u64 {
    let mut h = FNV_OFFSET;
    fnv1a(&mut h, &(spec.input_channels as u64).to_le_bytes());
    fnv1a(&mut h, &(spec.input_side as u64).to_le_bytes());
    fnv1a(&mut h, &(spec.conv_layers.len() as u64).to_le_bytes());
    for l in &spec.conv_layers {
        fnv1a(&mut h, &(l.filters as u64).to_le_bytes());
        fnv1a(&mut h, &(l.kernel as u64).to_le_bytes());
    }
    fnv1a(&mut h, &(spec.head_classes as u64).to_le_bytes());
    for layer in &state.conv {
        for w in &layer.weights {
            fnv1a(&mut h, &w.to_bits().to_le_bytes());
        }
        for b in &layer.bias {
            fnv1a(&mut h, &b.to_bits().to_le_bytes());
        }
    }
    h
}

/// Content hash of one sample (label + pixel bits); used to normalize
/// shard order so embeddings ignore sample ordering.
fn sample_hash(pool: &Dataset, index: usize) -> u64 {
    let mut h = FNV_OFFSET;
    fnv1a(&mut h, &(pool.labels[index] as u64).to_le_bytes());
    for v in pool.image(index) {
        fnv1a(&mut h, &v.to_bits().to_le_bytes());
    }
    h
}

/// Draws a class index from a probability row via inverse CDF.
pub fn sample_class_index(probs: &[f64], rng: &mut Rng) -> usize {
    let u = rng.next_f64();
    let mut cum = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return k;
        }
    }
    probs.len() - 1
}

fn check_shard(shard: &ClientShard, pool: &Dataset) -> Result<()> {
    if shard.is_empty() {
        return Err(Error::Domain(format!(
            "client {} shard is empty; nothing to embed",
            shard.client_id
        )));
    }
    if let Some(&bad) = shard.indices.iter().find(|&&i| i >= pool.len()) {
        return Err(Error::Structural(format!(
            "client {} references sample {bad} beyond pool size {}",
            shard.client_id,
            pool.len()
        )));
    }
    Ok(())
}

/// Selects up to `max_samples` positions within the shard: all of them
/// (in the given order) when the shard is small enough, otherwise a
/// uniform draw without replacement (ascending positions).
fn select_positions(shard_len: usize, max_samples: usize, rng: &mut Rng) -> Vec<usize> {
    rng.index_sample(shard_len, max_samples)
}

/// Cache features: forwards up to `max_samples` shard samples through
/// the frozen extractor and returns one feature row per selected sample.
pub fn extract_features(
    spec: &ProbeSpec,
    extractor: &ProbeState,
    pool: &Dataset,
    shard: &ClientShard,
    max_samples: usize,
    rng: &mut Rng,
) -> Result<FeatureMatrix> {
    check_shard(shard, pool)?;
    if max_samples == 0 {
        return Err(Error::Domain("max_samples must be >= 1".into()));
    }
    let positions = select_positions(shard.len(), max_samples, rng);
    let indices: Vec<usize> = positions.iter().map(|&p| shard.indices[p]).collect();
    features_of(spec, extractor, pool, &indices)
}

/// Forward a list of pool indices in bounded chunks, collecting features.
fn features_of(
    spec: &ProbeSpec,
    extractor: &ProbeState,
    pool: &Dataset,
    indices: &[usize],
) -> Result<FeatureMatrix> {
    const CHUNK: usize = 64;
    let cols = spec.feature_len();
    let mut data = Vec::with_capacity(indices.len() * cols);
    for chunk in indices.chunks(CHUNK) {
        let batch = pool.batch_of(chunk);
        let (_, cache) = forward(spec, extractor, &batch)?;
        data.extend_from_slice(&cache.features.data);
    }
    Ok(FeatureMatrix { data, rows: indices.len(), cols })
}

/// Monte-Carlo diagonal Fisher over the extractor's conv parameters.
/// Per selected sample and pass: forward, draw a label from the model's
/// own softmax, backprop the cross-entropy at that label, accumulate
/// squared gradients. Requires a fitted head.
pub fn fisher_diagonal_mc(
    spec: &ProbeSpec,
    probe: &ProbeState,
    pool: &Dataset,
    shard: &ClientShard,
    config: &EmbedConfig,
    rng: &mut Rng,
) -> Result<FisherDiagonal> {
    config.validate()?;
    check_shard(shard, pool)?;
    let positions = select_positions(shard.len(), config.max_samples, rng);
    let indices: Vec<usize> = positions.iter().map(|&p| shard.indices[p]).collect();
    fisher_over_indices(spec, probe, pool, &indices, config.fisher_passes, rng)
}

fn fisher_over_indices(
    spec: &ProbeSpec,
    probe: &ProbeState,
    pool: &Dataset,
    indices: &[usize],
    passes: usize,
    rng: &mut Rng,
) -> Result<FisherDiagonal> {
    if !probe.head_fitted {
        return Err(Error::State(
            "fisher estimation requires a fitted head (fit_linear_head first)".into(),
        ));
    }
    let mut acc: Vec<ConvLayer> = probe
        .conv
        .iter()
        .map(|l| ConvLayer {
            weights: vec![0.0; l.weights.len()],
            bias: vec![0.0; l.bias.len()],
        })
        .collect();
    let mut draws = 0usize;
    for _ in 0..passes {
        for &i in indices {
            let batch = pool.batch_of(&[i]);
            let (logits, cache) = forward(spec, probe, &batch)?;
            let probs = softmax_rows(&logits);
            let sampled = sample_class_index(&probs, rng);
            // Batch size 1: dlogits = softmax - onehot(sampled), exactly.
            let (_, dlogits) = cross_entropy_loss(&logits, &[sampled])?;
            let grad = backward(spec, probe, &cache, &dlogits)?;
            for (a, g) in acc.iter_mut().zip(&grad.conv) {
                for (s, &v) in a.weights.iter_mut().zip(&g.weights) {
                    *s += v * v;
                }
                for (s, &v) in a.bias.iter_mut().zip(&g.bias) {
                    *s += v * v;
                }
            }
            draws += 1;
        }
    }
    let inv = 1.0 / draws as f64;
    for layer in &mut acc {
        for v in &mut layer.weights {
            *v *= inv;
        }
        for v in &mut layer.bias {
            *v *= inv;
        }
    }
    Ok(FisherDiagonal { conv: acc, sample_draws: draws })
}

/// Averages the Fisher diagonal over each filter's weights and bias,
/// in layer-then-filter order, dropping the first `skip_filters` values.
pub fn aggregate_per_filter(
    fisher: &FisherDiagonal,
    spec: &ProbeSpec,
    skip_filters: usize,
) -> Result<Vec<f64>> {
    let m = spec.total_filters();
    if skip_filters >= m {
        return Err(Error::Domain(format!(
            "skip_filters {skip_filters} must be below the filter count {m}"
        )));
    }
    if fisher.conv.len() != spec.conv_layers.len() {
        return Err(Error::Structural(format!(
            "fisher has {} layers, spec has {}",
            fisher.conv.len(),
            spec.conv_layers.len()
        )));
    }
    let mut per_filter = Vec::with_capacity(m);
    let mut channels = spec.input_channels;
    for (layer, ls) in fisher.conv.iter().zip(&spec.conv_layers) {
        let per = channels * ls.kernel * ls.kernel;
        if layer.weights.len() != ls.filters * per || layer.bias.len() != ls.filters {
            return Err(Error::Structural(
                "fisher layer shape does not match probe spec".into(),
            ));
        }
        for f in 0..ls.filters {
            let w = &layer.weights[f * per..(f + 1) * per];
            let sum: f64 = w.iter().sum::<f64>() + layer.bias[f];
            per_filter.push(sum / (per + 1) as f64);
        }
        channels = ls.filters;
    }
    Ok(per_filter[skip_filters..].to_vec())
}

/// The full embedding pipeline for one client: normalize sample order,
/// select samples, cache features, fit the head, estimate the Fisher
/// diagonal, aggregate per filter.
pub fn task2vec_embed(
    spec: &ProbeSpec,
    extractor: &ProbeState,
    pool: &Dataset,
    shard: &ClientShard,
    config: &EmbedConfig,
) -> Result<TaskEmbedding> {
    config.validate()?;
    check_shard(shard, pool)?;

    // Canonical sample order: sort by content hash so the embedding is a
    // function of the shard's contents, not its ordering.
    let mut canonical: Vec<usize> = shard.indices.clone();
    canonical.sort_by_key(|&i| (sample_hash(pool, i), pool.labels[i]));

    let mut select_rng = Rng::new(config.seed, stream_id(&[SELECT_STREAM]));
    let positions = select_positions(canonical.len(), config.max_samples, &mut select_rng);
    let indices: Vec<usize> = positions.iter().map(|&p| canonical[p]).collect();
    let labels: Vec<usize> = indices.iter().map(|&i| pool.labels[i]).collect();

    let features = features_of(spec, extractor, pool, &indices)?;
    let mut head_rng = Rng::new(config.seed, stream_id(&[HEAD_STREAM]));
    let head = fit_linear_head(
        &features,
        &labels,
        spec.head_classes,
        config.head_epochs,
        config.head_lr,
        &mut head_rng,
    )?;

    let mut fitted = extractor.clone();
    fitted.head = head;
    fitted.head_fitted = true;

    let mut fisher_rng = Rng::new(config.seed, stream_id(&[FISHER_STREAM]));
    let fisher = fisher_over_indices(spec, &fitted, pool, &indices, config.fisher_passes, &mut fisher_rng)?;
    let values = aggregate_per_filter(&fisher, spec, config.skip_filters)?;

    Ok(TaskEmbedding {
        client_id: shard.client_id,
        values,
        fingerprint: probe_fingerprint(spec, extractor),
        skip_filters: config.skip_filters,
    })
}

/// CSV export: one row per client, `client_id` then the values.
pub fn embeddings_to_csv(embeddings: &[TaskEmbedding]) -> String {
    let width = embeddings.first().map_or(0, |e| e.values.len());
    let mut out = String::from("client_id");
    for i in 0..width {
        out.push_str(&format!(",v{i}"));
    }
    out.push('\n');
    for e in embeddings {
        out.push_str(&e.client_id.to_string());
        for v in &e.values {
            out.push_str(&format!(",{v:.16e}"));
        }
        out.push('\n');
    }
    out
}

/// Flat binary record: header of little-endian u32 values (client_id,
/// skip_filters, value count), the fingerprint as little-endian u64,
/// then the values as little-endian f64.
pub fn embedding_to_bytes(e: &TaskEmbedding) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + 8 * e.values.len());
    out.extend_from_slice(&(e.client_id as u32).to_le_bytes());
    out.extend_from_slice(&(e.skip_filters as u32).to_le_bytes());
    out.extend_from_slice(&(e.values.len() as u32).to_le_bytes());
    out.extend_from_slice(&e.fingerprint.to_le_bytes());
    for v in &e.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn embedding_from_bytes(bytes: &[u8]) -> Result<TaskEmbedding> {
    if bytes.len() < 20 {
        return Err(Error::Format {
            offset: bytes.len(),
            message: "embedding record shorter than its 20-byte header".into(),
        });
    }
    let client_id = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let skip_filters = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let fingerprint = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let want = 20 + 8 * count;
    if bytes.len() != want {
        return Err(Error::Format {
            offset: bytes.len().min(want),
            message: format!(
                "embedding record with {count} values must be {want} bytes, got {}",
                bytes.len()
            ),
        });
    }
    let values = bytes[20..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(TaskEmbedding { client_id, values, fingerprint, skip_filters })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::make_blobs;
    use crate::probe::init_probe;

    fn small_setup(seed: u64) -> (ProbeSpec, ProbeState, Dataset) {
        let pool = make_blobs(3, 2, 8, 30, 0.8, seed).unwrap();
        let spec = ProbeSpec::desk_default(2, 8, 3);
        let extractor = init_probe(&spec, &mut Rng::new(seed, 1)).unwrap();
        (spec, extractor, pool)
    }

    fn shard_of(indices: Vec<usize>, client_id: usize) -> ClientShard {
        ClientShard { client_id, indices }
    }

    #[test]
    fn extract_features_small_shard_keeps_order() {
        let (spec, extractor, pool) = small_setup(1);
        let shard = shard_of(vec![5, 9, 2], 0);
        let mut rng = Rng::new(0, 0);
        let f = extract_features(&spec, &extractor, &pool, &shard, 100, &mut rng).unwrap();
        assert_eq!(f.rows, 3);
        // Same rows as forwarding the samples individually, in order.
        for (row, &idx) in [5usize, 9, 2].iter().enumerate() {
            let single = features_of(&spec, &extractor, &pool, &[idx]).unwrap();
            assert_eq!(f.row(row), single.row(0));
        }
    }

    #[test]
    fn extract_features_subsamples_deterministically() {
        let (spec, extractor, pool) = small_setup(2);
        let shard = shard_of((0..40).collect(), 0);
        let a = extract_features(&spec, &extractor, &pool, &shard, 10, &mut Rng::new(7, 7)).unwrap();
        let b = extract_features(&spec, &extractor, &pool, &shard, 10, &mut Rng::new(7, 7)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows, 10);
        let c = extract_features(&spec, &extractor, &pool, &shard, 10, &mut Rng::new(8, 7)).unwrap();
        assert_ne!(a, c, "different selection seed should pick different samples");
    }

    #[test]
    fn zero_weight_extractor_gives_zero_features() {
        let (spec, _, pool) = small_setup(3);
        let zero = ProbeState::zeros(&spec);
        let shard = shard_of(vec![0, 1, 2], 0);
        let f = extract_features(&spec, &zero, &pool, &shard, 10, &mut Rng::new(0, 0)).unwrap();
        assert!(f.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_shard_is_a_domain_error() {
        let (spec, extractor, pool) = small_setup(4);
        let shard = shard_of(vec![], 3);
        let err = extract_features(&spec, &extractor, &pool, &shard, 10, &mut Rng::new(0, 0))
            .unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn fisher_requires_fitted_head() {
        let (spec, extractor, pool) = small_setup(5);
        let shard = shard_of(vec![0, 1], 0);
        let err = fisher_diagonal_mc(
            &spec,
            &extractor,
            &pool,
            &shard,
            &EmbedConfig::default(),
            &mut Rng::new(0, 0),
        )
        .unwrap_err();
        assert!(matches!(err, Error::State(_)), "got {err}");
    }

    #[test]
    fn fisher_nonnegative_and_deterministic() {
        let (spec, mut extractor, pool) = small_setup(6);
        extractor.head_fitted = true; // random head is fine for this check
        let shard = shard_of((0..12).collect(), 0);
        let cfg = EmbedConfig { max_samples: 12, fisher_passes: 2, ..EmbedConfig::default() };
        let a = fisher_diagonal_mc(&spec, &extractor, &pool, &shard, &cfg, &mut Rng::new(3, 3)).unwrap();
        assert_eq!(a.sample_draws, 24);
        for layer in &a.conv {
            assert!(layer.weights.iter().all(|&v| v >= 0.0));
            assert!(layer.bias.iter().all(|&v| v >= 0.0));
        }
        let b = fisher_diagonal_mc(&spec, &extractor, &pool, &shard, &cfg, &mut Rng::new(3, 3)).unwrap();
        for (x, y) in a.conv.iter().zip(&b.conv) {
            assert_eq!(x.weights, y.weights);
            assert_eq!(x.bias, y.bias);
        }
    }

    #[test]
    fn fisher_mc_matches_analytic_softmax_family() {
        // Bare categorical-softmax model: logits are the parameters, so
        // the per-coordinate diagonal Fisher is p_k(1 - p_k). The MC
        // estimator (sample label from softmax, square the gradient)
        // must match within 5% relative at 5e4 draws.
        let probs = [0.2, 0.3, 0.5];
        let logits = crate::probe::Logits {
            data: probs.iter().map(|p: &f64| p.ln()).collect(),
            classes: 3,
        };
        let mut rng = Rng::new(424242, 0);
        let draws = 50_000;
        let mut acc = [0.0f64; 3];
        for _ in 0..draws {
            let p = softmax_rows(&logits);
            let y = sample_class_index(&p, &mut rng);
            let (_, dl) = cross_entropy_loss(&logits, &[y]).unwrap();
            for k in 0..3 {
                acc[k] += dl.data[k] * dl.data[k];
            }
        }
        for k in 0..3 {
            let mc = acc[k] / draws as f64;
            let analytic = probs[k] * (1.0 - probs[k]);
            let rel = (mc - analytic).abs() / analytic;
            assert!(rel < 0.05, "coordinate {k}: MC {mc}, analytic {analytic}, rel {rel:.4}");
        }
    }

    #[test]
    fn deterministic_softmax_gives_exactly_zero_fisher() {
        // Zero conv weights and a huge head bias gap: softmax is exactly
        // (1, 0, 0) in f64, the sampled label is constant, the score is
        // the zero vector, so every Fisher entry is exactly 0.
        let (spec, _, pool) = small_setup(7);
        let mut state = ProbeState::zeros(&spec);
        state.head.bias[0] = 800.0;
        state.head_fitted = true;
        let shard = shard_of((0..10).collect(), 0);
        let cfg = EmbedConfig { max_samples: 10, ..EmbedConfig::default() };
        let fisher =
            fisher_diagonal_mc(&spec, &state, &pool, &shard, &cfg, &mut Rng::new(1, 1)).unwrap();
        for layer in &fisher.conv {
            assert!(layer.weights.iter().all(|&v| v == 0.0));
            assert!(layer.bias.iter().all(|&v| v == 0.0));
        }
    }

    fn constant_fisher(spec: &ProbeSpec, v: f64) -> FisherDiagonal {
        let mut channels = spec.input_channels;
        let conv = spec
            .conv_layers
            .iter()
            .map(|l| {
                let layer = ConvLayer {
                    weights: vec![v; l.filters * channels * l.kernel * l.kernel],
                    bias: vec![v; l.filters],
                };
                channels = l.filters;
                layer
            })
            .collect();
        FisherDiagonal { conv, sample_draws: 1 }
    }

    #[test]
    fn aggregate_constant_fisher_is_constant_embedding() {
        let spec = ProbeSpec::desk_default(3, 16, 4);
        let fisher = constant_fisher(&spec, 2.0);
        let values = aggregate_per_filter(&fisher, &spec, 0).unwrap();
        assert_eq!(values.len(), 24);
        assert!(values.iter().all(|&v| v == 2.0));
    }

    #[test]
    fn aggregate_hand_built_mean() {
        // One layer, one filter, kernel 1, two input channels: entries
        // {1, 2} plus bias 3 average to 2.0.
        let spec = ProbeSpec {
            input_channels: 2,
            input_side: 8,
            conv_layers: vec![crate::probe::ConvLayerSpec { filters: 1, kernel: 1 }],
            head_classes: 2,
        };
        let fisher = FisherDiagonal {
            conv: vec![ConvLayer { weights: vec![1.0, 2.0], bias: vec![3.0] }],
            sample_draws: 1,
        };
        let values = aggregate_per_filter(&fisher, &spec, 0).unwrap();
        assert_eq!(values, vec![2.0]);
    }

    #[test]
    fn aggregate_skip_boundary() {
        let spec = ProbeSpec::desk_default(3, 16, 4);
        let m = spec.total_filters();
        let fisher = constant_fisher(&spec, 1.5);
        let values = aggregate_per_filter(&fisher, &spec, m - 1).unwrap();
        assert_eq!(values.len(), 1);
        assert!(aggregate_per_filter(&fisher, &spec, m).is_err());
    }

    #[test]
    fn embedding_length_is_filters_minus_skip() {
        let (spec, extractor, pool) = small_setup(8);
        let shard = shard_of((0..20).collect(), 0);
        let cfg = EmbedConfig { max_samples: 20, head_epochs: 5, ..EmbedConfig::default() };
        let e = task2vec_embed(&spec, &extractor, &pool, &shard, &cfg).unwrap();
        assert_eq!(e.values.len(), spec.total_filters());
        assert!(e.values.iter().all(|&v| v >= 0.0 && v.is_finite()));

        let cfg = EmbedConfig { skip_filters: 5, ..cfg };
        let e = task2vec_embed(&spec, &extractor, &pool, &shard, &cfg).unwrap();
        assert_eq!(e.values.len(), spec.total_filters() - 5);
    }

    #[test]
    fn byte_identical_shards_embed_identically() {
        // Duplicate the pool images so clients 0 and 1 hold byte-equal
        // samples at different pool indices.
        let (spec, extractor, base) = small_setup(9);
        let n = base.len();
        let mut pool = base.clone();
        pool.images.extend_from_slice(&base.images);
        pool.labels.extend_from_slice(&base.labels);
        let a = shard_of((0..n).collect(), 0);
        let b = shard_of((n..2 * n).collect(), 1);
        let cfg = EmbedConfig { max_samples: 25, head_epochs: 8, ..EmbedConfig::default() };
        let ea = task2vec_embed(&spec, &extractor, &pool, &a, &cfg).unwrap();
        let eb = task2vec_embed(&spec, &extractor, &pool, &b, &cfg).unwrap();
        assert_eq!(ea.values, eb.values);
        assert_eq!(ea.fingerprint, eb.fingerprint);
    }

    #[test]
    fn embedding_invariant_under_shard_order() {
        let (spec, extractor, pool) = small_setup(10);
        let forward_order = shard_of((0..30).collect(), 0);
        let mut reversed: Vec<usize> = (0..30).collect();
        reversed.reverse();
        let backward_order = shard_of(reversed, 0);
        let cfg = EmbedConfig { max_samples: 12, head_epochs: 8, ..EmbedConfig::default() };
        let ea = task2vec_embed(&spec, &extractor, &pool, &forward_order, &cfg).unwrap();
        let eb = task2vec_embed(&spec, &extractor, &pool, &backward_order, &cfg).unwrap();
        assert_eq!(ea.values, eb.values);
    }

    #[test]
    fn embedding_deterministic_and_fingerprinted() {
        let (spec, extractor, pool) = small_setup(11);
        let shard = shard_of((0..15).collect(), 2);
        let cfg = EmbedConfig { max_samples: 15, head_epochs: 6, ..EmbedConfig::default() };
        let a = task2vec_embed(&spec, &extractor, &pool, &shard, &cfg).unwrap();
        let b = task2vec_embed(&spec, &extractor, &pool, &shard, &cfg).unwrap();
        assert_eq!(a, b);

        // A different extractor changes the fingerprint.
        let other = init_probe(&spec, &mut Rng::new(999, 1)).unwrap();
        let c = task2vec_embed(&spec, &other, &pool, &shard, &cfg).unwrap();
        assert_ne!(a.fingerprint, c.fingerprint);
    }

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    #[test]
    fn similar_label_distributions_are_closer_in_majority_of_seeds() {
        // Two clients sharing a label distribution should look more alike
        // than two clients with disjoint label supports, in a majority of
        // seeds.
        let mut wins = 0;
        let seeds = 11u64;
        for seed in 0..seeds {
            let pool = make_blobs(4, 2, 8, 40, 0.8, seed).unwrap();
            let spec = ProbeSpec::desk_default(2, 8, 4);
            let extractor = init_probe(&spec, &mut Rng::new(seed, 77)).unwrap();
            let by_class: Vec<Vec<usize>> = (0..4)
                .map(|c| (0..pool.len()).filter(|&i| pool.labels[i] == c).collect())
                .collect();

            // Disjoint supports: {0,1} vs {2,3}.
            let disjoint_a = shard_of([by_class[0].clone(), by_class[1].clone()].concat(), 0);
            let disjoint_b = shard_of([by_class[2].clone(), by_class[3].clone()].concat(), 1);
            // Identical distributions: even/odd halves of every class.
            let mut same_a = Vec::new();
            let mut same_b = Vec::new();
            for c in &by_class {
                for (j, &i) in c.iter().enumerate() {
                    if j % 2 == 0 {
                        same_a.push(i);
                    } else {
                        same_b.push(i);
                    }
                }
            }
            let same_a = shard_of(same_a, 2);
            let same_b = shard_of(same_b, 3);

            let cfg = EmbedConfig {
                max_samples: 80,
                head_epochs: 10,
                seed,
                ..EmbedConfig::default()
            };
            let e = |s: &ClientShard| task2vec_embed(&spec, &extractor, &pool, s, &cfg).unwrap();
            let sim_same = cosine(&e(&same_a).values, &e(&same_b).values);
            let sim_disjoint = cosine(&e(&disjoint_a).values, &e(&disjoint_b).values);
            if sim_same > sim_disjoint {
                wins += 1;
            }
        }
        assert!(wins * 2 > seeds, "similar-pair closer in only {wins}/{seeds} seeds");
    }

    #[test]
    fn csv_and_binary_round_trip() {
        let e = TaskEmbedding {
            client_id: 3,
            values: vec![0.5, 1.25, 0.0625],
            fingerprint: 0xdeadbeefcafe1234,
            skip_filters: 1,
        };
        let bytes = embedding_to_bytes(&e);
        let back = embedding_from_bytes(&bytes).unwrap();
        assert_eq!(e, back);

        assert!(embedding_from_bytes(&bytes[..10]).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(embedding_from_bytes(&long).is_err());

        let csv = embeddings_to_csv(&[e]);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "client_id,v0,v1,v2");
        let row = lines.next().unwrap();
        assert!(row.starts_with("3,"));
        let cells: Vec<&str> = row.split(',').collect();
        assert_eq!(cells[1].parse::<f64>().unwrap(), 0.5);
    }
}

//! Federated averaging: per-round local SGD on each selected client,
//! sample-count-weighted aggregation of the resulting weights, sampled
//! in-training evaluation, and a final centralized metric. The whole
//! protocol is a pure function of (federation, probe spec, config seed)
//! and yields bitwise-identical results at any parallelism degree.

use std::time::Instant;

use rayon::prelude::*;

use crate::datasets::{ClientShard, Dataset, FederationSnapshot};
use crate::error::{Error, Result};
use crate::numcore::{stream_id, KahanSum, Rng};
use crate::probe::{
    backward, cross_entropy_loss, forward, init_probe, sgd_momentum_step, softmax_rows, Logits,
    ProbeSpec, ProbeState,
};
use crate::stats::rank_average_ties;

const INIT_STREAM: u64 = 0xFED0_0001;
const FIT_STREAM: u64 = 0xFED0_0002;
const EVAL_STREAM: u64 = 0xFED0_0003;
const LOCAL_STREAM: u64 = 0xFED0_0004;

/// Metric evaluated on the centralized test set after the last round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FinalMetric {
    Top1,
    MacroAuc,
}

impl std::fmt::Display for FinalMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FinalMetric::Top1 => write!(f, "top1"),
            FinalMetric::MacroAuc => write!(f, "macro_auc"),
        }
    }
}

impl std::str::FromStr for FinalMetric {
    type Err = Error;
    fn from_str(s: &str) -> Result<FinalMetric> {
        match s {
            "top1" => Ok(FinalMetric::Top1),
            "macro_auc" => Ok(FinalMetric::MacroAuc),
            other => Err(Error::Domain(format!(
                "unknown metric {other:?}; expected top1 or macro_auc"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FedAvgConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub fraction_fit: f64,
    pub fraction_evaluate: f64,
    pub final_metric: FinalMetric,
    pub seed: u64,
}

impl Default for FedAvgConfig {
    fn default() -> FedAvgConfig {
        FedAvgConfig {
            rounds: 20,
            local_epochs: 1,
            batch_size: 32,
            lr: 0.01,
            momentum: 0.9,
            fraction_fit: 1.0,
            fraction_evaluate: 0.5,
            final_metric: FinalMetric::Top1,
            seed: 0,
        }
    }
}

impl FedAvgConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 || self.local_epochs == 0 || self.batch_size == 0 {
            return Err(Error::Domain(
                "rounds, local_epochs and batch_size must all be >= 1".into(),
            ));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Domain(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Domain(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        for (name, v) in [
            ("fraction_fit", self.fraction_fit),
            ("fraction_evaluate", self.fraction_evaluate),
        ] {
            if !(v.is_finite() && v > 0.0 && v <= 1.0) {
                return Err(Error::Domain(format!("{name} must be in (0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

/// One client's locally trained weights plus its sample count, the
/// aggregation weight numerator.
#[derive(Debug, Clone)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub weights: ProbeState,
    pub n_c: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundLog {
    /// 1-based round number.
    pub round: usize,
    /// Mean local top-1 accuracy over the sampled evaluation clients.
    pub eval_metric: f64,
    pub fit_clients: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct TrainingResult {
    pub round_logs: Vec<RoundLog>,
    pub final_metric_value: f64,
    pub config: FedAvgConfig,
    pub wall_time_s: f64,
    pub final_state: ProbeState,
}

/// All trainable parameter vectors of a state, in a fixed order.
fn param_slices(state: &ProbeState) -> Vec<&[f64]> {
    let mut v: Vec<&[f64]> = Vec::with_capacity(2 * state.conv.len() + 2);
    for l in &state.conv {
        v.push(&l.weights);
        v.push(&l.bias);
    }
    v.push(&state.head.weights);
    v.push(&state.head.bias);
    v
}

fn param_vecs_mut(state: &mut ProbeState) -> Vec<&mut Vec<f64>> {
    let mut v: Vec<&mut Vec<f64>> = Vec::with_capacity(2 * state.conv.len() + 2);
    for l in &mut state.conv {
        v.push(&mut l.weights);
        v.push(&mut l.bias);
    }
    v.push(&mut state.head.weights);
    v.push(&mut state.head.bias);
    v
}

/// Local SGD on one client: copy the global weights, zero the momentum
/// buffers, run `local_epochs` shuffled passes in mini-batches of
/// `batch_size` (final partial batch kept).
pub fn local_train(
    global: &ProbeState,
    spec: &ProbeSpec,
    pool: &Dataset,
    shard: &ClientShard,
    config: &FedAvgConfig,
    rng: &mut Rng,
) -> Result<ClientUpdate> {
    config.validate()?;
    if shard.is_empty() {
        return Err(Error::Domain(format!(
            "client {} has no samples to train on",
            shard.client_id
        )));
    }
    let mut state = global.clone();
    state.reset_momentum(spec);
    let mut order = shard.indices.clone();
    for _ in 0..config.local_epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(config.batch_size) {
            let batch = pool.batch_of(chunk);
            let (logits, cache) = forward(spec, &state, &batch)?;
            let (_, dlogits) = cross_entropy_loss(&logits, &batch.labels)?;
            let grad = backward(spec, &state, &cache, &dlogits)?;
            sgd_momentum_step(&mut state, &grad, config.lr, config.momentum)?;
        }
    }
    Ok(ClientUpdate { client_id: shard.client_id, weights: state, n_c: shard.len() })
}

/// Sample-count-weighted average of client weights: accumulates
/// sum_c n_c * w_c per coordinate with compensated summation in client-id
/// order, then divides by N once. Momentum buffers are zeroed, not
/// averaged.
pub fn fedavg_aggregate(updates: &[ClientUpdate]) -> Result<ProbeState> {
    if updates.is_empty() {
        return Err(Error::Domain("cannot aggregate zero client updates".into()));
    }
    let mut order: Vec<&ClientUpdate> = updates.iter().collect();
    order.sort_by_key(|u| u.client_id);
    for w in order.windows(2) {
        if w[0].client_id == w[1].client_id {
            return Err(Error::Structural(format!(
                "duplicate update for client {}",
                w[0].client_id
            )));
        }
    }
    let shapes: Vec<usize> = param_slices(&order[0].weights).iter().map(|s| s.len()).collect();
    for u in &order[1..] {
        let got: Vec<usize> = param_slices(&u.weights).iter().map(|s| s.len()).collect();
        if got != shapes {
            return Err(Error::Structural(format!(
                "client {} update has mismatched weight shapes",
                u.client_id
            )));
        }
    }
    for u in &order {
        if param_slices(&u.weights).iter().any(|s| s.iter().any(|v| !v.is_finite())) {
            return Err(Error::Domain(format!(
                "client {} update contains non-finite weights",
                u.client_id
            )));
        }
    }
    let n_total: usize = order.iter().map(|u| u.n_c).sum();
    if n_total == 0 {
        return Err(Error::Domain("aggregation weights sum to zero samples".into()));
    }

    // A lone client has weight n/N = 1 exactly: return verbatim rather
    // than routing through (n*w)/n, which can move the last bit.
    if order.len() == 1 {
        let mut out = order[0].weights.clone();
        zero_momentum(&mut out);
        return Ok(out);
    }

    let mut acc: Vec<Vec<KahanSum>> = shapes.iter().map(|&l| vec![KahanSum::new(); l]).collect();
    for u in &order {
        let w = u.n_c as f64;
        for (sums, slice) in acc.iter_mut().zip(param_slices(&u.weights)) {
            for (s, &v) in sums.iter_mut().zip(slice) {
                s.add(w * v);
            }
        }
    }

    let mut out = order[0].weights.clone();
    let inv_n = n_total as f64;
    for (vec, sums) in param_vecs_mut(&mut out).into_iter().zip(&acc) {
        for (v, s) in vec.iter_mut().zip(sums) {
            *v = s.value() / inv_n;
        }
    }
    zero_momentum(&mut out);
    Ok(out)
}

fn zero_momentum(state: &mut ProbeState) {
    for l in &mut state.momentum.conv {
        l.weights.iter_mut().for_each(|v| *v = 0.0);
        l.bias.iter_mut().for_each(|v| *v = 0.0);
    }
    state.momentum.head.weights.iter_mut().for_each(|v| *v = 0.0);
    state.momentum.head.bias.iter_mut().for_each(|v| *v = 0.0);
}

/// Correct predictions in one logit block; argmax ties go to the lowest
/// class index.
fn count_top1(logits: &Logits, labels: &[usize]) -> usize {
    let mut correct = 0;
    for (row, &label) in labels.iter().enumerate() {
        let r = logits.row(row);
        let mut best = 0;
        for (k, &v) in r.iter().enumerate().skip(1) {
            if v > r[best] {
                best = k;
            }
        }
        if best == label {
            correct += 1;
        }
    }
    correct
}

const EVAL_CHUNK: usize = 64;

fn top1_on_indices(
    state: &ProbeState,
    spec: &ProbeSpec,
    data: &Dataset,
    indices: &[usize],
) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::Domain("cannot evaluate top-1 accuracy on zero samples".into()));
    }
    let mut correct = 0;
    for chunk in indices.chunks(EVAL_CHUNK) {
        let batch = data.batch_of(chunk);
        let (logits, _) = forward(spec, state, &batch)?;
        correct += count_top1(&logits, &batch.labels);
    }
    Ok(correct as f64 / indices.len() as f64)
}

/// Fraction of test samples whose highest logit matches the label.
pub fn top1_accuracy(state: &ProbeState, spec: &ProbeSpec, test: &Dataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Domain("test set is empty".into()));
    }
    let all: Vec<usize> = (0..test.len()).collect();
    top1_on_indices(state, spec, test, &all)
}

/// One-vs-rest AUC from raw scores via the Mann-Whitney rank statistic
/// with average ranks for ties.
pub fn auc_from_scores(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::Structural(format!(
            "{} scores for {} labels",
            scores.len(),
            positive.len()
        )));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Domain(
            "AUC needs at least one positive and one negative sample".into(),
        ));
    }
    let ranks = rank_average_ties(scores);
    let rank_sum: f64 = ranks
        .iter()
        .zip(positive)
        .filter(|(_, &p)| p)
        .map(|(&r, _)| r)
        .sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

fn macro_auc_from_probs(probs: &[f64], labels: &[usize], classes: usize) -> Result<f64> {
    let n = labels.len();
    let mut counts = vec![0usize; classes];
    for &l in labels {
        counts[l] += 1;
    }
    let present: Vec<usize> = (0..classes).filter(|&c| counts[c] > 0).collect();
    if present.len() < 2 {
        return Err(Error::Domain(
            "macro AUC needs a test set with at least 2 distinct labels".into(),
        ));
    }
    let mut sum = 0.0;
    for &c in &present {
        let scores: Vec<f64> = (0..n).map(|i| probs[i * classes + c]).collect();
        let positive: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        sum += auc_from_scores(&scores, &positive)?;
    }
    Ok(sum / present.len() as f64)
}

/// Macro-averaged one-vs-rest AUC on softmax probabilities, unweighted
/// over the classes present in the test set.
pub fn macro_auc(state: &ProbeState, spec: &ProbeSpec, test: &Dataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Domain("test set is empty".into()));
    }
    let classes = spec.head_classes;
    let mut probs = Vec::with_capacity(test.len() * classes);
    let all: Vec<usize> = (0..test.len()).collect();
    for chunk in all.chunks(EVAL_CHUNK) {
        let batch = test.batch_of(chunk);
        let (logits, _) = forward(spec, state, &batch)?;
        probs.extend_from_slice(&softmax_rows(&logits));
    }
    macro_auc_from_probs(&probs, &test.labels, classes)
}

fn sample_count(fraction: f64, k: usize) -> usize {
    ((fraction * k as f64).ceil() as usize).clamp(1, k)
}

/// The federated averaging protocol. Per round: select the fit subset
/// (every client when fraction_fit is 1), train each selected client
/// from the current global weights in parallel, aggregate, then log the
/// mean local top-1 of an independently sampled evaluation subset.
/// After the last round the configured final metric is computed on the
/// centralized test set, which no client ever trains on.
pub fn run_federation(
    federation: &FederationSnapshot,
    spec: &ProbeSpec,
    config: &FedAvgConfig,
) -> Result<TrainingResult> {
    config.validate()?;
    federation.validate()?;
    let start = Instant::now();
    let k = federation.client_count();
    if k == 0 {
        return Err(Error::Domain("federation has no clients".into()));
    }
    let mut global = init_probe(spec, &mut Rng::new(config.seed, stream_id(&[INIT_STREAM])))?;
    let mut round_logs = Vec::with_capacity(config.rounds);
    for t in 0..config.rounds {
        let fit_clients: Vec<usize> = if config.fraction_fit >= 1.0 {
            (0..k).collect()
        } else {
            let m = sample_count(config.fraction_fit, k);
            Rng::new(config.seed, stream_id(&[FIT_STREAM, t as u64])).index_sample(k, m)
        };
        // Each client trains on an immutable copy with its own rng
        // stream, so any execution order gives the same updates.
        let updates: Vec<ClientUpdate> = fit_clients
            .par_iter()
            .map(|&c| {
                let mut rng = Rng::new(
                    config.seed,
                    stream_id(&[LOCAL_STREAM, t as u64, c as u64]),
                );
                local_train(&global, spec, &federation.pool, &federation.shards[c], config, &mut rng)
            })
            .collect::<Result<_>>()?;
        global = fedavg_aggregate(&updates)?;

        let m_eval = sample_count(config.fraction_evaluate, k);
        let eval_clients =
            Rng::new(config.seed, stream_id(&[EVAL_STREAM, t as u64])).index_sample(k, m_eval);
        let mut acc = 0.0;
        for &c in &eval_clients {
            acc += top1_on_indices(&global, spec, &federation.pool, &federation.shards[c].indices)?;
        }
        let eval_metric = acc / eval_clients.len() as f64;
        round_logs.push(RoundLog { round: t + 1, eval_metric, fit_clients });
    }
    let final_metric_value = match config.final_metric {
        FinalMetric::Top1 => top1_accuracy(&global, spec, &federation.test_set)?,
        FinalMetric::MacroAuc => macro_auc(&global, spec, &federation.test_set)?,
    };
    Ok(TrainingResult {
        round_logs,
        final_metric_value,
        config: config.clone(),
        wall_time_s: start.elapsed().as_secs_f64(),
        final_state: global,
    })
}

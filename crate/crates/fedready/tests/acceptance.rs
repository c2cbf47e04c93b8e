//! Acceptance gate: one test per release criterion, each finishing with
//! a single "criterion N: PASS/FAIL" line (stream them with
//! `cargo test --test acceptance -- --nocapture`). Reference constants
//! were frozen from independent extended-precision computations before
//! the library was written.

use std::time::Instant;

use rayon::ThreadPoolBuilder;

use fedready::datasets::{
    dirichlet_partition, label_histogram, make_blobs_split, parse_idx_images, parse_idx_labels,
    load_idx, ClientShard, Dataset, FederationSnapshot, IdxImages, IdxLabels, LabelHistogram,
};
use fedready::embedding::{sample_class_index, TaskEmbedding};
use fedready::error::Error;
use fedready::fedsim::{fedavg_aggregate, run_federation, ClientUpdate, FedAvgConfig};
use fedready::harness::{parse_sweep_config, read_csv, run_sweep, SweepRow};
use fedready::numcore::{student_t_two_sided_p, Rng, SimplexVector};
use fedready::probe::{
    backward, cross_entropy_loss, forward, init_probe, softmax_rows, Batch, ConvLayerSpec,
    Logits, ProbeSpec, ProbeState,
};
use fedready::readiness::{
    average_entropy, cdi, cohesion, density_detail, dispersion, CdiWeights,
};
use fedready::stats::{pearson, rank_average_ties, spearman};

/// Prints the criterion's verdict line and fails the test on Err.
fn verdict(number: u32, name: &str, outcome: Result<String, String>) {
    match outcome {
        Ok(detail) => println!("criterion {number} ({name}): PASS - {detail}"),
        Err(detail) => panic!("criterion {number} ({name}): FAIL - {detail}"),
    }
}

/// Records a mismatch against a reference value; NaN always mismatches.
fn expect_close(failures: &mut Vec<String>, what: &str, got: f64, want: f64, tol: f64) {
    if !((got - want).abs() <= tol) {
        failures.push(format!("{what}: got {got:.17e}, want {want:.17e} within {tol:e}"));
    }
}

fn finish(failures: Vec<String>, pass_detail: String) -> Result<String, String> {
    if failures.is_empty() {
        Ok(pass_detail)
    } else {
        Err(failures.join("; "))
    }
}

fn embedding_of(values: &[f64], client_id: usize) -> TaskEmbedding {
    TaskEmbedding { client_id, values: values.to_vec(), fingerprint: 0xFEED, skip_filters: 0 }
}

/// Minimal valid dataset with chosen labels: 1-channel 8x8 images of
/// alternating +1/-1 pixels, which satisfy the normalization contract
/// exactly (mean 0, std 1, within clamp range).
fn labeled_dataset(labels: Vec<usize>, class_count: usize) -> Dataset {
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

/// Fast sweep configuration shared by the determinism and row-identity
/// checks: tiny blobs, no extractor pretraining, two rounds.
const TINY_SWEEP_DOC: &str = "blobs.classes = 3
blobs.channels = 1
blobs.side = 8
blobs.per_class = 30
blobs.test_per_class = 10
blobs.spread = 1.0
clients = [4]
alpha = [0.1, 5]
seeds = [1, 2]
min_per_client = 2
fed.rounds = 2
fed.lr = 0.05
embed.head_epochs = 8
pretrain = false
";

// -------------------------------------------------------------------
// 1. End to end: across a heterogeneity grid, the readiness indices
//    computed before training must rank final federated accuracy.
//    Blobs, 3 classes of 16x16x3, 200 samples per class, K=5 clients,
//    alpha in {0.05, 0.5, 5.0}, 10 rounds, 5 independent repetitions:
//    the per-repetition Spearman correlation (3 grid points) between
//    each of cohesion / neg_dispersion / avg_entropy and final top-1
//    must be positive in at least 4 of the 5 repetitions, inside a
//    10-minute budget.
// -------------------------------------------------------------------
#[test]
fn criterion_1_readiness_indices_track_federated_accuracy() {
    let started = Instant::now();
    let dir = tempfile::tempdir().expect("tempdir");
    let doc = "blobs.classes = 3
blobs.channels = 3
blobs.side = 16
blobs.per_class = 200
blobs.test_per_class = 50
blobs.spread = 3.0
clients = [5]
alpha = [0.05, 0.5, 5.0]
seeds = [1, 2, 3, 4, 5]
fed.rounds = 10
embed.head_lr = 0.003
embed.fisher_passes = 16
";
    let mut config = parse_sweep_config(doc).expect("grid config parses");
    config.out = dir.path().join("grid.csv");
    let rows = run_sweep(&config).expect("sweep completes");

    let outcome = (|| {
        if rows.len() != 15 {
            return Err(format!("expected 15 grid rows, got {}", rows.len()));
        }
        if let Some(bad) = rows.iter().find(|r| !r.is_complete()) {
            return Err(format!(
                "cell K={} alpha={} seed={} produced no usable measurements",
                bad.k, bad.alpha, bad.seed
            ));
        }
        let metrics: [(&str, fn(&SweepRow) -> f64); 3] = [
            ("cohesion", |r| r.cohesion),
            ("neg_dispersion", |r| r.neg_dispersion),
            ("avg_entropy", |r| r.avg_entropy),
        ];
        let mut tallies = Vec::new();
        let mut all_pass = true;
        for (name, value_of) in metrics {
            let mut positive = 0usize;
            for &seed in &config.seeds {
                let mut of_seed: Vec<&SweepRow> =
                    rows.iter().filter(|r| r.seed == seed).collect();
                of_seed.sort_by(|a, b| a.alpha.total_cmp(&b.alpha));
                let xs: Vec<f64> = of_seed.iter().map(|r| value_of(r)).collect();
                let ys: Vec<f64> = of_seed.iter().map(|r| r.final_metric).collect();
                if let Ok(res) = spearman(&xs, &ys) {
                    if res.r > 0.0 {
                        positive += 1;
                    }
                }
            }
            tallies.push(format!("{name} {positive}/5"));
            all_pass &= positive >= 4;
        }
        let elapsed = started.elapsed().as_secs_f64();
        let summary = format!("{}; {elapsed:.0} s of the 600 s budget", tallies.join(", "));
        if !all_pass {
            return Err(format!("positive-Spearman tally below 4/5: {summary}"));
        }
        if elapsed >= 600.0 {
            return Err(format!("over time budget: {summary}"));
        }
        Ok(format!("positive Spearman vs final top-1 in {summary}"))
    })();
    verdict(1, "readiness indices track federated accuracy", outcome);
}

// -------------------------------------------------------------------
// 2. The Monte-Carlo diagonal Fisher estimator, applied to the bare
//    categorical-softmax family (logits are the parameters), must match
//    the analytic diagonal p_k(1-p_k) within 5% relative per coordinate
//    at 5e4 draws, in under 30 seconds.
// -------------------------------------------------------------------
#[test]
fn criterion_2_monte_carlo_fisher_matches_analytic_diagonal() {
    let started = Instant::now();
    let probs = [0.2, 0.3, 0.5];
    let logits = Logits { data: probs.iter().map(|p: &f64| p.ln()).collect(), classes: 3 };
    let p = softmax_rows(&logits);
    let mut rng = Rng::new(20_260_819, 2);
    let draws = 50_000usize;
    let mut acc = [0.0f64; 3];
    for _ in 0..draws {
        let y = sample_class_index(&p, &mut rng);
        let (_, dl) = cross_entropy_loss(&logits, &[y]).expect("loss");
        for k in 0..3 {
            acc[k] += dl.data[k] * dl.data[k];
        }
    }
    let mut worst = 0.0f64;
    for k in 0..3 {
        let mc = acc[k] / draws as f64;
        let analytic = probs[k] * (1.0 - probs[k]);
        worst = worst.max(((mc - analytic) / analytic).abs());
    }
    let elapsed = started.elapsed().as_secs_f64();
    let outcome = if worst < 0.05 && elapsed < 30.0 {
        Ok(format!(
            "worst per-coordinate relative error {worst:.4} at {draws} draws; {elapsed:.2} s of the 30 s budget"
        ))
    } else {
        Err(format!(
            "worst per-coordinate relative error {worst:.4} (limit 0.05) in {elapsed:.2} s (limit 30 s)"
        ))
    };
    verdict(2, "Monte-Carlo Fisher matches analytic diagonal", outcome);
}

// -------------------------------------------------------------------
// 3. Analytic backpropagation on a randomly initialized two-conv-layer
//    probe must agree with central finite differences on at least 99%
//    of parameters to 1e-5 relative, in under 10 seconds.
// -------------------------------------------------------------------
#[test]
fn criterion_3_backpropagation_matches_central_differences() {
    let started = Instant::now();
    let spec = ProbeSpec {
        input_channels: 2,
        input_side: 8,
        conv_layers: vec![
            ConvLayerSpec { filters: 3, kernel: 3 },
            ConvLayerSpec { filters: 4, kernel: 3 },
        ],
        head_classes: 3,
    };
    let mut rng = Rng::new(77_001, 3);
    let state = init_probe(&spec, &mut rng).expect("init");
    let n = 5;
    let images: Vec<f64> =
        (0..n * spec.input_channels * spec.input_side * spec.input_side)
            .map(|_| rng.normal())
            .collect();
    let labels: Vec<usize> =
        (0..n).map(|_| rng.below(spec.head_classes as u64) as usize).collect();
    let batch = Batch { images, labels, channels: spec.input_channels, side: spec.input_side };

    let loss_at = |s: &ProbeState| -> f64 {
        let (logits, _) = forward(&spec, s, &batch).expect("forward");
        cross_entropy_loss(&logits, &batch.labels).expect("loss").0
    };
    let (logits, cache) = forward(&spec, &state, &batch).expect("forward");
    let (_, dlogits) = cross_entropy_loss(&logits, &batch.labels).expect("loss");
    let grad = backward(&spec, &state, &cache, &dlogits).expect("backward");

    // Address every parameter as (kind, layer, index).
    enum Coord {
        ConvW(usize, usize),
        ConvB(usize, usize),
        HeadW(usize),
        HeadB(usize),
    }
    let mut coords = Vec::new();
    for l in 0..state.conv.len() {
        for i in 0..state.conv[l].weights.len() {
            coords.push(Coord::ConvW(l, i));
        }
        for i in 0..state.conv[l].bias.len() {
            coords.push(Coord::ConvB(l, i));
        }
    }
    for i in 0..state.head.weights.len() {
        coords.push(Coord::HeadW(i));
    }
    for i in 0..state.head.bias.len() {
        coords.push(Coord::HeadB(i));
    }

    let get = |s: &ProbeState, c: &Coord| match *c {
        Coord::ConvW(l, i) => s.conv[l].weights[i],
        Coord::ConvB(l, i) => s.conv[l].bias[i],
        Coord::HeadW(i) => s.head.weights[i],
        Coord::HeadB(i) => s.head.bias[i],
    };
    let set = |s: &mut ProbeState, c: &Coord, v: f64| match *c {
        Coord::ConvW(l, i) => s.conv[l].weights[i] = v,
        Coord::ConvB(l, i) => s.conv[l].bias[i] = v,
        Coord::HeadW(i) => s.head.weights[i] = v,
        Coord::HeadB(i) => s.head.bias[i] = v,
    };
    let analytic_of = |c: &Coord| match *c {
        Coord::ConvW(l, i) => grad.conv[l].weights[i],
        Coord::ConvB(l, i) => grad.conv[l].bias[i],
        Coord::HeadW(i) => grad.head.weights[i],
        Coord::HeadB(i) => grad.head.bias[i],
    };

    let eps = 1e-4;
    let mut within = 0usize;
    for c in &coords {
        let orig = get(&state, c);
        let mut s = state.clone();
        set(&mut s, c, orig + eps);
        let up = loss_at(&s);
        set(&mut s, c, orig - eps);
        let down = loss_at(&s);
        let numeric = (up - down) / (2.0 * eps);
        let analytic = analytic_of(c);
        let scale = numeric.abs().max(analytic.abs());
        // Coordinates where both sides vanish are agreements, not noise.
        if scale <= 1e-9 || (numeric - analytic).abs() <= 1e-5 * scale {
            within += 1;
        }
    }
    let frac = within as f64 / coords.len() as f64;
    let elapsed = started.elapsed().as_secs_f64();
    let outcome = if frac >= 0.99 && elapsed < 10.0 {
        Ok(format!(
            "{within}/{} parameters within 1e-5 relative ({:.1}%); {elapsed:.2} s of the 10 s budget",
            coords.len(),
            frac * 100.0
        ))
    } else {
        Err(format!(
            "{within}/{} parameters within tolerance ({:.1}%, need >= 99%) in {elapsed:.2} s (limit 10 s)",
            coords.len(),
            frac * 100.0
        ))
    };
    verdict(3, "backpropagation matches central differences", outcome);
}

// -------------------------------------------------------------------
// 4. The readiness indices reproduce their frozen reference values:
//    cohesion of (1,0),(1,1),(0,1) = sqrt(2)/3; two-point density
//    e^{-1/2}; collinear three-point density; the CDI identity and its
//    composed value; the two-client entropy average.
// -------------------------------------------------------------------
#[test]
fn criterion_4_readiness_indices_match_frozen_references() {
    let mut failures = Vec::new();

    // Mean cosine over ordered pairs of (1,0), (1,1), (0,1):
    // (2/sqrt(2) + 2/sqrt(2) + 0) / 6 = sqrt(2)/3.
    let tri = [
        embedding_of(&[1.0, 0.0], 0),
        embedding_of(&[1.0, 1.0], 1),
        embedding_of(&[0.0, 1.0], 2),
    ];
    let c = cohesion(&tri).expect("cohesion");
    expect_close(&mut failures, "cohesion", c, 0.47140452079103168, 1e-9);

    // Two points at distance 1: bandwidth is that distance, so the
    // kernel mean is exp(-1/2).
    let pair = [embedding_of(&[0.0], 0), embedding_of(&[1.0], 1)];
    let (d, sigma) = density_detail(&pair).expect("density");
    expect_close(&mut failures, "two-point density", d, 0.60653065971263342, 1e-9);
    expect_close(&mut failures, "two-point bandwidth", sigma, 1.0, 0.0);

    // Collinear points at 0, 1, 3: distances {1, 2, 3}, bandwidth 2,
    // mean of exp(-1/8), exp(-4/8), exp(-9/8).
    let line = [
        embedding_of(&[0.0], 0),
        embedding_of(&[1.0], 1),
        embedding_of(&[3.0], 2),
    ];
    let (d, sigma) = density_detail(&line).expect("density");
    expect_close(&mut failures, "collinear density", d, 0.60456000988519285, 1e-9);
    expect_close(&mut failures, "collinear bandwidth", sigma, 2.0, 0.0);

    let weights = CdiWeights::default();

    // Coincident embeddings: cohesion 1, dispersion 0, so the combined
    // index is exactly beta.
    let same = [embedding_of(&[0.5, 2.0], 0), embedding_of(&[0.5, 2.0], 1)];
    let v = cdi(&same, &weights).expect("cdi");
    expect_close(&mut failures, "cdi of coincident embeddings", v, 1.0, 1e-12);

    // Rescale the cohesion triangle so its dispersion is 1: cosine
    // similarity ignores the common factor, so the combined index is
    // sqrt(2)/3 - 1000 * 1.
    let spread = dispersion(&tri).expect("dispersion");
    let t = 1.0 / spread;
    let scaled: Vec<TaskEmbedding> = tri
        .iter()
        .map(|e| {
            let values: Vec<f64> = e.values.iter().map(|&x| t * x).collect();
            embedding_of(&values, e.client_id)
        })
        .collect();
    let v = cdi(&scaled, &weights).expect("cdi");
    let identity = weights.beta * cohesion(&scaled).expect("cohesion")
        - weights.gamma * dispersion(&scaled).expect("dispersion");
    expect_close(&mut failures, "cdi identity", v - identity, 0.0, 1e-12);
    expect_close(&mut failures, "cdi composition", v, -999.52859547920897, 1e-9);

    // Two clients with label proportions (0.5, 0.25, 0.25) and (1.0):
    // (1.5 ln 2 + 0) / 2.
    let hists = [
        LabelHistogram {
            class_ids: vec![0, 1, 2],
            proportions: SimplexVector::new(vec![0.5, 0.25, 0.25]).expect("simplex"),
        },
        LabelHistogram {
            class_ids: vec![4],
            proportions: SimplexVector::new(vec![1.0]).expect("simplex"),
        },
    ];
    let h = average_entropy(&hists).expect("entropy");
    expect_close(&mut failures, "average entropy", h, 0.51986038541995898, 1e-9);

    verdict(
        4,
        "readiness index reference values",
        finish(failures, "cohesion, density (2), CDI identity + composition, entropy all match".into()),
    );
}

// -------------------------------------------------------------------
// 5. Correlation statistics reproduce their frozen reference values:
//    the five-point Pearson example, the tie/no-tie Spearman closed
//    forms, the Cauchy p-value, and monotone-transform invariance over
//    1000 random instances.
// -------------------------------------------------------------------
#[test]
fn criterion_5_correlation_statistics_match_frozen_references() {
    let mut failures = Vec::new();

    // Pearson on x=(1..5), y=(2,1,4,3,7). Hand check of the definition:
    // sum dx*dy = 12, sum dx^2 = 10, sum dy^2 = 21.2, so
    // r = 12/sqrt(212) = 0.8241633836921341; p follows from
    // t = r*sqrt(3/(1-r^2)) = 2.5205041512504176 with 3 degrees of
    // freedom. Both references were frozen from a 50-digit evaluation.
    let x = [1.0, 2.0, 3.0, 4.0, 5.0];
    let y = [2.0, 1.0, 4.0, 3.0, 7.0];
    let res = pearson(&x, &y).expect("pearson");
    expect_close(&mut failures, "pearson r", res.r, 0.82416338369213414, 1e-9);
    expect_close(&mut failures, "pearson p", res.p_value, 0.086138631313959447, 1e-4);
    if res.significant {
        failures.push("pearson example flagged significant at p > 0.05".into());
    }

    // Tie closed form: ranks of (3, 1, 3, 2) are (3.5, 1, 3.5, 2).
    let ranks = rank_average_ties(&[3.0, 1.0, 3.0, 2.0]);
    for (i, (got, want)) in ranks.iter().zip(&[3.5, 1.0, 3.5, 2.0]).enumerate() {
        expect_close(&mut failures, &format!("tied rank[{i}]"), *got, *want, 1e-12);
    }
    // Sequences with identical tie structure correlate perfectly.
    let tied = spearman(&[3.0, 1.0, 3.0, 2.0], &[30.0, 10.0, 30.0, 20.0]).expect("spearman");
    expect_close(&mut failures, "tie-matched rho", tied.r, 1.0, 1e-12);

    // No-tie closed form: one adjacent swap in four points gives
    // rho = 1 - 6*2/(4*15) = 0.8.
    let res = spearman(&[1.0, 2.0, 3.0, 4.0], &[10.0, 30.0, 20.0, 40.0]).expect("spearman");
    expect_close(&mut failures, "one-swap rho", res.r, 0.8, 1e-12);

    // t = 1 with 1 degree of freedom is the standard Cauchy: the
    // two-sided tail is exactly 1/2.
    let p = student_t_two_sided_p(1.0, 1).expect("t tail");
    expect_close(&mut failures, "Cauchy two-sided p", p, 0.5, 1e-10);

    // Rank correlation is invariant under strictly increasing
    // transforms of either input, and negates under strictly
    // decreasing ones: 1000 random instances.
    let mut rng = Rng::new(55_005, 4);
    let mut checked = 0usize;
    for trial in 0..1000 {
        let n = 4 + rng.below(9) as usize;
        let xs: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let ys: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let base = match spearman(&xs, &ys) {
            Ok(r) => r.r,
            Err(_) => continue, // constant draw; astronomically unlikely
        };
        let increasing: fn(f64) -> f64 = match trial % 3 {
            0 => |u| u.exp(),
            1 => |u| u * u * u + 2.0 * u,
            _ => |u| u.atan() * 5.0 + 1.0,
        };
        let tx: Vec<f64> = xs.iter().map(|&u| increasing(u)).collect();
        let ty: Vec<f64> = ys.iter().map(|&u| -increasing(u)).collect();
        let same = spearman(&tx, &ys).expect("transformed spearman").r;
        let flipped = spearman(&xs, &ty).expect("transformed spearman").r;
        if (same - base).abs() > 1e-12 {
            failures.push(format!(
                "trial {trial}: increasing transform moved rho from {base} to {same}"
            ));
            break;
        }
        if (flipped + base).abs() > 1e-12 {
            failures.push(format!(
                "trial {trial}: decreasing transform gave {flipped}, want {}",
                -base
            ));
            break;
        }
        checked += 1;
    }
    if checked < 990 {
        failures.push(format!("only {checked}/1000 transform instances were checkable"));
    }

    verdict(
        5,
        "correlation statistics reference values",
        finish(
            failures,
            format!("pearson, spearman closed forms, Cauchy tail, {checked} transform instances all match"),
        ),
    );
}

// -------------------------------------------------------------------
// 6. Aggregation arithmetic and determinism: equal weights average
//    exactly, the (1,3)-weighted scalar case gives exactly 3.0,
//    training is bitwise identical at 1 and 4 workers, and rerunning a
//    sweep reproduces the CSV except for wall time.
// -------------------------------------------------------------------

/// All trainable parameters of a state, flattened in a fixed order.
fn flat_params(state: &ProbeState) -> Vec<f64> {
    let mut v = Vec::new();
    for l in &state.conv {
        v.extend_from_slice(&l.weights);
        v.extend_from_slice(&l.bias);
    }
    v.extend_from_slice(&state.head.weights);
    v.extend_from_slice(&state.head.bias);
    v
}

/// Overwrites every trainable parameter with `value_of(running index)`.
fn fill_params(state: &mut ProbeState, mut value_of: impl FnMut(usize) -> f64) {
    let mut i = 0usize;
    for l in &mut state.conv {
        for w in &mut l.weights {
            *w = value_of(i);
            i += 1;
        }
        for b in &mut l.bias {
            *b = value_of(i);
            i += 1;
        }
    }
    for w in &mut state.head.weights {
        *w = value_of(i);
        i += 1;
    }
    for b in &mut state.head.bias {
        *b = value_of(i);
        i += 1;
    }
}

/// Drops the final (wall-time) column of every CSV line.
fn strip_last_column(text: &str) -> String {
    text.lines()
        .map(|line| match line.rfind(',') {
            Some(cut) => &line[..cut],
            None => line,
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn criterion_6_aggregation_arithmetic_and_determinism() {
    let mut failures = Vec::new();

    let scalar_spec = ProbeSpec {
        input_channels: 1,
        input_side: 2,
        conv_layers: vec![ConvLayerSpec { filters: 1, kernel: 1 }],
        head_classes: 2,
    };

    // Equal sample counts reduce the weighted average to the
    // coordinatewise arithmetic mean. Parameters are multiples of 1/16,
    // so sums are exact and both sides round identically.
    let mut updates = Vec::new();
    for client in 0..3usize {
        let mut state = ProbeState::zeros(&scalar_spec);
        fill_params(&mut state, |i| ((client * 7 + i * 3) % 64) as f64 * 0.0625 - 2.0);
        updates.push(ClientUpdate { client_id: client, weights: state, n_c: 7 });
    }
    let averaged = fedavg_aggregate(&updates).expect("aggregate");
    let params: Vec<Vec<f64>> = updates.iter().map(|u| flat_params(&u.weights)).collect();
    for (i, &got) in flat_params(&averaged).iter().enumerate() {
        let mean = (params[0][i] + params[1][i] + params[2][i]) / 3.0;
        if got.to_bits() != mean.to_bits() {
            failures.push(format!("equal-weight coordinate {i}: {got} != mean {mean}"));
            break;
        }
    }

    // Sample counts (1, 3) over parameters (0, 4): every coordinate of
    // the average must be exactly (1*0 + 3*4)/4 = 3.
    let zeros = ProbeState::zeros(&scalar_spec);
    let mut fours = ProbeState::zeros(&scalar_spec);
    fill_params(&mut fours, |_| 4.0);
    let weighted = fedavg_aggregate(&[
        ClientUpdate { client_id: 0, weights: zeros, n_c: 1 },
        ClientUpdate { client_id: 1, weights: fours, n_c: 3 },
    ])
    .expect("aggregate");
    if flat_params(&weighted).iter().any(|&v| v != 3.0) {
        failures.push("weighted scalar case: some coordinate is not exactly 3.0".into());
    }

    // Bitwise parallel-serial equivalence of a full training run at
    // worker counts 1 and 4.
    let (pool, test) = make_blobs_split(3, 2, 8, 40, 10, 1.0, 11).expect("blobs");
    let federation = dirichlet_partition(pool, test, 4, 0.5, 4, 11).expect("partition");
    let spec = ProbeSpec::desk_default(2, 8, 3);
    let cfg = FedAvgConfig { rounds: 3, lr: 0.05, seed: 11, ..FedAvgConfig::default() };
    let run_at = |workers: usize| {
        ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .expect("pool")
            .install(|| run_federation(&federation, &spec, &cfg))
            .expect("training")
    };
    let serial = run_at(1);
    let wide = run_at(4);
    if flat_params(&serial.final_state)
        .iter()
        .zip(flat_params(&wide.final_state).iter())
        .any(|(a, b)| a.to_bits() != b.to_bits())
    {
        failures.push("worker counts 1 and 4 disagree on final weights".into());
    }
    if serial.round_logs != wide.round_logs {
        failures.push("worker counts 1 and 4 disagree on round logs".into());
    }
    if serial.final_metric_value.to_bits() != wide.final_metric_value.to_bits() {
        failures.push("worker counts 1 and 4 disagree on the final metric".into());
    }

    // Two identical sweep invocations agree on everything but wall time.
    let dir = tempfile::tempdir().expect("tempdir");
    let mut first = parse_sweep_config(TINY_SWEEP_DOC).expect("config");
    first.out = dir.path().join("first.csv");
    run_sweep(&first).expect("sweep");
    let mut second = parse_sweep_config(TINY_SWEEP_DOC).expect("config");
    second.out = dir.path().join("second.csv");
    run_sweep(&second).expect("sweep");
    let a = std::fs::read_to_string(&first.out).expect("read");
    let b = std::fs::read_to_string(&second.out).expect("read");
    if strip_last_column(&a) != strip_last_column(&b) {
        failures.push("rerun produced a different CSV beyond the wall-time column".into());
    }

    verdict(
        6,
        "aggregation arithmetic and determinism",
        finish(
            failures,
            "equal-weight mean exact, weighted scalar 3.0 exact, workers {1,4} bitwise equal, rerun CSV identical minus wall time".into(),
        ),
    );
}

// -------------------------------------------------------------------
// 7. Partition contract: 200 random (alpha, seed, K) draws give
//    disjoint, exhaustive shards that respect the minimum size floor;
//    and across 24 seeds mean per-client label entropy is ordered
//    alpha 0.05 < 0.5 < 5.0 with 3-sigma separation.
// -------------------------------------------------------------------
#[test]
fn criterion_7_partition_contract_and_heterogeneity_ordering() {
    let mut failures = Vec::new();

    let mut meta = Rng::new(31_337, 0);
    let mut trials = 0usize;
    'fuzz: for trial in 0..200u64 {
        let k = 2 + meta.below(7) as usize;
        let classes = 2 + meta.below(4) as usize;
        let min_per_client = meta.below(9) as usize;
        let n = k * min_per_client + 20 + meta.below(100) as usize;
        let labels: Vec<usize> =
            (0..n).map(|_| meta.below(classes as u64) as usize).collect();
        let alpha = [0.05, 0.2, 1.0, 5.0][meta.below(4) as usize];
        let pool = labeled_dataset(labels, classes);
        let test = labeled_dataset((0..2 * classes).map(|i| i % classes).collect(), classes);
        let snap = match dirichlet_partition(pool, test, k, alpha, min_per_client, trial) {
            Ok(s) => s,
            Err(e) => {
                failures.push(format!("trial {trial} (K={k}, alpha={alpha}): {e}"));
                break 'fuzz;
            }
        };
        // validate() enforces disjointness and exhaustiveness.
        if let Err(e) = snap.validate() {
            failures.push(format!("trial {trial}: partition contract violated: {e}"));
            break 'fuzz;
        }
        if snap.client_count() != k || snap.total_samples() != n {
            failures.push(format!("trial {trial}: wrong shard count or sample total"));
            break 'fuzz;
        }
        for shard in &snap.shards {
            if shard.len() < min_per_client {
                failures.push(format!(
                    "trial {trial}: client {} holds {} < floor {min_per_client}",
                    shard.client_id,
                    shard.len()
                ));
                break 'fuzz;
            }
        }
        trials += 1;
    }

    // Heterogeneity ordering: seed-averaged mean per-client entropy.
    let mean_entropy = |snap: &FederationSnapshot| -> f64 {
        let total: f64 = snap
            .shards
            .iter()
            .map(|s: &ClientShard| label_histogram(s, &snap.pool).expect("histogram").entropy())
            .sum();
        total / snap.client_count() as f64
    };
    let mut label_rng = Rng::new(1_000, 1);
    let pool_labels: Vec<usize> = (0..400).map(|_| label_rng.below(4) as usize).collect();
    let pool = labeled_dataset(pool_labels, 4);
    let test = labeled_dataset((0..8).map(|i| i % 4).collect(), 4);
    let grid = [0.05, 0.5, 5.0];
    let mut stats_per_alpha = Vec::new();
    for &alpha in &grid {
        let vals: Vec<f64> = (0..24u64)
            .map(|seed| {
                let snap =
                    dirichlet_partition(pool.clone(), test.clone(), 8, alpha, 4, seed)
                        .expect("partition");
                mean_entropy(&snap)
            })
            .collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        stats_per_alpha.push((alpha, mean, (var / n).sqrt()));
    }
    for w in stats_per_alpha.windows(2) {
        let (alpha_lo, m_lo, se_lo) = w[0];
        let (alpha_hi, m_hi, se_hi) = w[1];
        let z = (m_hi - m_lo) / (se_lo * se_lo + se_hi * se_hi).sqrt();
        if z < 3.0 {
            failures.push(format!(
                "entropy at alpha {alpha_hi} not separated from alpha {alpha_lo}: \
                 {m_lo:.4} vs {m_hi:.4} (z = {z:.2} < 3)"
            ));
        }
    }

    let entropy_detail: Vec<String> = stats_per_alpha
        .iter()
        .map(|(a, m, _)| format!("alpha {a}: {m:.3}"))
        .collect();
    verdict(
        7,
        "partition contract and heterogeneity ordering",
        finish(
            failures,
            format!(
                "{trials}/200 fuzz draws hold the contract; entropy over 24 seeds ordered with >= 3 sigma ({})",
                entropy_detail.join(", ")
            ),
        ),
    );
}

// -------------------------------------------------------------------
// 8. IDX ingestion: hand-built image and label fixtures survive a
//    byte-exact round trip through files, and the three corruption
//    cases (bad magic, truncation, count mismatch) are diagnosed.
// -------------------------------------------------------------------
#[test]
fn criterion_8_idx_round_trip_and_corruption_diagnostics() {
    let mut failures = Vec::new();
    let dir = tempfile::tempdir().expect("tempdir");

    // Byte-exact round trip through the filesystem.
    let images = IdxImages { rows: 2, cols: 2, pixels: vec![0, 1, 128, 255, 10, 20, 30, 40] };
    let labels = IdxLabels { labels: vec![3, 7] };
    let image_path = dir.path().join("fixture-images.idx");
    let label_path = dir.path().join("fixture-labels.idx");
    std::fs::write(&image_path, images.to_bytes()).expect("write");
    std::fs::write(&label_path, labels.to_bytes()).expect("write");
    let image_bytes = std::fs::read(&image_path).expect("read");
    let label_bytes = std::fs::read(&label_path).expect("read");
    match parse_idx_images(&image_bytes) {
        Ok(parsed) if parsed == images && parsed.to_bytes() == image_bytes => {}
        Ok(_) => failures.push("image fixture did not round-trip byte-exact".into()),
        Err(e) => failures.push(format!("image fixture failed to parse: {e}")),
    }
    match parse_idx_labels(&label_bytes) {
        Ok(parsed) if parsed == labels && parsed.to_bytes() == label_bytes => {}
        Ok(_) => failures.push("label fixture did not round-trip byte-exact".into()),
        Err(e) => failures.push(format!("label fixture failed to parse: {e}")),
    }

    // Corruption 1: wrong magic 0x00000802, diagnosed at offset 0.
    let mut bad_magic = images.to_bytes();
    bad_magic[3] = 0x02;
    match parse_idx_images(&bad_magic) {
        Err(Error::Format { offset: 0, message }) if message.contains("0x00000802") => {}
        other => failures.push(format!("bad magic not diagnosed at offset 0: {other:?}")),
    }

    // Corruption 2: payload truncated, diagnosed at the cut position.
    let whole = images.to_bytes();
    match parse_idx_images(&whole[..whole.len() - 3]) {
        Err(Error::Format { offset, message })
            if offset == whole.len() - 3 && message.contains("truncated") => {}
        other => failures.push(format!("truncation not diagnosed at the cut: {other:?}")),
    }

    // Corruption 3: image/label count mismatch across the pair.
    let wide = IdxImages { rows: 8, cols: 8, pixels: vec![7u8; 3 * 64] };
    let wide_path = dir.path().join("wide-images.idx");
    std::fs::write(&wide_path, wide.to_bytes()).expect("write");
    match load_idx(&wide_path, &label_path) {
        Err(e) if e.to_string().contains("3 images but 2 labels") => {}
        other => failures.push(format!("count mismatch not diagnosed: {other:?}")),
    }

    verdict(
        8,
        "IDX round-trip and corruption diagnostics",
        finish(
            failures,
            "fixtures round-trip byte-exact; bad magic, truncation and count mismatch all diagnosed".into(),
        ),
    );
}

// -------------------------------------------------------------------
// 9. Combined-index configuration: the default weighting is beta = 1,
//    gamma = 1000, and every emitted sweep row satisfies
//    cdi = beta*cohesion + gamma*neg_dispersion when re-read from the
//    CSV (the 17-significant-digit format round-trips exactly).
// -------------------------------------------------------------------
#[test]
fn criterion_9_cdi_weighting_defaults_and_row_identity() {
    let mut failures = Vec::new();

    let defaults = CdiWeights::default();
    if defaults.beta != 1.0 || defaults.gamma != 1000.0 {
        failures.push(format!(
            "default weights are beta={}, gamma={}, want 1 and 1000",
            defaults.beta, defaults.gamma
        ));
    }
    let parsed = parse_sweep_config("").expect("empty config");
    if parsed.cdi != defaults {
        failures.push("configuration layer does not default to beta=1, gamma=1000".into());
    }

    // Post-hoc identity over a sweep run with the default weights.
    let dir = tempfile::tempdir().expect("tempdir");
    let mut config = parse_sweep_config(TINY_SWEEP_DOC).expect("config");
    config.out = dir.path().join("default-weights.csv");
    run_sweep(&config).expect("sweep");
    let mut checked = 0usize;
    for row in read_csv(&config.out).expect("read") {
        if !row.is_complete() {
            continue;
        }
        let expected = defaults.beta * row.cohesion + defaults.gamma * row.neg_dispersion;
        if row.cdi.to_bits() != expected.to_bits() {
            failures.push(format!(
                "row K={} alpha={} seed={}: cdi {} != {expected}",
                row.k, row.alpha, row.seed, row.cdi
            ));
        }
        checked += 1;
    }
    if checked == 0 {
        failures.push("default-weight sweep produced no complete rows".into());
    }

    // The identity follows the configured weights, not hardcoded ones.
    // (The grammar rejects duplicate keys, so this document stands alone.)
    let custom_doc = "blobs.classes = 3
blobs.channels = 1
blobs.side = 8
blobs.per_class = 30
blobs.test_per_class = 10
blobs.spread = 1.0
clients = [3]
alpha = [0.5]
seeds = [7]
min_per_client = 2
fed.rounds = 2
fed.lr = 0.05
embed.head_epochs = 8
pretrain = false
cdi.beta = 2.5
cdi.gamma = 40
";
    let mut custom = parse_sweep_config(custom_doc).expect("config");
    custom.out = dir.path().join("custom-weights.csv");
    run_sweep(&custom).expect("sweep");
    let mut custom_checked = 0usize;
    for row in read_csv(&custom.out).expect("read") {
        if !row.is_complete() {
            continue;
        }
        let expected = 2.5 * row.cohesion + 40.0 * row.neg_dispersion;
        if row.cdi.to_bits() != expected.to_bits() {
            failures.push(format!(
                "custom-weight row K={} alpha={} seed={}: cdi {} != {expected}",
                row.k, row.alpha, row.seed, row.cdi
            ));
        }
        custom_checked += 1;
    }
    if custom_checked == 0 {
        failures.push("custom-weight sweep produced no complete rows".into());
    }

    verdict(
        9,
        "CDI weighting defaults and row identity",
        finish(
            failures,
            format!(
                "defaults beta=1 gamma=1000; identity bitwise on {checked} default-weight and {custom_checked} custom-weight rows"
            ),
        ),
    );
}

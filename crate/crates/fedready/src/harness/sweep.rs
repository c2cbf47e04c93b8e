//! Sweep execution: for every (K, alpha, seed) cell, build a
//! federation, embed every client with a frozen extractor, compute the
//! readiness report, then train with federated averaging and record the
//! final metric. Rows are appended to the output CSV as cells finish
//! (a crash loses at most the in-flight cell) and the file is rewritten
//! in canonical order at the end.

use std::fs;
use std::io::Write as _;
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;

use super::config::{DatasetSpec, SweepConfig};
use super::csv::{row_to_line, sort_rows, write_csv, SweepRow, CSV_HEADER};
use crate::datasets::{dirichlet_partition, load_idx, make_blobs, make_blobs_split, Dataset, FederationSnapshot};
use crate::embedding::{task2vec_embed, TaskEmbedding};
use crate::error::{Error, Result};
use crate::fedsim::run_federation;
use crate::numcore::{stream_id, Rng};
use crate::probe::{
    backward, cross_entropy_loss, forward, init_probe, sgd_momentum_step, ProbeSpec, ProbeState,
};
use crate::readiness::{build_report, ReadinessReport};

const PRETEXT_DATA_STREAM: u64 = 0x93E7_0001;
const PRETEXT_INIT_STREAM: u64 = 0x93E7_0002;
const PRETEXT_SGD_STREAM: u64 = 0x93E7_0003;

const PRETEXT_PER_CLASS: usize = 64;
const PRETEXT_STEPS: usize = 200;
const PRETEXT_BATCH: usize = 32;
const PRETEXT_LR: f64 = 0.05;
const PRETEXT_MOMENTUM: f64 = 0.9;

/// Everything a cell needs that depends only on the seed: the data
/// split and the frozen feature extractor.
pub struct SeedContext {
    pub seed: u64,
    pub pool: Dataset,
    pub test: Dataset,
    pub spec: ProbeSpec,
    pub extractor: ProbeState,
}

/// Trains the probe on a pretext blob population disjoint from the
/// experiment data (its own derived seed draws fresh class templates),
/// then freezes it as the shared feature extractor. The pretext noise
/// level `spread` should match the experiment data so the learned
/// features carry realistic within-class variability. With `pretrain`
/// off the freshly initialized probe is returned unchanged.
pub fn pretrain_extractor(
    spec: &ProbeSpec,
    pretrain: bool,
    spread: f64,
    seed: u64,
) -> Result<ProbeState> {
    let mut init_rng = Rng::new(seed, stream_id(&[PRETEXT_INIT_STREAM]));
    let mut state = init_probe(spec, &mut init_rng)?;
    if !pretrain {
        return Ok(state);
    }
    let data_seed = stream_id(&[PRETEXT_DATA_STREAM, seed]);
    let data = make_blobs(
        spec.head_classes,
        spec.input_channels,
        spec.input_side,
        PRETEXT_PER_CLASS,
        spread,
        data_seed,
    )?;
    let mut sgd_rng = Rng::new(seed, stream_id(&[PRETEXT_SGD_STREAM]));
    for _ in 0..PRETEXT_STEPS {
        let indices = sgd_rng.index_sample(data.len(), PRETEXT_BATCH);
        let batch = data.batch_of(&indices);
        let (logits, cache) = forward(spec, &state, &batch)?;
        let (_, dlogits) = cross_entropy_loss(&logits, &batch.labels)?;
        let grad = backward(spec, &state, &cache, &dlogits)?;
        sgd_momentum_step(&mut state, &grad, PRETEXT_LR, PRETEXT_MOMENTUM)?;
    }
    state.reset_momentum(spec);
    Ok(state)
}

fn build_data(config: &SweepConfig, seed: u64) -> Result<(Dataset, Dataset)> {
    match &config.dataset {
        DatasetSpec::Blobs { classes, channels, side, per_class, test_per_class, spread } => {
            make_blobs_split(*classes, *channels, *side, *per_class, *test_per_class, *spread, seed)
        }
        DatasetSpec::Idx { images, labels, test_images, test_labels } => {
            let mut pool = load_idx(images, labels)?;
            let mut test = load_idx(test_images, test_labels)?;
            if pool.channels != test.channels || pool.side != test.side {
                return Err(Error::Structural(format!(
                    "train images are {}x{}x{} but test images are {}x{}x{}",
                    pool.channels, pool.side, pool.side, test.channels, test.side, test.side
                )));
            }
            // The label spaces must agree; take the union so a class
            // absent from one half still gets a logit.
            let classes = pool.class_count.max(test.class_count);
            pool.class_count = classes;
            test.class_count = classes;
            Ok((pool, test))
        }
    }
}

/// Builds the per-seed state shared by that seed's cells. Blob data is
/// regenerated per seed so repetitions are independent end to end; IDX
/// data is fixed on disk, so only the partition and training vary.
pub fn seed_context(config: &SweepConfig, seed: u64) -> Result<SeedContext> {
    let (pool, test) = build_data(config, seed)?;
    let spec = ProbeSpec::desk_default(pool.channels, pool.side, pool.class_count);
    let pretext_spread = match &config.dataset {
        DatasetSpec::Blobs { spread, .. } => *spread,
        DatasetSpec::Idx { .. } => 1.0,
    };
    let extractor = pretrain_extractor(&spec, config.pretrain, pretext_spread, seed)?;
    Ok(SeedContext { seed, pool, test, spec, extractor })
}

/// One fully-prepared experiment cell: the partitioned federation plus
/// the frozen extractor used for embeddings.
pub struct CellSetup {
    pub spec: ProbeSpec,
    pub federation: FederationSnapshot,
    pub extractor: ProbeState,
}

/// Prepares the (K, alpha, seed) cell exactly as the sweep would, so a
/// standalone invocation reproduces the sweep row bit for bit.
pub fn prepare_cell(config: &SweepConfig, k: usize, alpha: f64, seed: u64) -> Result<CellSetup> {
    let ctx = seed_context(config, seed)?;
    setup_from_context(&ctx, config, k, alpha)
}

fn setup_from_context(
    ctx: &SeedContext,
    config: &SweepConfig,
    k: usize,
    alpha: f64,
) -> Result<CellSetup> {
    let federation = dirichlet_partition(
        ctx.pool.clone(),
        ctx.test.clone(),
        k,
        alpha,
        config.min_per_client,
        ctx.seed,
    )?;
    Ok(CellSetup { spec: ctx.spec.clone(), federation, extractor: ctx.extractor.clone() })
}

/// Embeds every client of the cell with the cell's seed.
pub fn embed_clients(setup: &CellSetup, config: &SweepConfig, seed: u64) -> Result<Vec<TaskEmbedding>> {
    let mut embed_cfg = config.embed.clone();
    embed_cfg.seed = seed;
    setup
        .federation
        .shards
        .iter()
        .map(|shard| {
            task2vec_embed(&setup.spec, &setup.extractor, &setup.federation.pool, shard, &embed_cfg)
        })
        .collect()
}

/// Runs one cell: readiness first (embeddings of the untrained-on
/// federation), then training for the ground-truth metric.
fn cell_outcome(
    ctx: &SeedContext,
    config: &SweepConfig,
    k: usize,
    alpha: f64,
) -> Result<(ReadinessReport, f64)> {
    let setup = setup_from_context(ctx, config, k, alpha)?;
    let embeddings = embed_clients(&setup, config, ctx.seed)?;
    let report = build_report(&setup.federation, &embeddings, &config.cdi)?;
    let mut fed_cfg = config.fed.clone();
    fed_cfg.seed = ctx.seed;
    let outcome = run_federation(&setup.federation, &setup.spec, &fed_cfg)?;
    Ok((report, outcome.final_metric_value))
}

fn run_cell(ctx: &SeedContext, config: &SweepConfig, k: usize, alpha: f64) -> SweepRow {
    let tag = config.dataset.tag();
    let start = Instant::now();
    match cell_outcome(ctx, config, k, alpha) {
        Ok((report, final_metric)) => SweepRow {
            dataset: tag.to_string(),
            k,
            alpha,
            seed: ctx.seed,
            cohesion: report.cohesion,
            neg_dispersion: report.neg_dispersion,
            density: report.density,
            cdi: report.cdi,
            avg_entropy: report.avg_entropy,
            final_metric,
            wall_time_s: start.elapsed().as_secs_f64(),
        },
        Err(e) => {
            log::warn!("cell K={k} alpha={alpha} seed={}: {e}", ctx.seed);
            SweepRow::failed(tag, k, alpha, ctx.seed, start.elapsed().as_secs_f64())
        }
    }
}

/// Runs the whole grid. Per-cell failures become NaN rows; failures to
/// build a seed's data or extractor abort the sweep, since every cell
/// of that seed would fail identically. Returns the rows in canonical
/// order, which is also the final on-disk order.
pub fn run_sweep(config: &SweepConfig) -> Result<Vec<SweepRow>> {
    config.validate()?;
    let mut contexts = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        if contexts.iter().any(|c: &SeedContext| c.seed == seed) {
            return Err(Error::Domain(format!("duplicate seed {seed} in sweep grid")));
        }
        contexts.push(seed_context(config, seed)?);
    }

    let file = fs::File::create(&config.out).map_err(|e| Error::io(&config.out, e))?;
    let sink = Mutex::new(file);
    {
        let mut file = sink.lock().expect("csv sink poisoned");
        writeln!(file, "{CSV_HEADER}").map_err(|e| Error::io(&config.out, e))?;
    }

    let mut cells = Vec::new();
    for ctx in &contexts {
        for &k in &config.clients {
            for &alpha in &config.alphas {
                cells.push((ctx, k, alpha));
            }
        }
    }

    let rows: Vec<SweepRow> = cells
        .par_iter()
        .map(|&(ctx, k, alpha)| {
            let row = run_cell(ctx, config, k, alpha);
            // Appended in completion order; the final rewrite sorts.
            if let Ok(line) = row_to_line(&row) {
                let mut file = sink.lock().expect("csv sink poisoned");
                if let Err(e) = writeln!(file, "{line}").and_then(|()| file.flush()) {
                    log::warn!("could not append row to {}: {e}", config.out.display());
                }
            }
            row
        })
        .collect();

    let mut rows = rows;
    sort_rows(&mut rows);
    write_csv(&rows, &config.out)?;
    Ok(rows)
}

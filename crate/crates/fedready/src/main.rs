//! Command-line front end: embed clients, print readiness reports,
//! train a federation, run full sweeps, and correlate results.

use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand};

use fedready::embedding::embeddings_to_csv;
use fedready::error::{Error, Result};
use fedready::fedsim::{run_federation, FinalMetric};
use fedready::harness::{
    correlate_report, embed_clients, parse_sweep_config, prepare_cell, read_csv, report_csv,
    report_text, run_sweep, write_csv, SweepConfig, SweepRow,
};
use fedready::readiness::{build_report, report_text as readiness_text};

#[derive(Parser)]
#[command(
    name = "fedready",
    version,
    about = "Federated dataset readiness: embeddings, readiness indices, FedAvg training, sweeps and correlation reports"
)]
struct Cli {
    /// Sweep config document; omitted fields use documented defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config's seed list with this single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output path (CSV for most subcommands).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Log filter: error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "warn")]
    log_level: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Embed every client of one federation cell and emit the vectors as CSV.
    Embed {
        /// Client count K (default: first entry of the config grid).
        #[arg(long)]
        clients: Option<usize>,
        /// Dirichlet concentration (default: first entry of the config grid).
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Print the readiness report for one federation cell.
    Readiness {
        #[arg(long)]
        clients: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Train one federation cell with federated averaging.
    Train {
        #[arg(long)]
        clients: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        /// Federated rounds T.
        #[arg(long)]
        rounds: Option<usize>,
        /// Local epochs per round E.
        #[arg(long)]
        epochs: Option<usize>,
        /// Local minibatch size B.
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        momentum: Option<f64>,
        /// Fraction of clients evaluated each round.
        #[arg(long)]
        frac_eval: Option<f64>,
        /// Final metric: top1 or macro_auc.
        #[arg(long)]
        metric: Option<FinalMetric>,
    },
    /// Run the full (K, alpha, seed) sweep from the config.
    Sweep,
    /// Correlate readiness columns against the final metric in a sweep CSV.
    Correlate {
        /// Sweep results CSV produced by `sweep`.
        input: PathBuf,
        /// Correlate per-row points instead of per-alpha seed means.
        #[arg(long)]
        no_seed_average: bool,
    },
}

fn load_config(cli: &Cli) -> Result<SweepConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_sweep_config(&text)?
        }
        None => SweepConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

/// The cell a single-cell subcommand addresses: CLI flags override the
/// first grid entries of the config.
fn cell_coords(cfg: &SweepConfig, clients: Option<usize>, alpha: Option<f64>) -> (usize, f64, u64) {
    let k = clients.unwrap_or(cfg.clients[0]);
    let alpha = alpha.unwrap_or(cfg.alphas[0]);
    let seed = cfg.seeds[0];
    (k, alpha, seed)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    cfg.validate()?;

    match cli.command {
        Command::Embed { clients, alpha } => {
            let (k, alpha, seed) = cell_coords(&cfg, clients, alpha);
            let setup = prepare_cell(&cfg, k, alpha, seed)?;
            let embeddings = embed_clients(&setup, &cfg, seed)?;
            let csv = embeddings_to_csv(&embeddings);
            match &cli.out {
                Some(path) => {
                    fs::write(path, csv).map_err(|e| Error::io(path, e))?;
                    println!("wrote {} embeddings to {}", embeddings.len(), path.display());
                }
                None => print!("{csv}"),
            }
        }
        Command::Readiness { clients, alpha } => {
            let (k, alpha, seed) = cell_coords(&cfg, clients, alpha);
            let start = Instant::now();
            let setup = prepare_cell(&cfg, k, alpha, seed)?;
            let embeddings = embed_clients(&setup, &cfg, seed)?;
            let report = build_report(&setup.federation, &embeddings, &cfg.cdi)?;
            println!("{}", readiness_text(&report));
            if let Some(path) = &cli.out {
                let row = SweepRow {
                    dataset: cfg.dataset.tag().to_string(),
                    k,
                    alpha,
                    seed,
                    cohesion: report.cohesion,
                    neg_dispersion: report.neg_dispersion,
                    density: report.density,
                    cdi: report.cdi,
                    avg_entropy: report.avg_entropy,
                    final_metric: f64::NAN,
                    wall_time_s: start.elapsed().as_secs_f64(),
                };
                write_csv(&[row], path)?;
                println!("wrote readiness row to {}", path.display());
            }
        }
        Command::Train { clients, alpha, rounds, epochs, batch, lr, momentum, frac_eval, metric } => {
            let (k, alpha, seed) = cell_coords(&cfg, clients, alpha);
            let mut fed = cfg.fed.clone();
            fed.seed = seed;
            if let Some(v) = rounds {
                fed.rounds = v;
            }
            if let Some(v) = epochs {
                fed.local_epochs = v;
            }
            if let Some(v) = batch {
                fed.batch_size = v;
            }
            if let Some(v) = lr {
                fed.lr = v;
            }
            if let Some(v) = momentum {
                fed.momentum = v;
            }
            if let Some(v) = frac_eval {
                fed.fraction_evaluate = v;
            }
            if let Some(v) = metric {
                fed.final_metric = v;
            }
            let setup = prepare_cell(&cfg, k, alpha, seed)?;
            let outcome = run_federation(&setup.federation, &setup.spec, &fed)?;
            for log in &outcome.round_logs {
                println!(
                    "round {:>3}: sampled-eval top1 = {:.4} ({} fit clients)",
                    log.round,
                    log.eval_metric,
                    log.fit_clients.len()
                );
            }
            println!(
                "final {} = {:.6} (K={k}, alpha={alpha}, seed={seed}, {:.1}s)",
                fed.final_metric, outcome.final_metric_value, outcome.wall_time_s
            );
            if let Some(path) = &cli.out {
                let mut text = String::from("round,eval_metric,fit_clients\n");
                for log in &outcome.round_logs {
                    text.push_str(&format!(
                        "{},{:.16e},{}\n",
                        log.round,
                        log.eval_metric,
                        log.fit_clients.len()
                    ));
                }
                fs::write(path, text).map_err(|e| Error::io(path, e))?;
                println!("wrote round log to {}", path.display());
            }
        }
        Command::Sweep => {
            let rows = run_sweep(&cfg)?;
            let failed = rows.iter().filter(|r| !r.is_complete()).count();
            println!(
                "wrote {} rows to {} ({} failed cells)",
                rows.len(),
                cfg.out.display(),
                failed
            );
        }
        Command::Correlate { input, no_seed_average } => {
            let rows = read_csv(&input)?;
            let outcomes = correlate_report(&rows, !no_seed_average)?;
            print!("{}", report_text(&outcomes));
            if let Some(path) = &cli.out {
                fs::write(path, report_csv(&outcomes)).map_err(|e| Error::io(path, e))?;
                println!("wrote correlation report to {}", path.display());
            }
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log_level).init();
    if let Some(workers) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

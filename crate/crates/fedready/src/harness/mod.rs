//! Experiment harness: sweep configuration, execution over a
//! (K, alpha, seed) grid, result persistence, and the correlation
//! report between readiness indices and final federated performance.

pub mod config;
pub mod csv;
pub mod report;
pub mod sweep;

pub use config::{parse_sweep_config, serialize_sweep_config, DatasetSpec, SweepConfig};
pub use csv::{read_csv, sort_rows, write_csv, SweepRow, CSV_HEADER};
pub use report::{correlate_report, report_csv, report_text, CorrOutcome, GroupOutcome, GroupReport, MetricReport};
pub use sweep::{embed_clients, prepare_cell, run_sweep, seed_context, CellSetup, SeedContext};

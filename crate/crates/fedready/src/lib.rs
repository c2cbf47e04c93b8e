//! Readiness diagnostics for federated learning.
//!
//! Before spending rounds of federated training on a cohort of clients,
//! it is useful to know whether their local datasets are similar enough
//! for the run to go anywhere. This crate embeds each client's data into
//! a common vector space (diagonal Fisher information of a frozen probe
//! network), summarizes the cloud of embeddings into readiness indices
//! (cohesion, dispersion, density, a combined index, label entropy),
//! trains the federation with FedAvg to get ground truth, and tests how
//! well the indices predicted the outcome.
//!
//! Everything is deterministic given a seed: the PRNG is an explicit
//! per-purpose stream generator, training fans out over clients without
//! sharing state, and sweep results are written in a canonical order.

pub mod datasets;
pub mod embedding;
pub mod error;
pub mod fedsim;
pub mod harness;
pub mod numcore;
pub mod probe;
pub mod readiness;
pub mod stats;

pub use error::{Error, Result};

//! Self-contained numeric kernel: deterministic PRNG with addressable
//! streams, the special functions behind the significance tests, and
//! gamma/Dirichlet sampling. Everything downstream draws randomness and
//! statistics from here, which is what makes runs bit-reproducible.

pub mod accum;
pub mod rng;
pub mod sampling;
pub mod special;

pub use accum::KahanSum;
pub use rng::{stream_id, Rng};
pub use sampling::{dirichlet_sample, gamma_sample, SimplexVector};
pub use special::{log_gamma, reg_inc_beta, student_t_two_sided_p};

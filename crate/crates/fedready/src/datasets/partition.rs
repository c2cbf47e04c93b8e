//! Dirichlet non-IID partitioning: each class's samples are spread over
//! clients according to a Dirichlet(alpha, ..., alpha) draw, so small
//! alpha concentrates classes on few clients and large alpha approaches
//! a uniform split.

use super::{ClientShard, Dataset, FederationSnapshot};
use crate::error::{Error, Result};
use crate::numcore::{dirichlet_sample, stream_id, Rng};

const SHUFFLE_STREAM: u64 = 0x9A17_0001;
const PROPORTION_STREAM: u64 = 0x9A17_0002;

/// Rounds fractional per-client targets to integer counts summing to
/// `total` by the largest-remainder method (ties to the lower client id).
fn largest_remainder_counts(proportions: &[f64], total: usize) -> Vec<usize> {
    let k = proportions.len();
    let mut counts = vec![0usize; k];
    let mut remainders: Vec<(usize, f64)> = Vec::with_capacity(k);
    let mut assigned = 0usize;
    for (i, &p) in proportions.iter().enumerate() {
        let target = p * total as f64;
        let base = target.floor() as usize;
        counts[i] = base;
        assigned += base;
        remainders.push((i, target - base as f64));
    }
    // Stable sort by descending remainder keeps ties in client-id order.
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    for (i, _) in remainders.iter().take(total - assigned) {
        counts[*i] += 1;
    }
    counts
}

/// Splits `pool` into K disjoint, exhaustive shards and packages them
/// with the (never partitioned) `test_set`. Clients ending below
/// `min_per_client` are topped up by stealing single samples from the
/// largest shard, deterministically.
pub fn dirichlet_partition(
    pool: Dataset,
    test_set: Dataset,
    k: usize,
    alpha: f64,
    min_per_client: usize,
    seed: u64,
) -> Result<FederationSnapshot> {
    if k < 2 {
        return Err(Error::Domain(format!("partition needs K >= 2 clients, got {k}")));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::Domain(format!("alpha must be finite and > 0, got {alpha}")));
    }
    pool.validate()?;
    test_set.validate()?;
    if pool.channels != test_set.channels || pool.side != test_set.side {
        return Err(Error::Structural(format!(
            "test set shape {}x{}x{} does not match pool {}x{}x{}",
            test_set.channels, test_set.side, test_set.side,
            pool.channels, pool.side, pool.side
        )));
    }
    if test_set.class_count != pool.class_count {
        return Err(Error::Structural(format!(
            "test set has {} classes, pool has {}",
            test_set.class_count, pool.class_count
        )));
    }
    if pool.len() < k * min_per_client {
        return Err(Error::Domain(format!(
            "pool of {} samples cannot give {k} clients {min_per_client} samples each",
            pool.len()
        )));
    }

    let mut assignments: Vec<Vec<usize>> = vec![Vec::new(); k];
    let concentrations = vec![alpha; k];
    for class in 0..pool.class_count {
        let mut members: Vec<usize> = (0..pool.len())
            .filter(|&i| pool.labels[i] == class)
            .collect();
        if members.is_empty() {
            continue;
        }
        let mut shuffle_rng = Rng::new(seed, stream_id(&[SHUFFLE_STREAM, class as u64]));
        shuffle_rng.shuffle(&mut members);
        let mut prop_rng = Rng::new(seed, stream_id(&[PROPORTION_STREAM, class as u64]));
        let proportions = dirichlet_sample(&concentrations, &mut prop_rng)?;
        let counts = largest_remainder_counts(proportions.as_slice(), members.len());
        let mut cursor = 0usize;
        for (client, &count) in counts.iter().enumerate() {
            assignments[client].extend_from_slice(&members[cursor..cursor + count]);
            cursor += count;
        }
    }

    // Deterministic top-up: move the last-assigned sample of the current
    // largest shard to the current smallest, until the floor holds.
    // Feasibility was checked above, so a strictly-larger donor exists.
    loop {
        let (recipient, recipient_len) = assignments
            .iter()
            .enumerate()
            .map(|(i, a)| (i, a.len()))
            .min_by_key(|&(i, len)| (len, i))
            .expect("k >= 2");
        if recipient_len >= min_per_client {
            break;
        }
        let (donor, _) = assignments
            .iter()
            .enumerate()
            .map(|(i, a)| (i, a.len()))
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
            .expect("k >= 2");
        let moved = assignments[donor].pop().expect("donor larger than floor");
        assignments[recipient].push(moved);
    }

    let shards: Vec<ClientShard> = assignments
        .into_iter()
        .enumerate()
        .map(|(client_id, mut indices)| {
            indices.sort_unstable();
            ClientShard { client_id, indices }
        })
        .collect();

    let snapshot = FederationSnapshot { pool, shards, test_set, alpha };
    snapshot.validate()?;
    Ok(snapshot)
}

//! Deterministic pseudo-random number generation.
//!
//! Every stochastic step in the crate draws from [`Rng`], a PCG-XSH-RR
//! 64/32 generator. Independent streams are addressed by a `stream_id`,
//! so concurrent work (per-client training, per-cell sweeps) never shares
//! generator state and results are independent of scheduling order.

/// PCG-XSH-RR 64/32: 64-bit LCG state, 32-bit xorshift+rotate output.
#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
    inc: u64,
    stream_id: u64,
}

const PCG_MULT: u64 = 6364136223846793005;

impl Rng {
    /// Creates a generator seeded with `seed` on stream `stream_id`.
    /// Distinct stream ids yield statistically independent sequences for
    /// the same seed.
    pub fn new(seed: u64, stream_id: u64) -> Rng {
        let mut rng = Rng {
            state: 0,
            inc: (stream_id << 1) | 1,
            stream_id,
        };
        rng.next_u32();
        rng.state = rng.state.wrapping_add(seed);
        rng.next_u32();
        rng
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn next_u32(&mut self) -> u32 {
        let old = self.state;
        self.state = old.wrapping_mul(PCG_MULT).wrapping_add(self.inc);
        let xorshifted = (((old >> 18) ^ old) >> 27) as u32;
        let rot = (old >> 59) as u32;
        xorshifted.rotate_right(rot)
    }

    pub fn next_u64(&mut self) -> u64 {
        let hi = self.next_u32() as u64;
        let lo = self.next_u32() as u64;
        (hi << 32) | lo
    }

    /// Uniform draw in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in (0, 1); redraws the (rare) exact zero.
    pub fn next_f64_open(&mut self) -> f64 {
        loop {
            let v = self.next_f64();
            if v > 0.0 {
                return v;
            }
        }
    }

    /// Unbiased uniform integer in [0, n). Panics if n == 0.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below() requires n > 0");
        // Largest multiple of n representable; rejection keeps the draw exact.
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }

    /// Standard normal via Box-Muller. One value per call; the paired
    /// value is discarded so the state advance per call is fixed.
    pub fn normal(&mut self) -> f64 {
        let u1 = self.next_f64_open();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    /// Draws `k` distinct indices from [0, n), returned in ascending order.
    /// Returns all of [0, n) when k >= n.
    pub fn index_sample(&mut self, n: usize, k: usize) -> Vec<usize> {
        if k >= n {
            return (0..n).collect();
        }
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below((n - i) as u64) as usize;
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool.sort_unstable();
        pool
    }
}

/// Folds a label path into a single stream id (FNV-1a over the words).
/// Callers address streams as e.g. `stream_id(&[LOCAL_TRAIN, round, client])`
/// so that every (purpose, round, client) triple gets its own sequence.
pub fn stream_id(parts: &[u64]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for part in parts {
        for byte in part.to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}

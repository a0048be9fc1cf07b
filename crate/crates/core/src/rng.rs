//! Counter-based deterministic random numbers.
//!
//! Every random quantity in the crate is a pure function of
//! `(seed, stream, index, counter)`. There is no mutable generator state, so
//! the value drawn at step t never depends on how many draws happened
//! before it; checkpoint cadence, parallelism, and evaluation order cannot
//! perturb a training run.
//!
//! The construction is the splitmix64 finalizer applied to a chained key.

/// Named sub-streams so independent consumers of the same seed never collide.
pub mod stream {
    pub const INIT: u64 = 0xA1;
    pub const SAMPLE: u64 = 0xA2;
    pub const GUMBEL: u64 = 0xA3;
    pub const BERNOULLI: u64 = 0xA4;
    pub const SUBSET: u64 = 0xA5;
    pub const DATA: u64 = 0xA6;
    pub const SPLIT: u64 = 0xA7;
    pub const PROBE: u64 = 0xA8;
    pub const ITER: u64 = 0xA9;
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A keyed counter generator: `at(c)` is a pure function of the key and `c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterRng {
    key: u64,
}

impl CounterRng {
    /// Derive a generator for `(seed, stream, index)`.
    ///
    /// `index` distinguishes repeated uses of the same stream (a training
    /// step, a Monte Carlo sample, an optimizer iteration, ...).
    pub fn new(seed: u64, stream: u64, index: u64) -> Self {
        let k = mix64(seed.wrapping_add(GOLDEN));
        let k = mix64(k ^ mix64(stream.wrapping_add(GOLDEN)));
        let k = mix64(k ^ mix64(index.wrapping_add(GOLDEN)));
        CounterRng { key: k }
    }

    #[inline]
    pub fn at(&self, counter: u64) -> u64 {
        mix64(self.key ^ counter.wrapping_mul(GOLDEN).wrapping_add(GOLDEN))
    }

    /// Uniform draw on the *open* interval (0, 1).
    ///
    /// Uses the high 52 bits as `(r + 0.5) / 2^52`, which is exactly
    /// representable and bounded away from both endpoints
    /// (min 2^-53, max 1 - 2^-53), so `log(u)` and `log(-log(u))` are
    /// always finite.
    #[inline]
    pub fn open01(&self, counter: u64) -> f64 {
        const SCALE: f64 = 1.0 / 4_503_599_627_370_496.0; // 2^-52
        ((self.at(counter) >> 12) as f64 + 0.5) * SCALE
    }

    /// Uniform draw in [low, high).
    #[inline]
    pub fn uniform(&self, counter: u64, low: f64, high: f64) -> f64 {
        low + (high - low) * self.open01(counter)
    }

    /// Uniform integer in [0, n). Multiply-shift reduction.
    #[inline]
    pub fn below(&self, counter: u64, n: usize) -> usize {
        debug_assert!(n > 0);
        (((self.at(counter) as u128) * (n as u128)) >> 64) as usize
    }

    /// Standard normal via Box-Muller; consumes counters 2c and 2c+1.
    pub fn gaussian(&self, counter: u64) -> f64 {
        let u1 = self.open01(2 * counter);
        let u2 = self.open01(2 * counter + 1);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// Fisher-Yates shuffle of `0..n` driven by a counter generator.
pub fn shuffled_indices(rng: &CounterRng, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..n.saturating_sub(1) {
        let j = i + rng.below(i as u64, n - i);
        idx.swap(i, j);
    }
    idx
}

//! Seeded random-number generation with splittable child streams.
//!
//! Everything stochastic in this crate — sampling continuations, shuffling
//! batches, synthesizing datasets — draws from [`Rng`]. A run is reproducible
//! because every consumer derives its stream from one root seed, and
//! independent consumers use *child* streams rather than sharing one
//! sequential stream. Child streams are keyed by integer tags, so e.g. the
//! i-th synthetic draw of outer iteration t can use `rng.child(t).child(i)`
//! and stay byte-stable no matter how work is ordered or parallelized.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// SplitMix64 finalizer; decorrelates child seeds derived from (seed, tag).
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic generator with cheap, independent child streams.
///
/// Two `Rng`s built from the same seed produce identical draw sequences;
/// children with distinct tags are statistically independent of each other
/// and of the parent. Cloning captures the current stream state.
#[derive(Debug, Clone)]
pub struct Rng {
    /// Seed this stream was spawned from; children derive from it, not from
    /// the evolving stream state, so spawning never perturbs the parent.
    seed: u64,
    inner: ChaCha12Rng,
}

impl Rng {
    /// Root stream for `seed`.
    pub fn seed(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha12Rng::seed_from_u64(seed),
        }
    }

    /// Independent child stream keyed by `tag`. Pure in the parent: calling
    /// this any number of times, in any order, does not advance the parent.
    pub fn child(&self, tag: u64) -> Self {
        Rng::seed(mix64(self.seed ^ mix64(tag.wrapping_add(1))))
    }

    /// Uniform draw from [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    /// Uniform draw from [0, n). Panics if `n == 0`.
    pub fn next_index(&mut self, n: usize) -> usize {
        assert!(n > 0, "next_index requires a non-empty range");
        self.inner.gen_range(0..n)
    }

    /// Fisher-Yates shuffle, driven by this stream.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.inner.gen_range(0..=i);
            items.swap(i, j);
        }
    }

    /// Index draw from an explicit probability vector (inverse CDF in index
    /// order). `probs` must be non-negative and sum to ~1; any residual mass
    /// from rounding goes to the last index.
    pub fn categorical(&mut self, probs: &[f64]) -> usize {
        assert!(!probs.is_empty(), "categorical requires a non-empty support");
        let u = self.next_f64();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        probs.len() - 1
    }
}

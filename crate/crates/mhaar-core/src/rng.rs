//! Splittable random streams for reproducible parallel sampling.
//!
//! Every stream is addressed by a 64-bit key. Child keys are derived by
//! hashing the parent key with an index, so the key of a stream depends only
//! on its path from the master seed (for example master seed, run, step,
//! replicate) and never on which thread consumes it.
//!
//! Key derivation: `child(k, i) = mix(k * 0x9E3779B97F4A7C15 ^ mix(i ^ 0xD1B54A32D192ED03))`
//! where `mix` is the SplitMix64 finaliser. A key is turned into a generator
//! with `ChaCha8Rng::seed_from_u64(key)`.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// SplitMix64 output finaliser.
pub fn mix(mut x: u64) -> u64 {
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Address of a random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey(pub u64);

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        StreamKey(seed)
    }

    /// Key of the `index`-th child stream.
    pub fn child(self, index: u64) -> Self {
        StreamKey(mix(self.0.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ mix(index ^ 0xD1B5_4A32_D192_ED03)))
    }

    pub fn rng(self) -> McRng {
        McRng::from_key(self)
    }
}

/// Generator bound to a stream key.
///
/// `split` hands out fresh child keys in call order, which is how kernels
/// obtain replicate-indexed substreams for parallel maps.
#[derive(Clone, Debug)]
pub struct McRng {
    key: StreamKey,
    splits: u64,
    inner: ChaCha8Rng,
}

impl McRng {
    pub fn from_key(key: StreamKey) -> Self {
        McRng { key, splits: 0, inner: ChaCha8Rng::seed_from_u64(key.0) }
    }

    pub fn seeded(seed: u64) -> Self {
        Self::from_key(StreamKey::new(seed))
    }

    pub fn key(&self) -> StreamKey {
        self.key
    }

    /// Fresh key for a family of substreams; children of the returned key
    /// are indexed by replicate.
    pub fn split(&mut self) -> StreamKey {
        self.splits += 1;
        self.key.child(u64::MAX - self.splits)
    }

    /// Uniform draw on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }
}

impl RngCore for McRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Map `f` over `0..n`, in parallel when `parallel` is set. The output order
/// and values do not depend on the number of worker threads as long as `f`
/// draws only from streams addressed by its index.
pub fn indexed_map<T, F>(n: usize, parallel: bool, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if parallel && n > 1 {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

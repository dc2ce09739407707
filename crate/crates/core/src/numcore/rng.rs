use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Seeded, platform-independent random stream.
///
/// All randomness in the crate flows through this type. Independent streams
/// for sub-tasks are obtained with [`Rng::derive`], which hashes the parent
/// seed together with a path of integers, so parallel consumers never share
/// state.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

/// SplitMix64 finalizer, used to mix seeds with stream identifiers.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn seeded_rng(seed: u64) -> Rng {
    Rng::new(seed)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream identified by `path` under `seed`.
    pub fn derive(seed: u64, path: &[u64]) -> Self {
        let s = path.iter().fold(mix(seed), |acc, &p| mix(acc ^ mix(p)));
        Self::new(s)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform on `[0, 1)`.
    pub fn draw_uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform on `[lo, hi)`.
    pub fn draw_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.draw_uniform()
    }

    pub fn draw_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in `0..n`.
    pub fn draw_index(&mut self, n: usize) -> usize {
        assert!(n > 0, "draw_index on empty range");
        self.inner.random_range(0..n as u64) as usize
    }

    /// In-place Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.draw_index(i + 1);
            items.swap(i, j);
        }
    }

    /// `m` distinct indices from `0..n`, in draw order (partial Fisher–Yates).
    pub fn choose_without_replacement(&mut self, n: usize, m: usize) -> Result<Vec<usize>> {
        if m > n {
            return Err(Error::invalid(format!(
                "cannot choose {m} distinct items from {n}"
            )));
        }
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..m {
            let j = i + self.draw_index(n - i);
            pool.swap(i, j);
        }
        pool.truncate(m);
        Ok(pool)
    }
}

//! Deterministic, splittable random streams keyed by trajectory identity so
//! results are bit-reproducible regardless of worker count.
//!
//! Stream derivation hashes the key into a ChaCha8 seed; creating a stream is
//! O(1) and streams for distinct keys are statistically independent.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::Vec2;

/// Identity of a random stream. Distinct keys yield independent streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub path_id: u64,
    pub nest_level: u8,
    pub nest_id: u64,
}

impl StreamKey {
    pub fn trajectory(seed: u64, path_id: u64) -> Self {
        StreamKey { seed, path_id, nest_level: 0, nest_id: 0 }
    }

    /// Key of the `nest_id`-th nested sub-walk of this trajectory.
    pub fn nested(&self, nest_id: u64) -> Self {
        StreamKey {
            seed: self.seed,
            path_id: self.path_id,
            nest_level: self.nest_level + 1,
            nest_id,
        }
    }
}

// splitmix64 finalizer; a bijective mixer with good avalanche.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// An owned random stream.
pub struct Stream(ChaCha8Rng);

/// Derive the stream for a key. Pure function of the key.
pub fn derive(key: StreamKey) -> Stream {
    let mut state = mix(key.seed ^ 0xa076_1d64_78bd_642f);
    let mut seed = [0u8; 32];
    for (i, word) in [key.path_id, key.nest_level as u64, key.nest_id, 0x5851_f42d_4c95_7f2d]
        .iter()
        .enumerate()
    {
        state = mix(state ^ word.wrapping_mul(i as u64 + 1));
        seed[i * 8..(i + 1) * 8].copy_from_slice(&state.to_le_bytes());
    }
    Stream(ChaCha8Rng::from_seed(seed))
}

impl Stream {
    /// Standard uniform draw in [0, 1).
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.0.gen::<f64>()
    }

    /// Uniform draw in [lo, hi).
    #[inline]
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Unit vector with angle uniform on [0, 2pi).
    #[inline]
    pub fn isotropic_unit_vector(&mut self) -> Vec2 {
        let angle = self.uniform() * std::f64::consts::TAU;
        let (s, c) = angle.sin_cos();
        Vec2::new(c, s)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }
}

//! Counter-based random streams.
//!
//! Every random quantity is drawn from a ChaCha8 stream addressed by a
//! [`StreamKey`]. Keys form a tree: `key.child(i)` is a fresh, independent
//! address derived by hashing, so nested estimators can hand each outer sample
//! its own subtree without any shared mutable state. Two evaluations using the
//! same key see the same numbers (common random numbers).

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rand_distr::{Distribution, Exp1, StandardNormal};

pub type Stream = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StreamKey(pub u64);

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl StreamKey {
    /// Root key for `(master_seed, experiment_id)`.
    pub fn root(master_seed: u64, experiment: u64) -> Self {
        StreamKey(splitmix64(splitmix64(master_seed) ^ experiment.rotate_left(17)))
    }

    pub fn child(self, index: u64) -> Self {
        StreamKey(splitmix64(self.0 ^ splitmix64(index.wrapping_add(0x632b_e59b_d9b4_e019))))
    }

    /// Opens the ChaCha8 stream for this key.
    pub fn stream(self) -> Stream {
        let mut seed = [0u8; 32];
        let mut s = self.0;
        for chunk in seed.chunks_exact_mut(8) {
            s = splitmix64(s);
            chunk.copy_from_slice(&s.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}

#[inline]
pub fn normal(rng: &mut Stream) -> f64 {
    StandardNormal.sample(rng)
}

/// Exponential variate with the given rate.
#[inline]
pub fn exponential(rng: &mut Stream, rate: f64) -> f64 {
    let e: f64 = Exp1.sample(rng);
    e / rate
}

#[inline]
pub fn uniform(rng: &mut Stream) -> f64 {
    // 53 random mantissa bits in [0, 1)
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_key_same_numbers() {
        let k = StreamKey::root(7, 3).child(11);
        let a: [f64; 4] = {
            let mut r = k.stream();
            [normal(&mut r), normal(&mut r), uniform(&mut r), exponential(&mut r, 2.0)]
        };
        let b: [f64; 4] = {
            let mut r = k.stream();
            [normal(&mut r), normal(&mut r), uniform(&mut r), exponential(&mut r, 2.0)]
        };
        assert_eq!(a.map(f64::to_bits), b.map(f64::to_bits));
    }

    #[test]
    fn children_are_distinct() {
        let root = StreamKey::root(1, 0);
        let mut keys: std::vec::Vec<u64> = (0..10_000).map(|i| root.child(i).0).collect();
        keys.sort_unstable();
        keys.dedup();
        assert_eq!(keys.len(), 10_000);
        assert_ne!(root.child(0).child(1), root.child(1).child(0));
    }
}

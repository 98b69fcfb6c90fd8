//! Counter-indexed Gaussian streams.
//!
//! Every draw is addressed by `(seed, path, step)` plus its position within
//! the step, so any increment can be regenerated without replaying the
//! sequence before it. The key of a ChaCha8 generator is derived from
//! `(seed, path)` and the ChaCha stream id is the step index.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Coordinates of one block of draws.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamCoords {
    pub seed: u64,
    pub path: u64,
    pub step: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl StreamCoords {
    pub fn new(seed: u64, path: u64, step: u64) -> Self {
        StreamCoords { seed, path, step }
    }

    fn generator(&self) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        let a = splitmix(self.seed);
        let b = splitmix(a ^ self.path.wrapping_mul(0xD605_BBB5_8C8A_BB6D));
        for (chunk, word) in key.chunks_mut(8).zip([a, b, splitmix(b), splitmix(a ^ b)]) {
            chunk.copy_from_slice(&word.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.step);
        rng
    }

    /// `count` independent standard normal draws for these coordinates.
    pub fn standard_normals(&self, count: usize) -> Vec<f64> {
        let mut rng = self.generator();
        (0..count)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect()
    }
}

/// Seeded generator for non-increment randomness (probes, synthetic fields).
pub fn auxiliary_rng(seed: u64, purpose: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(purpose)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproducible_and_distinct() {
        let a = StreamCoords::new(1, 2, 3).standard_normals(8);
        let b = StreamCoords::new(1, 2, 3).standard_normals(8);
        assert_eq!(a, b);
        assert_ne!(a, StreamCoords::new(1, 2, 4).standard_normals(8));
        assert_ne!(a, StreamCoords::new(1, 3, 3).standard_normals(8));
        assert_ne!(a, StreamCoords::new(2, 2, 3).standard_normals(8));
        // prefix-stable: asking for more draws does not change earlier ones
        assert_eq!(
            &StreamCoords::new(1, 2, 3).standard_normals(16)[..8],
            &a[..]
        );
    }
}

//! Reproducible random streams.
//!
//! Every sampler receives an explicit stream. Independent streams are derived
//! from `(seed, grid index, purpose)` by hashing the triple into a ChaCha8 key and
//! using the replicate index as the ChaCha stream id, so the output of a batch
//! does not depend on how replicates are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The random generator used everywhere in the crate.
pub type StreamRng = ChaCha8Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A family of independent streams indexed by replicate number.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Streams {
    pub seed: u64,
    pub grid_index: u64,
    pub purpose: u64,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Streams {
            seed,
            grid_index: 0,
            purpose: 0,
        }
    }

    /// Streams for one point of a scaling grid.
    pub fn grid(self, grid_index: u64) -> Self {
        Streams { grid_index, ..self }
    }

    /// Streams for a distinct use (e.g. the Gaussian control of a witness test).
    pub fn purpose(self, purpose: u64) -> Self {
        Streams { purpose, ..self }
    }

    /// A sub-family of the current purpose, for operations that need several
    /// independent stream families; `Streams::new(s).sub(k)` is `purpose(k + 1)`.
    pub fn sub(self, k: u64) -> Self {
        let purpose = self.purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k + 1);
        Streams { purpose, ..self }
    }

    /// The generator of replicate `replicate`.
    pub fn stream(&self, replicate: u64) -> StreamRng {
        let mut state = self.seed;
        let mut key = [0u8; 32];
        let mut mix = splitmix64(&mut state) ^ self.grid_index.wrapping_mul(0xD6E8_FEB8_6659_FD93);
        mix ^= self.purpose.wrapping_mul(0xA076_1D64_78BD_642F);
        let mut s2 = mix;
        for chunk in key.chunks_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut s2).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(replicate);
        rng
    }
}

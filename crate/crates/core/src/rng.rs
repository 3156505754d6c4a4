//! Keyed random streams.
//!
//! Every random quantity in a simulation is drawn from a stream addressed by a
//! path of integers (master seed, grid point, trial, purpose, user, ...). The
//! path is hashed into a ChaCha key, so the numbers a trial sees do not depend
//! on which thread runs it or in what order trials are scheduled.

use nalgebra::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Stream tags used by the simulator. Kept in one place so two subsystems never
/// collide on the same key path.
pub mod tag {
    pub const CHANNEL: u64 = 0x11;
    pub const TRAINING_NOISE: u64 = 0x22;
    pub const PHASES: u64 = 0x33;
    pub const UNITARY: u64 = 0x44;
    pub const OPTIMIZER: u64 = 0x55;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A node in the stream tree. Cheap to copy; deriving a child never consumes
/// randomness from the parent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Stream {
    key: u64,
}

impl Stream {
    pub fn new(master_seed: u64) -> Self {
        Stream {
            key: splitmix64(master_seed ^ 0x5EED_0F_1125_u64),
        }
    }

    pub fn child(self, index: u64) -> Self {
        Stream {
            key: splitmix64(self.key ^ splitmix64(index.wrapping_add(0xA5A5_5A5A))),
        }
    }

    /// Shorthand for a chain of `child` calls.
    pub fn path(self, indices: &[u64]) -> Self {
        indices.iter().fold(self, |s, &i| s.child(i))
    }

    pub fn rng(self) -> ChaCha8Rng {
        let mut seed = [0u8; 32];
        let mut state = self.key;
        for chunk in seed.chunks_exact_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}

/// One draw of CN(0, variance): independent real and imaginary parts, each
/// N(0, variance / 2).
#[inline]
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex<f64> {
    let sd = (0.5 * variance).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex::new(sd * re, sd * im)
}

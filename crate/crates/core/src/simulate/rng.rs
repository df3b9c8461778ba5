//! Seeded random streams.
//!
//! Every random matrix is drawn from a ChaCha8 generator keyed by the run
//! seed and a role tag; each row or column gets its own stream number, so
//! any subset can be regenerated independently and parallel fills are
//! reproducible bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum Role {
    Data = 1,
    Weights = 2,
    Bias = 3,
    Theta1 = 4,
    Theta2 = 5,
    Signal = 6,
    Noise = 7,
    TestData = 8,
    Teacher = 9,
}

/// Generator for `(seed, role)`, positioned on stream `index`.
pub fn stream(seed: u64, role: Role, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..12].copy_from_slice(&(role as u32).to_le_bytes());
    key[12..16].copy_from_slice(b"rfmx");
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// Fills `out` with iid `N(0, scale^2)` draws from one stream.
pub fn fill_normal(rng: &mut ChaCha8Rng, out: &mut [f64], scale: f64) {
    for v in out {
        let g: f64 = StandardNormal.sample(rng);
        *v = scale * g;
    }
}

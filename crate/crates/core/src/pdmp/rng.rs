//! Per-path random streams.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Route tags keep the streams of different estimators disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    Path = 1,
    FeynmanKac = 2,
    Excursion = 3,
    Occupation = 4,
    Tilted = 5,
    Weighted = 6,
    Exit = 7,
}

fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Random stream of one path, a pure function of `(seed, route, path)`.
pub struct PathRng(ChaCha8Rng);

impl PathRng {
    pub fn new(seed: u64, route: Route, path: u64) -> Self {
        let mut state = seed ^ (route as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93);
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix(&mut state).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(path);
        Self(rng)
    }

    /// Uniform on the open interval `(0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        ((self.0.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Exponential waiting time with the given rate.
    pub fn exponential(&mut self, rate: f64) -> f64 {
        -self.uniform().ln() / rate
    }
}

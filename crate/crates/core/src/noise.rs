//! Reproducible per-trajectory noise.
//!
//! Each trajectory owns one ChaCha8 stream keyed by `(master_seed, index)`:
//! the seed fixes the key and the trajectory index selects the stream, so
//! trajectories are independent and can be regenerated in isolation.
//! Gaussians come from the `rand_distr` ziggurat sampler. Both choices are
//! part of the reproducibility contract; changing either changes outputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Wiener increments over one step, each with variance `dt`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseIncrement {
    pub dw_x: f64,
    pub dw_y: f64,
    pub dw_z: f64,
}

impl NoiseIncrement {
    pub const ZERO: Self = Self { dw_x: 0.0, dw_y: 0.0, dw_z: 0.0 };

    pub fn as_array(&self) -> [f64; 3] {
        [self.dw_x, self.dw_y, self.dw_z]
    }

    pub fn from_array(w: [f64; 3]) -> Self {
        Self { dw_x: w[0], dw_y: w[1], dw_z: w[2] }
    }
}

/// Anything that can supply the increments for successive steps.
pub trait NoiseSource {
    fn increment(&mut self, dt: f64) -> NoiseIncrement;
}

/// The seeded Gaussian stream of one trajectory.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(master_seed: u64, index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(index);
        Self { rng }
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }
}

impl NoiseSource for NoiseStream {
    #[inline]
    fn increment(&mut self, dt: f64) -> NoiseIncrement {
        let s = dt.sqrt();
        NoiseIncrement {
            dw_x: s * self.standard_normal(),
            dw_y: s * self.standard_normal(),
            dw_z: s * self.standard_normal(),
        }
    }
}

/// Deterministic evolution: every increment is zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn increment(&mut self, _dt: f64) -> NoiseIncrement {
        NoiseIncrement::ZERO
    }
}

/// Replays a fixed list of increments (zero once exhausted).
#[derive(Debug, Clone, Default)]
pub struct PrescribedNoise {
    increments: Vec<NoiseIncrement>,
    next: usize,
}

impl PrescribedNoise {
    pub fn new(increments: Vec<NoiseIncrement>) -> Self {
        Self { increments, next: 0 }
    }
}

impl NoiseSource for PrescribedNoise {
    fn increment(&mut self, _dt: f64) -> NoiseIncrement {
        let w = self.increments.get(self.next).copied().unwrap_or(NoiseIncrement::ZERO);
        self.next += 1;
        w
    }
}

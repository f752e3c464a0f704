//! Unit white-noise generators with independent, reproducible sub-streams.
//!
//! Every stochastic channel of a run (gas collisions, photon recoil, loop
//! phase noise, detector imprecision) draws from its own stream of a
//! counter-based generator, all derived from one master seed. Streams are
//! independent by construction and reproducible regardless of scheduling,
//! so ensemble members and detector synthesis can replay the exact
//! realization the integrator consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Stream identifiers for the per-channel sub-streams.
pub const STREAM_GAS: u64 = 1;
pub const STREAM_RECOIL: u64 = 2;
pub const STREAM_PHASE: u64 = 3;
pub const STREAM_DETECTOR_OL: u64 = 4;
pub const STREAM_DETECTOR_IL: u64 = 5;
/// Auxiliary stream (loop-phase random walk and similar).
pub const STREAM_AUX: u64 = 6;

/// A stream of independent standard-normal draws.
#[derive(Debug, Clone)]
pub struct GaussianStream {
    rng: ChaCha8Rng,
}

impl GaussianStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng }
    }

    #[inline]
    pub fn next(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Draw `n` samples into a fresh vector.
    pub fn take(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.next()).collect()
    }
}

/// The per-channel unit-variance increment streams of one simulation run.
#[derive(Debug, Clone)]
pub struct NoiseRealization {
    pub gas: GaussianStream,
    pub recoil: GaussianStream,
    pub phase: GaussianStream,
}

impl NoiseRealization {
    pub fn from_seed(seed: u64) -> Self {
        Self {
            gas: GaussianStream::new(seed, STREAM_GAS),
            recoil: GaussianStream::new(seed, STREAM_RECOIL),
            phase: GaussianStream::new(seed, STREAM_PHASE),
        }
    }
}

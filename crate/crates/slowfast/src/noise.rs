//! Counter-based Brownian increments.
//!
//! Every `(seed, particle, kind)` triple owns a ChaCha8 stream; macro step
//! `k` reads from a fixed word offset of that stream. The first normal of a
//! step fixes the macro increment, the rest refine it by a Brownian bridge.
//! Runs with different micro-step counts (different ε, or the averaged limit
//! with one step per report interval) therefore see the same Brownian path at
//! every report time, and particle `i` of any run sees the same path.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKind {
    /// Shared slow/fast noise `W`.
    W = 0,
    /// Fast-only noise `B`.
    B = 1,
}

/// Words reserved per macro step.
const STEP_STRIDE: u32 = 32;

#[derive(Clone)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(seed: u64, particle: usize, kind: StreamKind) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(((particle as u64) << 1) | kind as u64);
        NoiseStream { rng }
    }

    /// Increments of one macro step of length `dt` split into `n_micro` equal parts.
    pub fn macro_step(&mut self, step: usize, dt: f64, n_micro: usize) -> Bridge<'_> {
        assert!(n_micro >= 1);
        self.rng.set_word_pos((step as u128) << STEP_STRIDE);
        let z: f64 = self.rng.sample(StandardNormal);
        Bridge { rng: &mut self.rng, remaining: dt.sqrt() * z, left: n_micro, h: dt / n_micro as f64 }
    }

    /// The macro increment alone.
    pub fn increment(&mut self, step: usize, dt: f64) -> f64 {
        self.macro_step(step, dt, 1).next_increment()
    }
}

/// Sequential Brownian bridge over the micro steps of one macro step.
pub struct Bridge<'a> {
    rng: &'a mut ChaCha8Rng,
    remaining: f64,
    left: usize,
    h: f64,
}

impl Bridge<'_> {
    pub fn next_increment(&mut self) -> f64 {
        debug_assert!(self.left > 0);
        let m = self.left as f64;
        let inc = if self.left == 1 {
            self.remaining
        } else {
            let z: f64 = self.rng.sample(StandardNormal);
            self.remaining / m + (self.h * (1.0 - 1.0 / m)).sqrt() * z
        };
        self.remaining -= inc;
        self.left -= 1;
        inc
    }
}

//! Seeded random streams.
//!
//! Every random quantity comes from a ChaCha8 generator keyed by an explicit
//! 64-bit seed and a stream id, so separate consumers of the same seed never
//! share draws. Gaussian variates use the Box–Muller transform so datasets can
//! be reproduced from the seed alone by any implementation of ChaCha8.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream ids carved out of a single seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Position = 0,
    Noise = 1,
    Init = 2,
    Shuffle = 3,
    Split = 4,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

/// Uniform draw in `[lo, hi)`; returns `lo` when the interval is a point.
pub fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    let u: f64 = rng.gen();
    lo + u * (hi - lo)
}

/// Two independent standard normal variates.
pub fn standard_normal_pair<R: Rng + ?Sized>(rng: &mut R) -> (f64, f64) {
    // 1 - U lies in (0, 1], keeping ln finite.
    let u1 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    let radius = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (2.0 * PI * u2).sin_cos();
    (radius * c, radius * s)
}

//! Random streams.
//!
//! Every draw comes from ChaCha20 keyed by the campaign seed, with the
//! 64-bit stream id `(index << 8) | purpose`. A (seed, realization index)
//! pair therefore reproduces one realization exactly, independent of how
//! many workers run or in which order.

use nalgebra::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

/// What a stream is used for. The value occupies the low 8 bits of the id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Purpose {
    Geometry = 1,
    Shadowing = 2,
    Pilots = 3,
    Fading = 4,
    Oracle = 5,
}

pub fn stream(seed: u64, index: u64, purpose: Purpose) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream((index << 8) | purpose as u64);
    rng
}

/// Circularly symmetric complex Gaussian with unit variance.
#[inline]
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> Complex<f64> {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

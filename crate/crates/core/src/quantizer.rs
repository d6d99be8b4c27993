//! Midrise uniform quantizer under the Bussgang linear decomposition.
//!
//! A quantizer output is modelled as `Q(z) = a·z + n_d` with `n_d`
//! uncorrelated with the zero-mean Gaussian input `z`. For a unit-power
//! input the gain `a`, the second moment `b = E{Q(z)²}/E{z²}` and the
//! distortion power `b − a²` depend only on the step size and the number of
//! levels, so one table of optimal steps serves every input power once the
//! input is normalized by its standard deviation.

use std::collections::HashMap;
use std::f64::consts::{PI, SQRT_2};
use std::sync::{Mutex, OnceLock};

use nalgebra::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Arguments of `exp(−x²/2)` and `Q(x)` beyond this are zero in f64.
const TAIL_CUTOFF: f64 = 40.0;

const SEARCH_LO: f64 = 1e-7;
const SEARCH_HI: f64 = 4.0;
const GRID_POINTS: usize = 400;

/// Default tolerance on the optimal step used by [`QuantizerSpec::for_bits`].
pub const DEFAULT_STEP_TOLERANCE: f64 = 1e-10;

/// Largest bit depth accepted. The moment sums have up to `2^(alpha−1)` terms.
pub const MAX_BITS: u32 = 24;

/// Gaussian tail probability `Q(x) = ½·erfc(x/√2)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / SQRT_2)
}

fn check_grid(step: f64, levels: u64) -> Result<()> {
    if !(step > 0.0) || !step.is_finite() {
        return invalid(format!("quantizer step must be positive and finite, got {step}"));
    }
    if levels < 2 || !levels.is_multiple_of(2) {
        return invalid(format!("midrise quantizer needs an even number of levels >= 2, got {levels}"));
    }
    Ok(())
}

/// Midrise uniform quantizer with `levels` reconstruction points
/// `±(l + ½)·step`, saturating at `±(levels − 1)/2·step`.
///
/// A sample lying exactly on a cell boundary `l·step` maps to the upper cell.
pub fn midrise_quantize(z: f64, step: f64, levels: u64) -> Result<f64> {
    check_grid(step, levels)?;
    Ok(midrise_unchecked(z, step, levels))
}

#[inline]
pub(crate) fn midrise_unchecked(z: f64, step: f64, levels: u64) -> f64 {
    let half = (levels / 2) as f64;
    let cell = (z / step).floor().clamp(-half, half - 1.0);
    (cell + 0.5) * step
}

/// Bussgang gain `a` and normalized second moment `b` of the midrise
/// quantizer for a zero-mean Gaussian input of power `input_power`.
pub fn bussgang_moments(step: f64, levels: u64, input_power: f64) -> Result<(f64, f64)> {
    check_grid(step, levels)?;
    if !(input_power > 0.0) || !input_power.is_finite() {
        return invalid(format!("input power must be positive, got {input_power}"));
    }
    Ok(moments_unchecked(step / input_power.sqrt(), levels))
}

/// Moments for a unit-power input and normalized step.
fn moments_unchecked(step: f64, levels: u64) -> (f64, f64) {
    let inner = levels / 2 - 1;
    let mut exp_sum = 0.0;
    let mut q_sum = 0.0;
    for l in 1..=inner {
        let x = l as f64 * step;
        if x > TAIL_CUTOFF {
            break;
        }
        exp_sum += (-0.5 * x * x).exp();
        q_sum += l as f64 * q_function(x);
    }
    let gain = step / (2.0 * PI).sqrt() * (1.0 + 2.0 * exp_sum);
    let moment = step * step * (0.25 + 4.0 * q_sum);
    (gain, moment)
}

/// Signal-to-distortion-noise ratio `a²/(b − a²)` for a unit-power input.
///
/// Returns `f64::INFINITY` when the distortion vanishes numerically.
pub fn sdnr(step: f64, levels: u64) -> Result<f64> {
    check_grid(step, levels)?;
    Ok(sdnr_unchecked(step, levels))
}

fn sdnr_unchecked(step: f64, levels: u64) -> f64 {
    let (a, b) = moments_unchecked(step, levels);
    let distortion = b - a * a;
    if distortion <= 0.0 {
        f64::INFINITY
    } else {
        a * a / distortion
    }
}

fn mse_unchecked(step: f64, levels: u64) -> f64 {
    let (a, b) = moments_unchecked(step, levels);
    b - 2.0 * a + 1.0
}

/// Design of the unit-power quantizer for one bit depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantizerSpec {
    /// Bits per real dimension.
    pub alpha: u32,
    /// Number of reconstruction levels, `2^alpha`.
    pub levels: u64,
    /// Optimal step for a unit-power input.
    pub step: f64,
    /// Bussgang gain `ȧ`.
    pub gain: f64,
    /// Normalized second moment `ḃ`.
    pub moment: f64,
    /// Distortion power `σ_ė² = ḃ − ȧ²`.
    pub distortion: f64,
}

impl QuantizerSpec {
    /// Optimal design for `alpha` bits, memoized per process.
    pub fn for_bits(alpha: u32) -> Result<Self> {
        static CACHE: OnceLock<Mutex<HashMap<u32, QuantizerSpec>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        if let Some(spec) = cache.lock().expect("quantizer cache poisoned").get(&alpha) {
            return Ok(*spec);
        }
        if alpha == 0 || alpha > MAX_BITS {
            return invalid(format!("bit depth must be in 1..={MAX_BITS}, got {alpha}"));
        }
        let spec = optimize_step(1u64 << alpha, DEFAULT_STEP_TOLERANCE)?;
        cache.lock().expect("quantizer cache poisoned").insert(alpha, spec);
        Ok(spec)
    }

    pub fn sdnr(&self) -> f64 {
        if self.distortion <= 0.0 {
            f64::INFINITY
        } else {
            self.gain * self.gain / self.distortion
        }
    }

    /// Linear model `(ȧ, σ_ė²)` consumed by the SINR expressions.
    pub fn linear_model(&self) -> Bussgang {
        Bussgang { gain: self.gain, distortion: self.distortion }
    }
}

/// Linearized quantizer: gain and distortion power for a unit-power input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bussgang {
    pub gain: f64,
    pub distortion: f64,
}

impl Bussgang {
    /// Unquantized (infinite-capacity) fronthaul.
    pub const PERFECT: Bussgang = Bussgang { gain: 1.0, distortion: 0.0 };

    /// `σ_ė²/ȧ²`, the distortion-to-signal ratio that scales every noise term.
    pub fn ratio(&self) -> f64 {
        self.distortion / (self.gain * self.gain)
    }

    pub fn is_perfect(&self) -> bool {
        self.distortion == 0.0 && self.gain == 1.0
    }
}

fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tolerance: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tolerance {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}

/// Step size maximizing the SDNR for a unit-power Gaussian input.
///
/// A log-spaced grid scan over `[1e-7, 4]` locates the bracket and
/// golden-section search refines it to `tolerance`. For two levels the SDNR
/// does not depend on the step at all; the tie is broken by minimum
/// mean-squared error, which gives `2·√(2/π)`.
pub fn optimize_step(levels: u64, tolerance: f64) -> Result<QuantizerSpec> {
    check_grid(1.0, levels)?;
    if !levels.is_power_of_two() {
        return invalid(format!("levels must be a power of two, got {levels}"));
    }
    if !(tolerance > 0.0) {
        return invalid(format!("tolerance must be positive, got {tolerance}"));
    }
    let alpha = levels.trailing_zeros();
    if alpha > MAX_BITS {
        return invalid(format!("bit depth must be at most {MAX_BITS}, got {alpha}"));
    }

    let ratio = (SEARCH_HI / SEARCH_LO).powf(1.0 / (GRID_POINTS - 1) as f64);
    let grid: Vec<f64> = (0..GRID_POINTS).map(|i| SEARCH_LO * ratio.powi(i as i32)).collect();
    let values: Vec<f64> = grid.iter().map(|&d| sdnr_unchecked(d, levels)).collect();

    let (lo_val, hi_val) =
        values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let flat = (hi_val - lo_val) <= 1e-9 * hi_val.abs();

    let objective = |d: f64| {
        if flat {
            mse_unchecked(d, levels)
        } else {
            -sdnr_unchecked(d, levels)
        }
    };
    let best =
        (0..GRID_POINTS).min_by(|&i, &j| objective(grid[i]).total_cmp(&objective(grid[j]))).expect("grid is non-empty");
    let lo = grid[best.saturating_sub(1)];
    let hi = grid[(best + 1).min(GRID_POINTS - 1)];
    let step = golden_min(objective, lo, hi, tolerance);

    let (gain, moment) = moments_unchecked(step, levels);
    Ok(QuantizerSpec { alpha, levels, step, gain, moment, distortion: moment - gain * gain })
}

/// Quantize a real sample of known power: the input is normalized to unit
/// power, quantized with the unit-power design, and scaled back.
pub fn quantize_normalized(z: f64, input_power: f64, spec: &QuantizerSpec) -> Result<f64> {
    if !(input_power > 0.0) || !input_power.is_finite() {
        return invalid(format!("input power must be positive, got {input_power}"));
    }
    check_grid(spec.step, spec.levels)?;
    let scale = input_power.sqrt();
    Ok(scale * midrise_unchecked(z / scale, spec.step, spec.levels))
}

/// Complex sample of total power `input_power`: real and imaginary parts are
/// quantized independently, each with half the power.
pub fn quantize_complex(z: Complex<f64>, input_power: f64, spec: &QuantizerSpec) -> Result<Complex<f64>> {
    let half = 0.5 * input_power;
    Ok(Complex::new(quantize_normalized(z.re, half, spec)?, quantize_normalized(z.im, half, spec)?))
}

//! System configuration, loaded from JSON with the field names used in the
//! simulation setup (`M`, `N`, `K`, `tau_c`, ...).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PilotMode {
    /// Every user gets its own orthogonal pilot (needs `tau_p >= K`).
    Orthogonal,
    /// Each user draws one of `tau_p` orthonormal sequences uniformly.
    Random,
}

/// Where the fronthaul quantizer sits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuantCase {
    /// APs forward quantized channel estimates and received signals.
    #[serde(rename = "1")]
    EstimateAndSignal,
    /// APs forward the quantized matched-filter outputs `ĝ_mk^H y_m`.
    #[serde(rename = "2")]
    WeightedSignal,
}

impl QuantCase {
    pub fn from_number(case: u8) -> Result<Self> {
        match case {
            1 => Ok(QuantCase::EstimateAndSignal),
            2 => Ok(QuantCase::WeightedSignal),
            other => Err(Error::Config(format!("case must be 1 or 2, got {other}"))),
        }
    }

    pub fn number(self) -> u8 {
        match self {
            QuantCase::EstimateAndSignal => 1,
            QuantCase::WeightedSignal => 2,
        }
    }
}

/// Three-slope path loss. Distances in km, losses in dB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathLoss {
    pub l_db: f64,
    pub d0_km: f64,
    pub d1_km: f64,
    /// Slope beyond `d1`, dB per decade.
    pub far_slope_db: f64,
    /// Slope between `d0` and `d1`, dB per decade.
    pub mid_slope_db: f64,
}

impl Default for PathLoss {
    fn default() -> Self {
        Self { l_db: 140.7, d0_km: 0.01, d1_km: 0.05, far_slope_db: 35.0, mid_slope_db: 20.0 }
    }
}

impl PathLoss {
    /// Path loss in dB (a negative number) at distance `d_km`.
    pub fn db(&self, d_km: f64) -> f64 {
        let anchor = -self.l_db - (self.far_slope_db - self.mid_slope_db) * self.d1_km.log10();
        if d_km > self.d1_km {
            -self.l_db - self.far_slope_db * d_km.log10()
        } else if d_km > self.d0_km {
            anchor - self.mid_slope_db * d_km.log10()
        } else {
            anchor - self.mid_slope_db * self.d0_km.log10()
        }
    }
}

/// Solver knobs for the alternating max-min algorithm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Per-user normalized power limit.
    pub p_max: f64,
    /// Relative SINR change that stops the outer loop.
    pub epsilon: f64,
    pub max_iterations: usize,
    /// Relative tolerance of the power-allocation bisection.
    pub bisection_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { p_max: 1.0, epsilon: 1e-3, max_iterations: 50, bisection_tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SystemConfig {
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    /// Side of the square area, km.
    #[serde(rename = "D")]
    pub d_km: f64,
    pub tau_c: usize,
    pub tau_p: usize,
    pub pilot_mode: PilotMode,
    pub p_p_mw: f64,
    pub rho_mw: f64,
    pub bandwidth_hz: f64,
    pub noise_figure_db: f64,
    pub sigma_sh_db: f64,
    #[serde(rename = "C_fh_bps")]
    pub c_fh_bps: f64,
    #[serde(rename = "T_c_s")]
    pub t_c_s: f64,
    pub seed: u64,
    pub realizations: usize,
    pub path_loss: PathLoss,
    pub case: QuantCase,
    /// Fixed bit depth. When absent the depth is the largest the fronthaul
    /// budget allows, capped at `alpha_max`.
    pub alpha: Option<u32>,
    pub alpha_max: u32,
    /// Ignore quantization altogether.
    pub perfect_fronthaul: bool,
    /// Evaluate the downlink with the literal `ȧ²/σ²` and `σ²/ȧ` forms.
    pub literal_forms: bool,
    /// Users per AP for the assignment path. Absent means every AP serves
    /// every user.
    #[serde(rename = "K_m")]
    pub k_m: Option<usize>,
    pub solver: SolverConfig,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            m: 30,
            n: 2,
            k: 8,
            d_km: 1.0,
            tau_c: 200,
            tau_p: 8,
            pilot_mode: PilotMode::Orthogonal,
            p_p_mw: 200.0,
            rho_mw: 200.0,
            bandwidth_hz: 20e6,
            noise_figure_db: 9.0,
            sigma_sh_db: 8.0,
            c_fh_bps: 100e6,
            t_c_s: 1e-3,
            seed: 1,
            realizations: 50,
            path_loss: PathLoss::default(),
            case: QuantCase::WeightedSignal,
            alpha: None,
            alpha_max: 16,
            perfect_fronthaul: false,
            literal_forms: false,
            k_m: None,
            solver: SolverConfig::default(),
        }
    }
}

impl SystemConfig {
    /// Named presets. `desk` runs in seconds; `full` is long-running.
    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self { alpha: Some(2), ..Self::default() }),
            "full" => Ok(Self { m: 120, k: 50, tau_p: 50, realizations: 300, alpha: None, ..Self::default() }),
            other => Err(Error::Config(format!("unknown profile `{other}` (expected desk or full)"))),
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    /// Payload samples per coherence interval.
    pub fn tau_f(&self) -> usize {
        self.tau_c.saturating_sub(self.tau_p)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.m == 0 || self.n == 0 || self.k == 0 {
            return fail(format!("M, N, K must be positive (got {}, {}, {})", self.m, self.n, self.k));
        }
        if self.tau_p == 0 || self.tau_p >= self.tau_c {
            return fail(format!("need 0 < tau_p < tau_c, got tau_p = {}, tau_c = {}", self.tau_p, self.tau_c));
        }
        if self.pilot_mode == PilotMode::Orthogonal && self.tau_p < self.k {
            return fail(format!("orthogonal pilots need tau_p >= K ({} < {})", self.tau_p, self.k));
        }
        let positive = [
            ("D", self.d_km),
            ("p_p_mw", self.p_p_mw),
            ("rho_mw", self.rho_mw),
            ("bandwidth_hz", self.bandwidth_hz),
            ("C_fh_bps", self.c_fh_bps),
            ("T_c_s", self.t_c_s),
            ("solver.p_max", self.solver.p_max),
            ("solver.epsilon", self.solver.epsilon),
            ("solver.bisection_tol", self.solver.bisection_tol),
        ];
        for (name, value) in positive {
            if !(value > 0.0) || !value.is_finite() {
                return fail(format!("{name} must be positive and finite, got {value}"));
            }
        }
        if !(self.sigma_sh_db >= 0.0) {
            return fail(format!("sigma_sh_db must be nonnegative, got {}", self.sigma_sh_db));
        }
        let pl = &self.path_loss;
        if !(pl.d0_km > 0.0 && pl.d0_km < pl.d1_km) {
            return fail(format!("path loss needs 0 < d0 < d1, got {} and {}", pl.d0_km, pl.d1_km));
        }
        if self.realizations == 0 {
            return fail("realizations must be positive".into());
        }
        if self.solver.max_iterations == 0 {
            return fail("solver.max_iterations must be positive".into());
        }
        if let Some(alpha) = self.alpha {
            if alpha == 0 || alpha > crate::quantizer::MAX_BITS {
                return fail(format!("alpha must be in 1..={}, got {alpha}", crate::quantizer::MAX_BITS));
            }
        }
        if self.k_m == Some(0) {
            return fail("K_m must be positive".into());
        }
        if self.alpha_max == 0 || self.alpha_max > crate::quantizer::MAX_BITS {
            return fail(format!("alpha_max must be in 1..={}", crate::quantizer::MAX_BITS));
        }
        Ok(())
    }
}

//! Network geometry, large-scale fading, pilots and MMSE estimation
//! statistics, plus small-scale channel draws for the Monte-Carlo oracle.

use nalgebra::{Complex, DMatrix};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::{PilotMode, SystemConfig};
use crate::error::{invalid, Result};
use crate::rng::{self, complex_normal, Purpose};

pub const BOLTZMANN: f64 = 1.381e-23;
pub const NOISE_TEMPERATURE_K: f64 = 290.0;

/// Thermal noise power in watts.
pub fn noise_power(bandwidth_hz: f64, noise_figure_db: f64) -> f64 {
    bandwidth_hz * BOLTZMANN * NOISE_TEMPERATURE_K * 10f64.powf(noise_figure_db / 10.0)
}

/// Power in mW normalized by the noise power.
pub fn normalized_power(power_mw: f64, noise_w: f64) -> f64 {
    power_mw * 1e-3 / noise_w
}

/// Distance on a torus of side `side`: the nearest of the nine translated
/// copies of `b` around `a`.
pub fn wrapped_distance(a: [f64; 2], b: [f64; 2], side: f64) -> f64 {
    let axis = |u: f64, v: f64| {
        let d = (u - v).abs() % side;
        d.min(side - d)
    };
    axis(a[0], b[0]).hypot(axis(a[1], b[1]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub aps: Vec<[f64; 2]>,
    pub users: Vec<[f64; 2]>,
    /// M×K wrapped distances, km.
    pub distances: DMatrix<f64>,
}

impl Geometry {
    pub fn from_positions(aps: Vec<[f64; 2]>, users: Vec<[f64; 2]>, side: f64) -> Self {
        let distances = DMatrix::from_fn(aps.len(), users.len(), |m, k| wrapped_distance(aps[m], users[k], side));
        Self { aps, users, distances }
    }
}

pub fn generate_geometry<R: Rng + ?Sized>(config: &SystemConfig, rng: &mut R) -> Geometry {
    let side = config.d_km;
    let point = |rng: &mut R| [rng.random::<f64>() * side, rng.random::<f64>() * side];
    let aps = (0..config.m).map(|_| point(rng)).collect();
    let users = (0..config.k).map(|_| point(rng)).collect();
    Geometry::from_positions(aps, users, side)
}

/// Linear large-scale gains `β_mk`. Shadowing only applies beyond `d1`.
pub fn large_scale_fading<R: Rng + ?Sized>(
    distances: &DMatrix<f64>,
    config: &SystemConfig,
    rng: &mut R,
) -> DMatrix<f64> {
    let pl = &config.path_loss;
    DMatrix::from_fn(distances.nrows(), distances.ncols(), |m, k| {
        let d = distances[(m, k)];
        // Draw for every pair so the stream layout does not depend on geometry.
        let z: f64 = rng.sample(StandardNormal);
        let shadow = if d > pl.d1_km { config.sigma_sh_db * z } else { 0.0 };
        10f64.powf((pl.db(d) + shadow) / 10.0)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pilots {
    /// τ_p×K matrix of unit-norm real pilot columns.
    pub matrix: DMatrix<f64>,
    /// `|φ_k^H φ_k'|²`.
    pub gram: DMatrix<f64>,
    /// Index of the orthonormal sequence used by each user.
    pub sequence: Vec<usize>,
}

impl Pilots {
    pub fn from_sequences(tau_p: usize, sequence: Vec<usize>) -> Result<Self> {
        if let Some(&bad) = sequence.iter().find(|&&s| s >= tau_p) {
            return invalid(format!("pilot index {bad} out of range for tau_p = {tau_p}"));
        }
        let k = sequence.len();
        let matrix = DMatrix::from_fn(tau_p, k, |t, j| if sequence[j] == t { 1.0 } else { 0.0 });
        let gram = DMatrix::from_fn(k, k, |i, j| if sequence[i] == sequence[j] { 1.0 } else { 0.0 });
        Ok(Self { matrix, gram, sequence })
    }
}

pub fn assign_pilots<R: Rng + ?Sized>(k: usize, tau_p: usize, mode: PilotMode, rng: &mut R) -> Result<Pilots> {
    if tau_p == 0 {
        return invalid("tau_p must be positive");
    }
    let sequence = match mode {
        PilotMode::Orthogonal => {
            if tau_p < k {
                return invalid(format!("orthogonal pilots need tau_p >= K, got {tau_p} < {k}"));
            }
            (0..k).collect()
        }
        PilotMode::Random => (0..k).map(|_| rng.random_range(0..tau_p)).collect(),
    };
    Pilots::from_sequences(tau_p, sequence)
}

/// MMSE coefficients `c_mk` and estimate variances `γ_mk`.
pub fn estimation_stats(
    beta: &DMatrix<f64>,
    pilot_gram: &DMatrix<f64>,
    tau_p: usize,
    p_p: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let tp = tau_p as f64 * p_p;
    let root = tp.sqrt();
    let (m, k) = beta.shape();
    let mut c = DMatrix::zeros(m, k);
    let mut gamma = DMatrix::zeros(m, k);
    for ap in 0..m {
        for user in 0..k {
            let contamination: f64 = (0..k).map(|j| beta[(ap, j)] * pilot_gram[(j, user)]).sum();
            let cmk = root * beta[(ap, user)] / (tp * contamination + 1.0);
            c[(ap, user)] = cmk;
            gamma[(ap, user)] = root * beta[(ap, user)] * cmk;
        }
    }
    (c, gamma)
}

/// Deterministic statistics of one network drop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkStats {
    pub beta: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub pilots: Pilots,
    pub n: usize,
    pub tau_p: usize,
    /// Normalized pilot power.
    pub p_p: f64,
    /// Normalized maximum data power.
    pub rho: f64,
}

impl NetworkStats {
    pub fn new(beta: DMatrix<f64>, pilots: Pilots, n: usize, p_p: f64, rho: f64) -> Result<Self> {
        if beta.ncols() != pilots.gram.nrows() {
            return invalid(format!("beta has {} users but pilots cover {}", beta.ncols(), pilots.gram.nrows()));
        }
        if beta.iter().any(|b| !(*b >= 0.0) || !b.is_finite()) {
            return invalid("beta must be finite and nonnegative");
        }
        if n == 0 || !(p_p >= 0.0) || !(rho > 0.0) {
            return invalid(format!("need N > 0, p_p >= 0, rho > 0 (got {n}, {p_p}, {rho})"));
        }
        let tau_p = pilots.matrix.nrows();
        let (c, gamma) = estimation_stats(&beta, &pilots.gram, tau_p, p_p);
        Ok(Self { beta, gamma, c, pilots, n, tau_p, p_p, rho })
    }

    /// Drop number `index` of the campaign described by `config`.
    pub fn generate(config: &SystemConfig, index: u64) -> Result<Self> {
        config.validate()?;
        let geometry = generate_geometry(config, &mut rng::stream(config.seed, index, Purpose::Geometry));
        let beta =
            large_scale_fading(&geometry.distances, config, &mut rng::stream(config.seed, index, Purpose::Shadowing));
        let pilots = assign_pilots(
            config.k,
            config.tau_p,
            config.pilot_mode,
            &mut rng::stream(config.seed, index, Purpose::Pilots),
        )?;
        let pn = noise_power(config.bandwidth_hz, config.noise_figure_db);
        Self::new(beta, pilots, config.n, normalized_power(config.p_p_mw, pn), normalized_power(config.rho_mw, pn))
    }

    pub fn aps(&self) -> usize {
        self.beta.nrows()
    }

    pub fn users(&self) -> usize {
        self.beta.ncols()
    }

    pub fn pilot_gram(&self) -> &DMatrix<f64> {
        &self.pilots.gram
    }
}

/// One small-scale fading draw.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    /// Per AP, the N×K true channels.
    pub g: Vec<DMatrix<Complex<f64>>>,
    /// Per AP, the N×K MMSE estimates.
    pub g_hat: Vec<DMatrix<Complex<f64>>>,
}

pub fn sample_realization<R: Rng + ?Sized>(stats: &NetworkStats, rng: &mut R) -> ChannelRealization {
    let (m, k, n, tau_p) = (stats.aps(), stats.users(), stats.n, stats.tau_p);
    let root = (tau_p as f64 * stats.p_p).sqrt();
    let phi = &stats.pilots.matrix;
    let mut g = Vec::with_capacity(m);
    let mut g_hat = Vec::with_capacity(m);
    for ap in 0..m {
        let gm = DMatrix::from_fn(n, k, |_, user| complex_normal(rng) * stats.beta[(ap, user)].sqrt());
        let noise = DMatrix::from_fn(n, tau_p, |_, _| complex_normal(rng));
        // Received pilot block Y_p = √(τ_p p_p)·G·Φ^T + W_p.
        let phi_c = phi.map(|x| Complex::new(x, 0.0));
        let received = &gm * phi_c.transpose() * Complex::new(root, 0.0) + noise;
        let mut projected = received * phi_c;
        for user in 0..k {
            let cmk = stats.c[(ap, user)];
            projected.column_mut(user).scale_mut(cmk);
        }
        g.push(gm);
        g_hat.push(projected);
    }
    ChannelRealization { g, g_hat }
}

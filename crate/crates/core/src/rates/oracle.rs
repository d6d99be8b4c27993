//! Monte-Carlo use-and-then-forget oracle.
//!
//! Simulates small-scale fading, pilot noise, data symbols, receiver noise
//! and genuine midrise quantization, splits the combined signal of every
//! user into its DS/BU/IUI/TN/TQE terms and forms the SINR from the
//! empirical term powers. Nothing here reuses the closed-form coefficients.

#![allow(clippy::needless_range_loop)]

use std::collections::BTreeMap;

use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{sample_realization, NetworkStats};
use crate::config::QuantCase;
use crate::error::{invalid, Result};
use crate::quantizer::{midrise_unchecked, QuantizerSpec};
use crate::rng::{self, complex_normal, Purpose};

type C64 = Complex<f64>;

const CHUNK: usize = 256;
const MIN_DRAWS: usize = 1000;

const CASE2_TERMS: [&str; 5] = ["DS", "BU", "IUI", "TN", "TQE"];
const CASE1_TERMS: [&str; 8] = ["DS", "BU", "IUI", "TN", "TQE_kk", "TQE_g", "TQE_y", "TQE_gy"];

/// Empirical SINRs and the term powers behind them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleReport {
    pub case: QuantCase,
    pub draws: usize,
    pub sinr: Vec<f64>,
    /// Per user, term name → power.
    pub terms: Vec<BTreeMap<String, f64>>,
    /// Per user, the largest `|corr|` between two distinct terms.
    pub max_correlation: Vec<f64>,
    /// Per user, the full term correlation magnitudes, row-major.
    pub correlations: Vec<Vec<Vec<f64>>>,
    pub warning: Option<String>,
}

impl OracleReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.terms)?)
    }
}

/// Per-user sums over draws: Σx for the coherent gain and the Gram matrix of
/// the raw per-draw vector.
#[derive(Clone)]
struct Accumulator {
    coherent: Vec<C64>,
    gram: Vec<DMatrix<C64>>,
}

impl Accumulator {
    fn new(k: usize, width: usize) -> Self {
        Self { coherent: vec![C64::new(0.0, 0.0); k], gram: vec![DMatrix::zeros(width, width); k] }
    }

    fn merge(mut self, other: &Accumulator) -> Self {
        for (a, b) in self.coherent.iter_mut().zip(&other.coherent) {
            *a += b;
        }
        for (a, b) in self.gram.iter_mut().zip(&other.gram) {
            *a += b;
        }
        self
    }

    fn add(&mut self, user: usize, coherent: C64, raw: &[C64]) {
        self.coherent[user] += coherent;
        let g = &mut self.gram[user];
        for i in 0..raw.len() {
            for j in 0..raw.len() {
                g[(i, j)] += raw[i] * raw[j].conj();
            }
        }
    }
}

/// Pairwise tree sum in index order, independent of worker count.
fn pairwise(mut parts: Vec<Accumulator>) -> Accumulator {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut iter = parts.into_iter();
        while let Some(a) = iter.next() {
            match iter.next() {
                Some(b) => next.push(a.merge(&b)),
                None => next.push(a),
            }
        }
        parts = next;
    }
    parts.pop().expect("at least one chunk")
}

fn quantize(z: C64, power: f64, spec: Option<&QuantizerSpec>) -> C64 {
    match spec {
        Some(spec) if power > 0.0 => {
            let scale = (0.5 * power).sqrt();
            C64::new(
                scale * midrise_unchecked(z.re / scale, spec.step, spec.levels),
                scale * midrise_unchecked(z.im / scale, spec.step, spec.levels),
            )
        }
        _ => z,
    }
}

struct Setup<'a> {
    stats: &'a NetworkStats,
    spec: Option<&'a QuantizerSpec>,
    gain: f64,
    amp: Vec<f64>,
    u: &'a DMatrix<f64>,
    /// Case 2 quantizer input power `E|ĝ_mk^H y_m|²`, M×K.
    z_power: DMatrix<f64>,
    /// Case 1 per-entry input power of `y_m`.
    y_power: Vec<f64>,
}

fn draw_case2<R: Rng>(s: &Setup, rng: &mut R, acc: &mut Accumulator) {
    let stats = s.stats;
    let (m_count, k, n) = (stats.aps(), stats.users(), stats.n);
    let real = sample_realization(stats, rng);
    let symbols: Vec<C64> = (0..k).map(|_| complex_normal(rng)).collect();
    let noise: Vec<Vec<C64>> = (0..m_count).map(|_| (0..n).map(|_| complex_normal(rng)).collect()).collect();
    for user in 0..k {
        // raw = [X s_k, s_k, IUI, TN, TQE] with X = √(ρq_k) Σ u ĝ^H g_k.
        let mut coherent = C64::new(0.0, 0.0);
        let mut iui = C64::new(0.0, 0.0);
        let mut tn = C64::new(0.0, 0.0);
        let mut tqe = C64::new(0.0, 0.0);
        for m in 0..m_count {
            let w = s.u[(m, user)];
            if w == 0.0 {
                continue;
            }
            let gh = real.g_hat[m].column(user);
            let mut z = C64::new(0.0, 0.0);
            for other in 0..k {
                let inner = gh.dotc(&real.g[m].column(other)) * s.amp[other];
                if other == user {
                    coherent += inner * w;
                } else {
                    iui += inner * symbols[other] * w;
                }
                z += inner * symbols[other];
            }
            let nm: C64 = (0..n).map(|i| gh[i].conj() * noise[m][i]).sum();
            tn += nm * w;
            z += nm;
            let zq = quantize(z, s.z_power[(m, user)], s.spec);
            tqe += (zq - z * s.gain) * w;
        }
        // Scale everything to the units of the gain-normalized statistic.
        let raw = [coherent * symbols[user], symbols[user], iui, tn, tqe / s.gain];
        acc.add(user, coherent, &raw);
    }
}

fn draw_case1<R: Rng>(s: &Setup, rng: &mut R, acc: &mut Accumulator) {
    let stats = s.stats;
    let (m_count, k, n) = (stats.aps(), stats.users(), stats.n);
    let a = s.gain;
    let real = sample_realization(stats, rng);
    let symbols: Vec<C64> = (0..k).map(|_| complex_normal(rng)).collect();
    let noise: Vec<Vec<C64>> = (0..m_count).map(|_| (0..n).map(|_| complex_normal(rng)).collect()).collect();
    // Quantized received signals and their errors e^y = Q(y) − ȧy.
    let mut e_y = Vec::with_capacity(m_count);
    for m in 0..m_count {
        let y: Vec<C64> = (0..n)
            .map(|i| (0..k).map(|o| real.g[m][(i, o)] * s.amp[o] * symbols[o]).sum::<C64>() + noise[m][i])
            .collect();
        e_y.push(y.iter().map(|&v| quantize(v, s.y_power[m], s.spec) - v * a).collect::<Vec<_>>());
    }
    for user in 0..k {
        let mut coherent = C64::new(0.0, 0.0);
        let zero = C64::new(0.0, 0.0);
        let (mut iui, mut tn, mut tqe_kk, mut tqe_g, mut tqe_y, mut tqe_gy) = (zero, zero, zero, zero, zero, zero);
        for m in 0..m_count {
            let w = s.u[(m, user)];
            if w == 0.0 {
                continue;
            }
            let gh = real.g_hat[m].column(user);
            let power = stats.gamma[(m, user)];
            let e_g: Vec<C64> = (0..n).map(|i| quantize(gh[i], power, s.spec) - gh[i] * a).collect();
            for other in 0..k {
                let go = real.g[m].column(other);
                let inner = gh.dotc(&go) * s.amp[other];
                if other == user {
                    coherent += inner * w;
                } else {
                    iui += inner * symbols[other] * w;
                }
                let err: C64 = (0..n).map(|i| e_g[i].conj() * go[i]).sum::<C64>() * s.amp[other];
                tqe_kk += err * symbols[other] * w;
            }
            for i in 0..n {
                tn += gh[i].conj() * noise[m][i] * w;
                tqe_g += e_g[i].conj() * noise[m][i] * w;
                tqe_y += gh[i].conj() * e_y[m][i] * w;
                tqe_gy += e_g[i].conj() * e_y[m][i] * w;
            }
        }
        // Divide by ȧ² so DS/BU/IUI/TN carry unit weight.
        let a2 = a * a;
        let raw = [coherent * symbols[user], symbols[user], iui, tn, tqe_kk / a, tqe_g / a, tqe_y / a, tqe_gy / a2];
        acc.add(user, coherent, &raw);
    }
}

/// Empirical UaF SINR of every user under filters `u` and powers `q`.
///
/// `spec = None` bypasses quantization. The quantizer input powers are the
/// exact second moments of the quantizer inputs.
pub fn monte_carlo_sinr(
    stats: &NetworkStats,
    spec: Option<&QuantizerSpec>,
    q: &DVector<f64>,
    u: &DMatrix<f64>,
    case: QuantCase,
    draws: usize,
    seed: u64,
) -> Result<OracleReport> {
    let (m_count, k) = (stats.aps(), stats.users());
    if q.len() != k || u.shape() != (m_count, k) {
        return invalid("power vector or filter matrix does not match the network size");
    }
    if draws == 0 {
        return invalid("draws must be positive");
    }
    let n = stats.n as f64;
    let rho = stats.rho;
    let amp: Vec<f64> = q.iter().map(|&x| (rho * x).sqrt()).collect();
    let (b, g, gram) = (&stats.beta, &stats.gamma, &stats.pilots.gram);
    let z_power = DMatrix::from_fn(m_count, k, |m, user| {
        if g[(m, user)] == 0.0 {
            return 0.0;
        }
        let mut p = n * g[(m, user)];
        for other in 0..k {
            let cross = g[(m, user)] * b[(m, other)] / b[(m, user)];
            p += rho * q[other] * (n * b[(m, other)] * g[(m, user)] + n * n * gram[(user, other)] * cross * cross);
        }
        p
    });
    let y_power: Vec<f64> = (0..m_count).map(|m| rho * (0..k).map(|o| q[o] * b[(m, o)]).sum::<f64>() + 1.0).collect();
    let gain = spec.map_or(1.0, |s| s.gain);
    let setup = Setup { stats, spec, gain, amp, u, z_power, y_power };

    let width = match case {
        QuantCase::WeightedSignal => CASE2_TERMS.len(),
        QuantCase::EstimateAndSignal => CASE1_TERMS.len(),
    };
    let chunks = draws.div_ceil(CHUNK);
    let parts: Vec<Accumulator> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = rng::stream(seed, chunk as u64, Purpose::Oracle);
            let mut acc = Accumulator::new(k, width);
            let count = CHUNK.min(draws - chunk * CHUNK);
            for _ in 0..count {
                match case {
                    QuantCase::WeightedSignal => draw_case2(&setup, &mut rng, &mut acc),
                    QuantCase::EstimateAndSignal => draw_case1(&setup, &mut rng, &mut acc),
                }
            }
            acc
        })
        .collect();
    let total = pairwise(parts);

    let names: &[&str] = match case {
        QuantCase::WeightedSignal => &CASE2_TERMS,
        QuantCase::EstimateAndSignal => &CASE1_TERMS,
    };
    let inv = 1.0 / draws as f64;
    let mut sinr = Vec::with_capacity(k);
    let mut terms = Vec::with_capacity(k);
    let mut max_correlation = Vec::with_capacity(k);
    let mut correlations = Vec::with_capacity(k);
    for user in 0..k {
        let mu = total.coherent[user] * inv;
        // terms = T·raw: DS = μ s, BU = X s − μ s, the rest unchanged.
        let mut t = DMatrix::<C64>::identity(width, width);
        t[(0, 0)] = C64::new(0.0, 0.0);
        t[(0, 1)] = mu;
        t[(1, 1)] = -mu;
        t[(1, 0)] = C64::new(1.0, 0.0);
        let cov = &t * total.gram[user].map(|x| x * inv) * t.adjoint();
        let powers: Vec<f64> = (0..width).map(|i| cov[(i, i)].re).collect();
        let interference: f64 = powers[1..].iter().sum();
        sinr.push(powers[0] / interference);
        terms.push(names.iter().zip(&powers).map(|(name, &p)| (name.to_string(), p)).collect());
        let mut corr = vec![vec![0.0; width]; width];
        let mut worst: f64 = 0.0;
        for i in 0..width {
            for j in 0..width {
                let denom = (powers[i] * powers[j]).sqrt();
                let c = if denom > 0.0 { cov[(i, j)].norm() / denom } else { 0.0 };
                corr[i][j] = c;
                if i != j {
                    worst = worst.max(c);
                }
            }
        }
        max_correlation.push(worst);
        correlations.push(corr);
    }
    let warning =
        (draws < MIN_DRAWS).then(|| format!("only {draws} draws; estimates below {MIN_DRAWS} draws are unreliable"));
    Ok(OracleReport { case, draws, sinr, terms, max_correlation, correlations, warning })
}

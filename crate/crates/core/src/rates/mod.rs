//! Closed-form uplink and virtual-downlink SINRs, achievable rates and the
//! fronthaul bit budget.
//!
//! At fixed filters every SINR here has the shape
//! `q_k·D_k / ((Ψq)_k + σ_k)`, so one [`Coupling`] per filter matrix serves
//! both the evaluation and the optimization code.

pub mod oracle;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::channel::NetworkStats;
use crate::config::{QuantCase, SystemConfig};
use crate::error::{invalid, Error, Result};
use crate::quantizer::{Bussgang, QuantizerSpec};

pub use oracle::{monte_carlo_sinr, OracleReport};

/// Deterministic ingredients of the SINR expressions for one network drop.
#[derive(Debug, Clone)]
pub struct SinrContext {
    pub n: f64,
    pub rho: f64,
    pub model: Bussgang,
    pub case: QuantCase,
    pub beta: DMatrix<f64>,
    /// Estimate variances, zeroed on inactive links.
    pub gamma: DMatrix<f64>,
    pub gram: DMatrix<f64>,
    /// Serving APs of each user, ascending.
    pub active: Vec<Vec<usize>>,
    /// Evaluate the downlink with the literal printed distortion ratios.
    pub literal_forms: bool,
    /// `lambda[k]` is M×K; column k' holds `γ_mk β_mk'/β_mk`.
    lambda: Vec<DMatrix<f64>>,
    /// `upsilon[k]` is M×K; column k' is the diagonal of `Υ_kk'`.
    upsilon: Vec<DMatrix<f64>>,
    /// Column k is the diagonal of `R_k`.
    r: DMatrix<f64>,
}

/// SINR coefficients at fixed filters.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    /// `D_k`, the desired-signal gain per unit power.
    pub desired: DVector<f64>,
    /// `Ψ_kk'`, interference into user k per unit power of user k'.
    pub psi: DMatrix<f64>,
    /// `σ_k`, noise plus noise-borne distortion.
    pub noise: DVector<f64>,
}

impl Coupling {
    pub fn sinr(&self, q: &DVector<f64>) -> DVector<f64> {
        let interference = &self.psi * q + &self.noise;
        DVector::from_fn(q.len(), |k, _| q[k] * self.desired[k] / interference[k])
    }

    /// Downlink SINRs: the same coefficients with the interference transposed
    /// and a common noise level.
    pub fn sinr_transposed(&self, p: &DVector<f64>, noise: f64) -> DVector<f64> {
        let interference = self.psi.transpose() * p;
        DVector::from_fn(p.len(), |k, _| p[k] * self.desired[k] / (interference[k] + noise))
    }
}

fn distortion_terms(
    beta: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    model: Bussgang,
    case: QuantCase,
    ratio: f64,
) -> (Vec<DMatrix<f64>>, DMatrix<f64>) {
    let (m, k) = beta.shape();
    match case {
        QuantCase::WeightedSignal => {
            let upsilon = (0..k)
                .map(|user| {
                    DMatrix::from_fn(m, k, |ap, other| {
                        let (b, g) = (beta[(ap, user)], gamma[(ap, user)]);
                        beta[(ap, other)] * (ratio * (2.0 * b - g) + g)
                    })
                })
                .collect();
            let r = gamma.map(|g| (model.ratio() + 1.0) * g);
            (upsilon, r)
        }
        QuantCase::EstimateAndSignal => {
            let (a, s) = (model.gain, model.distortion);
            let c_tot = 2.0 * a * a * s + s * s;
            let factor = c_tot / a.powi(4) + 1.0;
            let upsilon = (0..k)
                .map(|user| DMatrix::from_fn(m, k, |ap, other| factor * gamma[(ap, user)] * beta[(ap, other)]))
                .collect();
            (upsilon, gamma.map(|g| factor * g))
        }
    }
}

impl SinrContext {
    /// Every AP serves every user.
    pub fn new(stats: &NetworkStats, model: Bussgang, case: QuantCase) -> Self {
        let active = vec![(0..stats.aps()).collect(); stats.users()];
        Self::build(stats, stats.gamma.clone(), active, model, case)
    }

    /// Only the links `m ∈ active[k]` exist; `γ` is zeroed elsewhere.
    pub fn masked(stats: &NetworkStats, active: Vec<Vec<usize>>, model: Bussgang, case: QuantCase) -> Result<Self> {
        if active.len() != stats.users() {
            return invalid(format!("mask covers {} users, network has {}", active.len(), stats.users()));
        }
        let mut gamma = DMatrix::zeros(stats.aps(), stats.users());
        for (k, aps) in active.iter().enumerate() {
            if aps.is_empty() {
                return invalid(format!("user {k} has no serving AP"));
            }
            for &m in aps {
                if m >= stats.aps() {
                    return invalid(format!("AP index {m} out of range"));
                }
                gamma[(m, k)] = stats.gamma[(m, k)];
            }
        }
        let mut active = active;
        for aps in &mut active {
            aps.sort_unstable();
            aps.dedup();
        }
        Ok(Self::build(stats, gamma, active, model, case))
    }

    fn build(
        stats: &NetworkStats,
        gamma: DMatrix<f64>,
        active: Vec<Vec<usize>>,
        model: Bussgang,
        case: QuantCase,
    ) -> Self {
        let beta = stats.beta.clone();
        let (m, k) = beta.shape();
        let lambda = (0..k)
            .map(|user| {
                DMatrix::from_fn(m, k, |ap, other| {
                    let b = beta[(ap, user)];
                    if b > 0.0 {
                        gamma[(ap, user)] * beta[(ap, other)] / b
                    } else {
                        0.0
                    }
                })
            })
            .collect();
        let (upsilon, r) = distortion_terms(&beta, &gamma, model, case, model.ratio());
        Self {
            n: stats.n as f64,
            rho: stats.rho,
            model,
            case,
            beta,
            gamma,
            gram: stats.pilots.gram.clone(),
            active,
            literal_forms: false,
            lambda,
            upsilon,
            r,
        }
    }

    pub fn with_literal_forms(mut self, on: bool) -> Self {
        self.literal_forms = on;
        self
    }

    pub fn users(&self) -> usize {
        self.beta.ncols()
    }

    pub fn aps(&self) -> usize {
        self.beta.nrows()
    }

    pub fn lambda(&self, k: usize) -> &DMatrix<f64> {
        &self.lambda[k]
    }

    pub fn upsilon(&self, k: usize) -> &DMatrix<f64> {
        &self.upsilon[k]
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    fn check_filters(&self, u: &DMatrix<f64>) -> Result<()> {
        if u.shape() != self.beta.shape() {
            return invalid(format!("filter matrix is {:?}, expected {:?}", u.shape(), self.beta.shape()));
        }
        for (k, aps) in self.active.iter().enumerate() {
            let norm2: f64 = aps.iter().map(|&m| u[(m, k)] * u[(m, k)]).sum();
            if !(norm2 > 0.0) || !norm2.is_finite() {
                return invalid(format!("filter of user {k} has zero or non-finite norm on its serving APs"));
            }
        }
        Ok(())
    }

    fn coupling_with(&self, u: &DMatrix<f64>, upsilon: &[DMatrix<f64>], r: &DMatrix<f64>) -> Result<Coupling> {
        self.check_filters(u)?;
        let k = self.users();
        let n = self.n;
        let mut desired = DVector::zeros(k);
        let mut psi = DMatrix::zeros(k, k);
        let mut noise = DVector::zeros(k);
        for user in 0..k {
            let aps = &self.active[user];
            let signal: f64 = aps.iter().map(|&m| u[(m, user)] * self.gamma[(m, user)]).sum();
            desired[user] = n * n * signal * signal;
            for other in 0..k {
                let mut value: f64 = aps.iter().map(|&m| u[(m, user)].powi(2) * upsilon[user][(m, other)]).sum();
                value *= n;
                if other != user && self.gram[(user, other)] != 0.0 {
                    let coherent: f64 = aps.iter().map(|&m| u[(m, user)] * self.lambda[user][(m, other)]).sum();
                    value += n * n * self.gram[(user, other)] * coherent * coherent;
                }
                psi[(user, other)] = value;
            }
            let r_sum: f64 = aps.iter().map(|&m| u[(m, user)].powi(2) * r[(m, user)]).sum();
            noise[user] = n / self.rho * r_sum;
        }
        Ok(Coupling { desired, psi, noise })
    }

    /// Uplink coefficients for the configured quantization case.
    pub fn coupling(&self, u: &DMatrix<f64>) -> Result<Coupling> {
        self.coupling_with(u, &self.upsilon, &self.r)
    }

    /// Virtual-downlink coefficients. The interference of user k' on user k
    /// in the downlink is `coupling.psi[(k', k)]`.
    pub fn downlink_coupling(&self, u: &DMatrix<f64>) -> Result<Coupling> {
        if self.literal_forms && self.model.distortion > 0.0 {
            let inverse = self.model.gain.powi(2) / self.model.distortion;
            let (upsilon, r) =
                distortion_terms(&self.beta, &self.gamma, self.model, QuantCase::WeightedSignal, inverse);
            self.coupling_with(u, &upsilon, &r)
        } else {
            let (upsilon, r) =
                distortion_terms(&self.beta, &self.gamma, self.model, QuantCase::WeightedSignal, self.model.ratio());
            self.coupling_with(u, &upsilon, &r)
        }
    }

    /// Common downlink noise level. The dual of the uplink noise `σ_k` is
    /// `1/ρ`; the literal variant uses `N/ρ`.
    pub fn downlink_noise(&self) -> f64 {
        if self.literal_forms {
            self.n / self.rho
        } else {
            1.0 / self.rho
        }
    }

    /// `Σ_m u²_mk γ_mk (σ²/ȧ² + 1)`, the per-user weight in the power-balance
    /// condition.
    pub fn balance_weights(&self, u: &DMatrix<f64>) -> DVector<f64> {
        let ratio = if self.literal_forms && self.model.distortion > 0.0 {
            self.model.distortion / self.model.gain
        } else {
            self.model.ratio()
        };
        DVector::from_fn(self.users(), |k, _| {
            self.active[k].iter().map(|&m| u[(m, k)].powi(2) * self.gamma[(m, k)]).sum::<f64>() * (ratio + 1.0)
        })
    }

    /// Uniform filter `1/√|S_k|` over each user's serving APs.
    pub fn uniform_filters(&self) -> DMatrix<f64> {
        let mut u = DMatrix::zeros(self.aps(), self.users());
        for (k, aps) in self.active.iter().enumerate() {
            let w = 1.0 / (aps.len() as f64).sqrt();
            for &m in aps {
                u[(m, k)] = w;
            }
        }
        u
    }
}

fn check_powers(q: &DVector<f64>, k: usize) -> Result<()> {
    if q.len() != k {
        return invalid(format!("power vector has {} entries, expected {k}", q.len()));
    }
    if q.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
        return invalid("powers must be finite and nonnegative");
    }
    Ok(())
}

fn with_case(context: &SinrContext, case: QuantCase) -> std::borrow::Cow<'_, SinrContext> {
    if context.case == case {
        std::borrow::Cow::Borrowed(context)
    } else {
        let (upsilon, r) = distortion_terms(&context.beta, &context.gamma, context.model, case, context.model.ratio());
        std::borrow::Cow::Owned(SinrContext { case, upsilon, r, ..context.clone() })
    }
}

/// Case 2 SINR (quantized matched-filter outputs).
pub fn sinr_case2(context: &SinrContext, q: &DVector<f64>, u: &DMatrix<f64>) -> Result<DVector<f64>> {
    check_powers(q, context.users())?;
    Ok(with_case(context, QuantCase::WeightedSignal).coupling(u)?.sinr(q))
}

/// Case 1 SINR (quantized estimates and received signals).
pub fn sinr_case1(context: &SinrContext, q: &DVector<f64>, u: &DMatrix<f64>) -> Result<DVector<f64>> {
    check_powers(q, context.users())?;
    Ok(with_case(context, QuantCase::EstimateAndSignal).coupling(u)?.sinr(q))
}

/// Uplink SINR for the context's own case.
pub fn sinr_uplink(context: &SinrContext, q: &DVector<f64>, u: &DMatrix<f64>) -> Result<DVector<f64>> {
    check_powers(q, context.users())?;
    Ok(context.coupling(u)?.sinr(q))
}

/// Virtual downlink SINR with precoders `u_k` and powers `p_k`.
pub fn sinr_downlink(context: &SinrContext, p: &DVector<f64>, u: &DMatrix<f64>) -> Result<DVector<f64>> {
    check_powers(p, context.users())?;
    Ok(context.downlink_coupling(u)?.sinr_transposed(p, context.downlink_noise()))
}

/// `log₂(1 + sinr)`.
pub fn rate(sinr: f64) -> f64 {
    (1.0 + sinr).log2()
}

pub fn rates(sinr: &DVector<f64>) -> DVector<f64> {
    sinr.map(rate)
}

/// Bits one AP sends per coherence interval.
pub fn fronthaul_bits(n: usize, k: usize, tau_f: usize, alpha: u32, case: QuantCase) -> u64 {
    let samples = match case {
        QuantCase::EstimateAndSignal => n * k + n * tau_f,
        QuantCase::WeightedSignal => k * tau_f,
    };
    2 * samples as u64 * alpha as u64
}

/// Largest bit depth whose traffic fits `C_fh·T_c`.
pub fn max_alpha(n: usize, k: usize, tau_f: usize, c_fh_bps: f64, t_c_s: f64, case: QuantCase) -> Result<u32> {
    if tau_f == 0 {
        return invalid("tau_f = tau_c - tau_p must be positive");
    }
    let per_bit = fronthaul_bits(n, k, tau_f, 1, case) as f64;
    Ok((c_fh_bps * t_c_s / per_bit + 1e-9).floor().min(u32::MAX as f64) as u32)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FronthaulBudget {
    pub case: QuantCase,
    /// Bit depth in use.
    pub alpha: u32,
    /// Bits per AP per coherence interval at `alpha`.
    pub bits: u64,
    /// Largest depth the link capacity admits.
    pub max_alpha: u32,
}

/// Bit budget for a configuration. The depth is `config.alpha` if set,
/// otherwise the largest admissible depth capped at `config.alpha_max`.
pub fn fronthaul_budget(config: &SystemConfig, case: QuantCase) -> Result<FronthaulBudget> {
    let tau_f = config.tau_f();
    let max = max_alpha(config.n, config.k, tau_f, config.c_fh_bps, config.t_c_s, case)?;
    let alpha = match config.alpha {
        Some(a) => a,
        None if max == 0 => {
            return Err(Error::InfeasibleBudget { alpha2: 1, budget: config.c_fh_bps * config.t_c_s });
        }
        None => max.min(config.alpha_max),
    };
    Ok(FronthaulBudget { case, alpha, bits: fronthaul_bits(config.n, config.k, tau_f, alpha, case), max_alpha: max })
}

/// Quantizer design and its linear model for a configuration.
pub fn quantizer_for(config: &SystemConfig, case: QuantCase) -> Result<(Option<QuantizerSpec>, Bussgang)> {
    if config.perfect_fronthaul {
        return Ok((None, Bussgang::PERFECT));
    }
    let budget = fronthaul_budget(config, case)?;
    let spec = QuantizerSpec::for_bits(budget.alpha)?;
    Ok((Some(spec), spec.linear_model()))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::channel::Pilots;
    use proptest::prelude::*;

    pub(crate) fn toy_stats(seed: u64, m: usize, k: usize, tau_p: usize) -> NetworkStats {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        let beta = DMatrix::from_fn(m, k, |_, _| 10f64.powf(-13.0 + 3.0 * rng.random::<f64>()));
        let seq = (0..k).map(|j| j % tau_p).collect();
        let pilots = Pilots::from_sequences(tau_p, seq).unwrap();
        NetworkStats::new(beta, pilots, 2, 3e11, 3e11).unwrap()
    }

    fn random_filters(seed: u64, m: usize, k: usize) -> DMatrix<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        let mut u = DMatrix::from_fn(m, k, |_, _| rng.random::<f64>());
        for mut c in u.column_iter_mut() {
            let n = c.norm();
            c /= n;
        }
        u
    }

    /// Direct transcription of the scalar Case 2 expression with squared
    /// filter weights in the noise and distortion sums.
    fn scalar_case2(stats: &NetworkStats, model: Bussgang, q: &DVector<f64>, u: &DMatrix<f64>) -> DVector<f64> {
        let (m, k) = stats.beta.shape();
        let n = stats.n as f64;
        let (b, g, gram) = (&stats.beta, &stats.gamma, &stats.pilots.gram);
        let r = model.distortion / model.gain.powi(2);
        DVector::from_fn(k, |kk, _| {
            let num: f64 = n * n * q[kk] * (0..m).map(|mm| u[(mm, kk)] * g[(mm, kk)]).sum::<f64>().powi(2);
            let mut den = 0.0;
            for kp in 0..k {
                if kp != kk {
                    let s: f64 = (0..m).map(|mm| u[(mm, kk)] * g[(mm, kk)] * b[(mm, kp)] / b[(mm, kk)]).sum();
                    den += n * n * q[kp] * s * s * gram[(kk, kp)];
                }
            }
            for mm in 0..m {
                let load: f64 = (0..k).map(|kp| q[kp] * b[(mm, kp)]).sum();
                den += n * u[(mm, kk)].powi(2) * (r * (2.0 * b[(mm, kk)] - g[(mm, kk)]) + g[(mm, kk)]) * load;
                den += n / stats.rho * (r + 1.0) * u[(mm, kk)].powi(2) * g[(mm, kk)];
            }
            num / den
        })
    }

    #[test]
    fn case2_matches_scalar_transcription() {
        let stats = toy_stats(1, 6, 4, 2);
        let model = QuantizerSpec::for_bits(2).unwrap().linear_model();
        let ctx = SinrContext::new(&stats, model, QuantCase::WeightedSignal);
        let u = random_filters(2, 6, 4);
        let q = DVector::from_vec(vec![1.0, 0.3, 0.7, 0.05]);
        let ours = sinr_case2(&ctx, &q, &u).unwrap();
        let oracle = scalar_case2(&stats, model, &q, &u);
        for k in 0..4 {
            assert!((ours[k] / oracle[k] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn case1_and_case2_coincide_without_quantization() {
        let stats = toy_stats(3, 5, 3, 2);
        let ctx = SinrContext::new(&stats, Bussgang::PERFECT, QuantCase::WeightedSignal);
        let u = random_filters(4, 5, 3);
        let q = DVector::from_vec(vec![0.2, 1.0, 0.6]);
        let a = sinr_case1(&ctx, &q, &u).unwrap();
        let b = sinr_case2(&ctx, &q, &u).unwrap();
        assert!((&a - &b).norm() <= 1e-12 * b.norm());
        // Perfect-fronthaul collapse of Υ and R.
        for m in 0..5 {
            for kp in 0..3 {
                assert_eq!(ctx.upsilon(0)[(m, kp)], stats.beta[(m, kp)] * stats.gamma[(m, 0)]);
            }
            assert_eq!(ctx.r()[(m, 1)], stats.gamma[(m, 1)]);
        }
    }

    #[test]
    fn isolated_user_gains_from_own_power() {
        let stats = toy_stats(5, 4, 3, 3);
        let ctx = SinrContext::new(&stats, Bussgang::PERFECT, QuantCase::WeightedSignal);
        let u = ctx.uniform_filters();
        let q1 = DVector::from_vec(vec![0.0, 0.4, 0.0]);
        let q2 = DVector::from_vec(vec![0.0, 0.8, 0.0]);
        let s1 = sinr_case2(&ctx, &q1, &u).unwrap()[1];
        let s2 = sinr_case2(&ctx, &q2, &u).unwrap()[1];
        assert!(s2 > s1);
    }

    #[test]
    fn symmetric_network_gives_equal_downlink_sinr() {
        let beta = DMatrix::from_element(3, 2, 1e-11);
        let pilots = Pilots::from_sequences(2, vec![0, 1]).unwrap();
        let stats = NetworkStats::new(beta, pilots, 2, 3e11, 3e11).unwrap();
        let ctx =
            SinrContext::new(&stats, QuantizerSpec::for_bits(3).unwrap().linear_model(), QuantCase::WeightedSignal);
        let u = ctx.uniform_filters();
        let s = sinr_downlink(&ctx, &DVector::from_element(2, 0.5), &u).unwrap();
        assert!((s[0] - s[1]).abs() < 1e-12 * s[0]);
    }

    #[test]
    fn single_user_downlink_equals_uplink() {
        let stats = toy_stats(8, 5, 1, 1);
        let ctx =
            SinrContext::new(&stats, QuantizerSpec::for_bits(2).unwrap().linear_model(), QuantCase::WeightedSignal);
        let u = random_filters(1, 5, 1);
        let p = DVector::from_element(1, 0.7);
        let coupling = ctx.coupling(&u).unwrap();
        let dl = sinr_downlink(&ctx, &p, &u).unwrap()[0];
        // Only the self term and noise remain.
        let expected = 0.7 * coupling.desired[0] / (0.7 * coupling.psi[(0, 0)] + 1.0 / stats.rho);
        assert!((dl / expected - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_filter_rejected() {
        let stats = toy_stats(1, 3, 2, 2);
        let ctx = SinrContext::new(&stats, Bussgang::PERFECT, QuantCase::WeightedSignal);
        let u = DMatrix::zeros(3, 2);
        assert!(sinr_case2(&ctx, &DVector::from_element(2, 1.0), &u).is_err());
    }

    #[test]
    fn rate_examples() {
        assert_eq!(rate(0.0), 0.0);
        assert_eq!(rate(1.0), 1.0);
        assert_eq!(rate(3.0), 2.0);
    }

    #[test]
    fn fronthaul_examples() {
        assert_eq!(fronthaul_bits(4, 20, 180, 9, QuantCase::EstimateAndSignal), 14_400);
        assert_eq!(fronthaul_bits(4, 20, 180, 2, QuantCase::WeightedSignal), 14_400);
        assert_eq!(fronthaul_bits(20, 40, 160, 8, QuantCase::EstimateAndSignal), 64_000);
        assert_eq!(fronthaul_bits(20, 40, 160, 5, QuantCase::WeightedSignal), 64_000);
        assert_eq!(max_alpha(4, 20, 180, 100e6, 1e-3, QuantCase::WeightedSignal).unwrap(), 13);
        assert!(max_alpha(4, 20, 0, 100e6, 1e-3, QuantCase::WeightedSignal).is_err());
        let cfg = SystemConfig { tau_p: 20, k: 20, n: 4, ..SystemConfig::default() };
        let budget = fronthaul_budget(&cfg, QuantCase::WeightedSignal).unwrap();
        assert_eq!((budget.max_alpha, budget.alpha), (13, 13));
        let cfg = SystemConfig { c_fh_bps: 1e3, ..SystemConfig::default() };
        assert!(matches!(fronthaul_budget(&cfg, QuantCase::WeightedSignal), Err(Error::InfeasibleBudget { .. })));
    }

    #[test]
    fn equal_budget_case_ordering_is_recorded() {
        // N=20, K=40, τ_f=160 with α₁=8 and α₂=5: same 64,000 bits.
        let stats = {
            let mut s = toy_stats(21, 20, 40, 40);
            s.n = 20;
            s
        };
        let c1 =
            SinrContext::new(&stats, QuantizerSpec::for_bits(8).unwrap().linear_model(), QuantCase::EstimateAndSignal);
        let c2 =
            SinrContext::new(&stats, QuantizerSpec::for_bits(5).unwrap().linear_model(), QuantCase::WeightedSignal);
        let u = c1.uniform_filters();
        let q = DVector::from_element(40, 1.0);
        let r1 = rates(&sinr_uplink(&c1, &q, &u).unwrap()).mean();
        let r2 = rates(&sinr_uplink(&c2, &q, &u).unwrap()).mean();
        assert!(r1.is_finite() && r2.is_finite() && r1 > 0.0 && r2 > 0.0);
        assert!((r1 - r2).abs() / r1.max(r2) < 0.5);
    }

    proptest! {
        #[test]
        fn sinr_properties(seed in 0u64..1000, flip in 0usize..4, bump in 1.01f64..3.0) {
            let stats = toy_stats(seed, 5, 4, 2);
            let model = QuantizerSpec::for_bits(2).unwrap().linear_model();
            let ctx = SinrContext::new(&stats, model, QuantCase::WeightedSignal);
            let u = random_filters(seed + 1, 5, 4);
            let q = DVector::from_fn(4, |k, _| 0.1 + 0.2 * k as f64);
            let base = sinr_case2(&ctx, &q, &u).unwrap();

            let mut neg = u.clone();
            neg.column_mut(flip).neg_mut();
            let flipped = sinr_case2(&ctx, &q, &neg).unwrap();
            prop_assert!((&flipped - &base).norm() <= 1e-12 * base.norm());

            let mut q2 = q.clone();
            q2[flip] *= bump;
            let up = sinr_case2(&ctx, &q2, &u).unwrap();
            for k in 0..4 {
                if k == flip { prop_assert!(up[k] > base[k]); } else { prop_assert!(up[k] <= base[k]); }
            }

            let finer = SinrContext::new(&stats, QuantizerSpec::for_bits(4).unwrap().linear_model(), QuantCase::WeightedSignal);
            let better = sinr_case2(&finer, &q, &u).unwrap();
            let c1_coarse = sinr_case1(&ctx, &q, &u).unwrap();
            let c1_fine = sinr_case1(&finer, &q, &u).unwrap();
            for k in 0..4 {
                prop_assert!(better[k] >= base[k]);
                prop_assert!(c1_fine[k] >= c1_coarse[k]);
            }
        }
    }
}

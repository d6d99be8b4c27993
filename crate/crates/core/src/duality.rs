//! Total-power reformulation, uplink–downlink duality and the certificate
//! built from them.
//!
//! At fixed filters the balanced uplink powers for a total budget `P` are
//! the Perron eigenvector of a (K+1)×(K+1) nonnegative matrix, and the
//! downlink powers that reproduce a set of uplink SINRs solve a K×K linear
//! system.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::config::SolverConfig;
use crate::error::{invalid, Error, Result};
use crate::maxmin::{receiver_filter, MaxMinSolution};
use crate::rates::{rate, Coupling, SinrContext};

const PERRON_TOL: f64 = 1e-12;
const PERRON_MAX_ITER: usize = 100_000;
/// Above this size the dense fallback is skipped.
const DENSE_LIMIT: usize = 65;

/// `[[DΨ, Dσ], [1ᵀDΨ/P, 1ᵀDσ/P]]` with `D = diag(1/D_k)`.
pub fn eigensystem_from_coupling(coupling: &Coupling, p_tot: f64) -> Result<DMatrix<f64>> {
    if !(p_tot > 0.0) || !p_tot.is_finite() {
        return invalid(format!("total power must be positive, got {p_tot}"));
    }
    let k = coupling.desired.len();
    if let Some(user) = coupling.desired.iter().position(|&d| !(d > 0.0)) {
        return invalid(format!("user {user} has a zero desired-signal quadratic form"));
    }
    let mut lambda = DMatrix::zeros(k + 1, k + 1);
    for i in 0..k {
        let inv = 1.0 / coupling.desired[i];
        for j in 0..k {
            lambda[(i, j)] = inv * coupling.psi[(i, j)];
        }
        lambda[(i, k)] = inv * coupling.noise[i];
    }
    for j in 0..=k {
        let column_sum: f64 = (0..k).map(|i| lambda[(i, j)]).sum();
        lambda[(k, j)] = column_sum / p_tot;
    }
    Ok(lambda)
}

pub fn eigensystem_matrix(u: &DMatrix<f64>, p_tot: f64, context: &SinrContext) -> Result<DMatrix<f64>> {
    eigensystem_from_coupling(&context.coupling(u)?, p_tot)
}

fn dense_perron(matrix: &DMatrix<f64>) -> Result<(f64, DVector<f64>)> {
    let n = matrix.nrows();
    let eigenvalues = matrix.clone().schur().complex_eigenvalues();
    let value = eigenvalues
        .iter()
        .filter(|z| z.im.abs() <= 1e-9 * z.re.abs().max(1e-300))
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max);
    if !(value > 0.0) {
        return Err(Error::Internal(format!("no positive real eigenvalue among {eigenvalues:?}")));
    }
    let shifted = matrix - DMatrix::identity(n, n) * value;
    let svd = shifted.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::Internal("SVD produced no right singular vectors".into()))?;
    let (idx, _) = svd.singular_values.argmin();
    let mut v: DVector<f64> = v_t.row(idx).transpose();
    if v.sum() < 0.0 {
        v.neg_mut();
    }
    if v.iter().any(|&x| x < -1e-9 * v.amax()) {
        return Err(Error::Internal(format!("dense Perron vector has mixed signs: {v:?}")));
    }
    Ok((value, v.map(|x| x.max(0.0))))
}

/// Perron root and a positive eigenvector (unit 1-norm) of a nonnegative
/// matrix. Power iteration first, dense eigensolver as fallback.
pub fn perron(matrix: &DMatrix<f64>) -> Result<(f64, DVector<f64>)> {
    let n = matrix.nrows();
    if n == 0 || matrix.ncols() != n {
        return invalid("Perron pair needs a nonempty square matrix");
    }
    if matrix.iter().any(|&x| x < 0.0 || !x.is_finite()) {
        return invalid("Perron pair needs a finite nonnegative matrix");
    }
    let mut v = DVector::from_element(n, 1.0 / n as f64);
    let mut value = 0.0;
    for _ in 0..PERRON_MAX_ITER {
        let w = matrix * &v;
        let norm = w.sum();
        if !(norm > 0.0) {
            break;
        }
        let next = w / norm;
        let change = (&next - &v).amax();
        v = next;
        value = norm;
        if change <= PERRON_TOL {
            return Ok((value, v));
        }
    }
    if n <= DENSE_LIMIT {
        let (value, v) = dense_perron(matrix)?;
        return Ok((value, &v / v.sum()));
    }
    Err(Error::Internal(format!("power iteration did not converge; last estimate {value:e}")))
}

/// Balanced powers for filters `u` under total budget `p_tot`, with the
/// common SINR `1/λ`.
pub fn total_power_step(u: &DMatrix<f64>, p_tot: f64, context: &SinrContext) -> Result<(DVector<f64>, f64)> {
    let lambda = eigensystem_matrix(u, p_tot, context)?;
    let (value, v) = perron(&lambda)?;
    let k = context.users();
    let last = v[k];
    if !(last > 0.0) {
        return Err(Error::Internal("Perron vector has a zero noise component".into()));
    }
    let q = DVector::from_fn(k, |i, _| v[i] / last);
    Ok((q, 1.0 / value))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TotalPowerSolution {
    pub u: DMatrix<f64>,
    pub q: DVector<f64>,
    pub t: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Total budget used in the last round.
    pub p_tot: f64,
}

fn alternate_total(context: &SinrContext, p_tot: f64, solver: &SolverConfig) -> Result<TotalPowerSolution> {
    let k = context.users();
    let mut q = DVector::from_element(k, p_tot / k as f64);
    let mut last_t: Option<f64> = None;
    let mut state = None;
    let mut iterations = 0;
    let mut converged = false;
    for _ in 0..solver.max_iterations {
        iterations += 1;
        let u = receiver_filter(&q, context)?.u;
        let (q_new, t) = total_power_step(&u, p_tot, context)?;
        q = q_new;
        let done = last_t.is_some_and(|old| (t - old).abs() <= 1e-12 * t);
        last_t = Some(t);
        state = Some((u, t));
        if done {
            converged = true;
            break;
        }
    }
    let (u, t) = state.ok_or_else(|| Error::Internal("no iterations run".into()))?;
    Ok(TotalPowerSolution { u, q, t, iterations, converged, p_tot })
}

/// Max-min SINR under `Σq ≤ p_tot`. With `per_user_cap`, the Perron powers
/// are divided by the caps, normalized by the largest ratio, and the budget
/// is reset to their sum (never above `p_tot`) until the largest power sits
/// on its cap.
pub fn solve_total_power(
    context: &SinrContext,
    p_tot: f64,
    per_user_cap: Option<f64>,
    solver: &SolverConfig,
) -> Result<TotalPowerSolution> {
    if !(p_tot > 0.0) {
        return invalid(format!("total power must be positive, got {p_tot}"));
    }
    let mut solution = alternate_total(context, p_tot, solver)?;
    let Some(cap) = per_user_cap else {
        return Ok(solution);
    };
    for _ in 0..solver.max_iterations {
        let worst = solution.q.iter().map(|&x| x / cap).fold(0.0, f64::max);
        if solution.p_tot <= p_tot && (worst - 1.0).abs() <= 1e-10 || worst < 1.0 && solution.p_tot >= p_tot {
            break;
        }
        let budget = (solution.q.sum() / worst).min(p_tot);
        solution = alternate_total(context, budget, solver)?;
    }
    Ok(solution)
}

/// Downlink powers meeting `targets` exactly with precoders `u`.
pub fn downlink_powers(u: &DMatrix<f64>, targets: &DVector<f64>, context: &SinrContext) -> Result<DVector<f64>> {
    let coupling = context.downlink_coupling(u)?;
    let k = context.users();
    if targets.len() != k || targets.iter().any(|&t| !(t > 0.0) || !t.is_finite()) {
        return invalid("targets must be positive, finite and one per user");
    }
    // p_k D_k / t_k = (Ψᵀp)_k + ν  ⇔  (I − diag(t/D)Ψᵀ) p = ν·t/D.
    let scaled = DMatrix::from_fn(k, k, |i, j| targets[i] / coupling.desired[i] * coupling.psi[(j, i)]);
    let radius = spectral_radius(&scaled)?;
    if radius >= 1.0 {
        return Err(Error::InfeasibleTargets(format!("spectral radius {radius:.9} >= 1")));
    }
    let rhs = DVector::from_fn(k, |i, _| context.downlink_noise() * targets[i] / coupling.desired[i]);
    let p = (DMatrix::identity(k, k) - scaled)
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::InfeasibleTargets("singular downlink system".into()))?;
    if let Some(user) = p.iter().position(|&x| !(x >= 0.0)) {
        return Err(Error::InfeasibleTargets(format!("negative power {} for user {user}", p[user])));
    }
    Ok(p)
}

pub fn spectral_radius(matrix: &DMatrix<f64>) -> Result<f64> {
    if matrix.iter().all(|&x| x >= 0.0) {
        return perron(matrix).map(|(value, _)| value);
    }
    Ok(matrix.clone().schur().complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualityTolerances {
    pub sinr: f64,
    pub balance: f64,
    pub rate: f64,
}

impl Default for DualityTolerances {
    fn default() -> Self {
        Self { sinr: 1e-6, balance: 1e-6, rate: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualityReport {
    pub p_tot: f64,
    pub uplink_min_rate: f64,
    pub total_power_min_rate: f64,
    pub downlink_min_rate: f64,
    pub downlink_powers: Vec<f64>,
    /// Per-user `|SINR_DL − SINR_UL| / SINR_UL`.
    pub sinr_mismatch: Vec<f64>,
    /// `|N·Σ_k p_k Σ_m u²γ(σ²/ȧ²+1) − Σq| / Σq`.
    pub balance_residual: f64,
    /// `|R_P6 − R_P2| / R_P2`.
    pub rate_gap: f64,
    pub tolerances: DualityTolerances,
    pub sinr_ok: bool,
    pub balance_ok: bool,
    pub rate_ok: bool,
    pub passed: bool,
    /// Set when the downlink system could not be solved.
    pub error: Option<String>,
}

/// Checks a max-min uplink solution against its total-power and downlink
/// counterparts. Failures are reported, not returned as errors.
pub fn verify_duality(
    solution: &MaxMinSolution,
    context: &SinrContext,
    solver: &SolverConfig,
    tolerances: DualityTolerances,
) -> Result<DualityReport> {
    let p_tot = solution.q.sum();
    let uplink = context.coupling(&solution.u)?.sinr(&solution.q);
    let uplink_min_rate = rate(uplink.min());
    let total = solve_total_power(context, p_tot, None, solver)?;
    let total_power_min_rate = rate(total.t);
    let rate_gap = (total_power_min_rate - uplink_min_rate).abs() / uplink_min_rate;

    let (p, error) = match downlink_powers(&solution.u, &uplink, context) {
        Ok(p) => (p, None),
        Err(e) => (DVector::from_element(context.users(), f64::NAN), Some(e.to_string())),
    };
    let (sinr_mismatch, downlink_min_rate, balance_residual) = if error.is_none() {
        let downlink = crate::rates::sinr_downlink(context, &p, &solution.u)?;
        let mismatch: Vec<f64> = downlink.iter().zip(uplink.iter()).map(|(d, u)| (d - u).abs() / u).collect();
        let weights = context.balance_weights(&solution.u);
        let lhs = context.n * p.dot(&weights);
        (mismatch, rate(downlink.min()), (lhs - p_tot).abs() / p_tot)
    } else {
        (vec![f64::INFINITY; context.users()], 0.0, f64::INFINITY)
    };
    let sinr_ok = sinr_mismatch.iter().all(|&x| x <= tolerances.sinr);
    let balance_ok = balance_residual <= tolerances.balance;
    let rate_ok = rate_gap <= tolerances.rate;
    Ok(DualityReport {
        p_tot,
        uplink_min_rate,
        total_power_min_rate,
        downlink_min_rate,
        downlink_powers: p.iter().copied().collect(),
        sinr_mismatch,
        balance_residual,
        rate_gap,
        tolerances,
        sinr_ok,
        balance_ok,
        rate_ok,
        passed: sinr_ok && balance_ok && rate_ok,
        error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{NetworkStats, Pilots};
    use crate::config::QuantCase;
    use crate::maxmin::solve_maxmin;
    use crate::quantizer::{Bussgang, QuantizerSpec};
    use crate::rates::sinr_downlink;
    use crate::rates::tests::toy_stats;

    fn ctx(seed: u64, m: usize, k: usize, tau_p: usize) -> SinrContext {
        SinrContext::new(
            &toy_stats(seed, m, k, tau_p),
            QuantizerSpec::for_bits(2).unwrap().linear_model(),
            QuantCase::WeightedSignal,
        )
    }

    #[test]
    fn single_user_eigensystem() {
        let c = ctx(1, 6, 1, 1);
        let u = c.uniform_filters();
        let (_, t) = total_power_step(&u, 0.7, &c).unwrap();
        let direct = c.coupling(&u).unwrap().sinr(&DVector::from_element(1, 0.7))[0];
        assert!((t / direct - 1.0).abs() < 1e-10);
        let sol = solve_total_power(&c, 0.7, None, &SolverConfig::default()).unwrap();
        assert!((sol.q[0] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn symmetric_pair_gets_equal_power() {
        let beta = DMatrix::from_fn(3, 2, |m, _| 1e-11 * (m + 2) as f64);
        let stats = NetworkStats::new(beta, Pilots::from_sequences(1, vec![0, 0]).unwrap(), 2, 3e11, 3e11).unwrap();
        let c = SinrContext::new(&stats, Bussgang::PERFECT, QuantCase::WeightedSignal);
        let (q, _) = total_power_step(&c.uniform_filters(), 2.0, &c).unwrap();
        assert!((q[0] - q[1]).abs() < 1e-10);
        assert!((q.sum() - 2.0).abs() < 1e-10);
    }

    #[test]
    fn power_iteration_matches_dense() {
        for seed in 0..10 {
            let c = ctx(seed, 7, 5, 2);
            let lambda = eigensystem_matrix(&c.uniform_filters(), 3.0, &c).unwrap();
            let (a, va) = perron(&lambda).unwrap();
            let (b, _) = dense_perron(&lambda).unwrap();
            assert!((a / b - 1.0).abs() < 1e-10, "seed {seed}: {a} vs {b}");
            assert!(va.iter().all(|&x| x > 0.0));
            // Eigenvector scale freedom.
            let scaled = &va * 3.7;
            let lhs = &lambda * &scaled;
            assert!((lhs - scaled * a).amax() < 1e-9 * a * 3.7);
        }
    }

    #[test]
    fn duality_round_trip() {
        let c = ctx(11, 10, 4, 2);
        let solver = SolverConfig::default();
        let sol = solve_maxmin(&c, &solver).unwrap();
        let report = verify_duality(&sol, &c, &solver, DualityTolerances::default()).unwrap();
        assert!(report.passed, "{report:#?}");
        // Perfect fronthaul: the power balance reduces to N·ΣΣγ|w|² = Σq.
        let perfect = SinrContext::new(&toy_stats(11, 10, 4, 2), Bussgang::PERFECT, QuantCase::WeightedSignal);
        let sol = solve_maxmin(&perfect, &solver).unwrap();
        let report = verify_duality(&sol, &perfect, &solver, DualityTolerances::default()).unwrap();
        assert!(report.balance_ok && report.sinr_ok, "{report:#?}");
    }

    #[test]
    fn perturbed_powers_fail_sinr_check() {
        let c = ctx(12, 10, 4, 2);
        let solver = SolverConfig::default();
        let mut sol = solve_maxmin(&c, &solver).unwrap();
        let report = verify_duality(&sol, &c, &solver, DualityTolerances::default()).unwrap();
        let p = DVector::from_vec(report.downlink_powers.clone());
        let targets = c.coupling(&sol.u).unwrap().sinr(&sol.q);
        sol.q[0] *= 1.1;
        let moved = c.coupling(&sol.u).unwrap().sinr(&sol.q);
        let dl = sinr_downlink(&c, &p, &sol.u).unwrap();
        let mismatch = (dl[0] - moved[0]).abs() / moved[0];
        assert!(mismatch > 1e-3);
        assert!((dl[0] - targets[0]).abs() / targets[0] < 1e-9);
        let report = verify_duality(&sol, &c, &solver, DualityTolerances::default()).unwrap();
        assert!(!report.rate_ok || !report.balance_ok || !report.sinr_ok);
    }

    #[test]
    fn infeasibility_at_unit_radius() {
        let c = ctx(13, 8, 3, 1);
        let u = c.uniform_filters();
        let coupling = c.downlink_coupling(&u).unwrap();
        let k = 3;
        // Common target t: radius(t·diag(1/D)Ψᵀ) = t·r₁, so the boundary is 1/r₁.
        let base = DMatrix::from_fn(k, k, |i, j| coupling.psi[(j, i)] / coupling.desired[i]);
        let r1 = spectral_radius(&base).unwrap();
        let edge = 1.0 / r1;
        assert!(downlink_powers(&u, &DVector::from_element(k, edge * 0.999), &c).is_ok());
        assert!(matches!(
            downlink_powers(&u, &DVector::from_element(k, edge * 1.001), &c),
            Err(Error::InfeasibleTargets(_))
        ));
        // Monotone feasibility in the common target.
        let mut feasible_seen_after_infeasible = false;
        let mut was_infeasible = false;
        for i in 1..40 {
            let t = edge * i as f64 / 20.0;
            let ok = downlink_powers(&u, &DVector::from_element(k, t), &c).is_ok();
            if was_infeasible && ok {
                feasible_seen_after_infeasible = true;
            }
            was_infeasible |= !ok;
        }
        assert!(!feasible_seen_after_infeasible);
    }

    #[test]
    fn per_user_caps_are_enforced() {
        let c = ctx(14, 8, 3, 3);
        let sol = solve_total_power(&c, 3.0, Some(0.5), &SolverConfig::default()).unwrap();
        assert!(sol.q.iter().all(|&x| x <= 0.5 * (1.0 + 1e-9)));
        assert!(sol.q.iter().any(|&x| (x - 0.5).abs() < 1e-6));
    }

    #[test]
    fn literal_forms_break_the_balance() {
        let c = ctx(15, 10, 4, 2);
        let solver = SolverConfig::default();
        let sol = solve_maxmin(&c, &solver).unwrap();
        let literal = c.clone().with_literal_forms(true);
        let report = verify_duality(&sol, &literal, &solver, DualityTolerances::default()).unwrap();
        assert!(!report.balance_ok);
    }
}

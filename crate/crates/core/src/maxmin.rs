//! Alternating max-min SINR solver: rank-one generalized-eigenvector
//! receive filters, then bisection power allocation, until the per-user
//! SINRs settle.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::SolverConfig;
use crate::error::{invalid, Error, Result};
use crate::rates::{Coupling, SinrContext};

const FIXED_POINT_TOL: f64 = 1e-10;
const FIXED_POINT_SWEEPS: usize = 500;
const RIDGE_SCALE: f64 = 1e-12;
const POLISH_TOL: f64 = 1e-14;

/// A diagonal load added to make `B_k` factorizable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RidgeEvent {
    pub user: usize,
    pub ridge: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Filters {
    /// M×K, unit-norm columns supported on each user's serving APs.
    pub u: DMatrix<f64>,
    pub ridges: Vec<RidgeEvent>,
}

/// Interference-plus-noise matrix `B_k` and signal vector `Γ_k` restricted to
/// the serving APs of user `k`. SINR_k = q_k·N²(uᵀΓ)²/(uᵀBu).
pub fn filter_matrices(context: &SinrContext, q: &DVector<f64>, k: usize) -> (DMatrix<f64>, DVector<f64>) {
    let aps = &context.active[k];
    let s = aps.len();
    let n = context.n;
    let lambda = context.lambda(k);
    let upsilon = context.upsilon(k);
    let mut b = DMatrix::zeros(s, s);
    for other in 0..context.users() {
        let weight = n * n * q[other] * context.gram[(k, other)];
        if other != k && weight != 0.0 {
            let v = DVector::from_fn(s, |i, _| lambda[(aps[i], other)]);
            b.syger(weight, &v, &v, 1.0);
        }
        for (i, &m) in aps.iter().enumerate() {
            b[(i, i)] += n * q[other] * upsilon[(m, other)];
        }
    }
    for (i, &m) in aps.iter().enumerate() {
        b[(i, i)] += n / context.rho * context.r()[(m, k)];
    }
    let gamma = DVector::from_fn(s, |i, _| context.gamma[(aps[i], k)]);
    (b, gamma)
}

fn solve_user(context: &SinrContext, q: &DVector<f64>, k: usize) -> Result<(Vec<f64>, Option<f64>)> {
    let (b, gamma) = filter_matrices(context, q, k);
    if gamma.iter().all(|&g| g == 0.0) {
        return Err(Error::Conditioning { user: k, detail: "no estimated signal on any serving AP".into() });
    }
    let (chol, ridge) = match b.clone().cholesky() {
        Some(c) => (c, None),
        None => {
            let ridge = RIDGE_SCALE * b.trace() / b.nrows() as f64;
            let loaded = &b + DMatrix::identity(b.nrows(), b.nrows()) * ridge;
            match loaded.cholesky() {
                Some(c) => (c, Some(ridge)),
                None => {
                    return Err(Error::Conditioning {
                        user: k,
                        detail: format!("B_k not positive definite even with ridge {ridge:e}"),
                    })
                }
            }
        }
    };
    let x = chol.solve(&gamma);
    let norm = x.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::Conditioning { user: k, detail: format!("filter solve produced norm {norm}") });
    }
    Ok(((x / norm).iter().copied().collect(), ridge))
}

/// SINR-maximizing filters `u_k ∝ B_k⁻¹Γ_k` at fixed powers.
pub fn receiver_filter(q: &DVector<f64>, context: &SinrContext) -> Result<Filters> {
    let k = context.users();
    if q.len() != k || q.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
        return invalid("powers must be finite, nonnegative and one per user");
    }
    let columns: Vec<(Vec<f64>, Option<f64>)> =
        (0..k).into_par_iter().map(|user| solve_user(context, q, user)).collect::<Result<_>>()?;
    let mut u = DMatrix::zeros(context.aps(), k);
    let mut ridges = Vec::new();
    for (user, (column, ridge)) in columns.into_iter().enumerate() {
        for (value, &m) in column.into_iter().zip(&context.active[user]) {
            u[(m, user)] = value;
        }
        if let Some(ridge) = ridge {
            ridges.push(RidgeEvent { user, ridge });
        }
    }
    Ok(Filters { u, ridges })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerAllocation {
    pub q: DVector<f64>,
    /// Achieved minimum SINR.
    pub t: f64,
    pub bisection_steps: usize,
}

/// `A = diag(1/D)·Ψ` and `c = σ/D`: SINR_k ≥ t ⇔ q_k ≥ t·((Aq)_k + c_k).
pub fn normalized_coefficients(coupling: &Coupling) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let k = coupling.desired.len();
    for i in 0..k {
        let d = coupling.desired[i];
        if !(d > 0.0) || !d.is_finite() {
            return invalid(format!("user {i} has desired-signal gain {d}"));
        }
    }
    let a = DMatrix::from_fn(k, k, |i, j| coupling.psi[(i, j)] / coupling.desired[i]);
    let c = DVector::from_fn(k, |i, _| coupling.noise[i] / coupling.desired[i]);
    if a.iter().chain(c.iter()).any(|x| !x.is_finite() || *x < 0.0) {
        return invalid("non-finite or negative SINR coefficients");
    }
    Ok((a, c))
}

/// Smallest power vector meeting SINR `t` for everyone, ignoring the power
/// cap. `None` when the target is unreachable at any power.
fn balanced_powers(a: &DMatrix<f64>, c: &DVector<f64>, t: f64) -> Option<DVector<f64>> {
    let k = c.len();
    let system = DMatrix::identity(k, k) - a * t;
    let q = system.lu().solve(&(c * t))?;
    q.iter().all(|x| *x > 0.0 && x.is_finite()).then_some(q)
}

/// Feasibility of target `t` under per-user cap `p_max`.
fn feasible(a: &DMatrix<f64>, c: &DVector<f64>, t: f64, p_max: f64) -> bool {
    let k = c.len();
    let mut q = DVector::from_element(k, p_max);
    for _ in 0..FIXED_POINT_SWEEPS {
        let demand = (a * &q + c) * t;
        if demand.iter().all(|&x| x <= p_max) {
            // q ≥ demand(q): q itself meets every target.
            return true;
        }
        let next = demand.map(|x| x.min(p_max));
        let change = (&next - &q).amax() / p_max;
        q = next;
        if change <= FIXED_POINT_TOL {
            return false;
        }
    }
    balanced_powers(a, c, t).is_some_and(|q| q.iter().all(|&x| x <= p_max))
}

/// Max-min power allocation at fixed filters: bisection on the common target
/// with a monotone fixed-point feasibility probe.
pub fn power_allocate(u: &DMatrix<f64>, context: &SinrContext, p_max: f64, tolerance: f64) -> Result<PowerAllocation> {
    if !(p_max > 0.0) || !(tolerance > 0.0) {
        return invalid(format!("need p_max > 0 and tolerance > 0, got {p_max} and {tolerance}"));
    }
    let coupling = context.coupling(u)?;
    let (a, c) = normalized_coefficients(&coupling)?;
    let k = c.len();
    // Single-user bound: no interference from others, full own power.
    let mut hi = (0..k).map(|i| p_max / (a[(i, i)] * p_max + c[i])).fold(f64::INFINITY, f64::min);
    let mut lo = 0.0;
    if !hi.is_finite() {
        return Err(Error::Internal(format!("bisection upper bound is {hi}")));
    }
    if feasible(&a, &c, hi, p_max) {
        lo = hi;
    }
    let mut steps = 0;
    while hi - lo > tolerance * hi {
        let mid = 0.5 * (lo + hi);
        if feasible(&a, &c, mid, p_max) {
            lo = mid;
        } else {
            hi = mid;
        }
        steps += 1;
        if steps > 200 {
            return Err(Error::Internal(format!("bisection did not close: lo = {lo}, hi = {hi}")));
        }
    }
    // Polish the certified bracket with the exact linear-system test so the
    // final rescale to the power cap does not unbalance the users.
    let mut polish = hi;
    if lo > 0.0 {
        while polish - lo > POLISH_TOL * polish {
            let mid = 0.5 * (lo + polish);
            if balanced_powers(&a, &c, mid).is_some_and(|q| q.iter().all(|&x| x <= p_max)) {
                lo = mid;
            } else {
                polish = mid;
            }
        }
    }
    let q = if lo > 0.0 {
        let q = balanced_powers(&a, &c, lo)
            .ok_or_else(|| Error::Internal(format!("no balanced powers at certified target {lo}")))?;
        let scale = q.iter().map(|&x| p_max / x).fold(f64::INFINITY, f64::min);
        q * scale
    } else {
        DVector::from_element(k, p_max)
    };
    let t = coupling.sinr(&q).min();
    Ok(PowerAllocation { q, t, bisection_steps: steps })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxMinSolution {
    pub u: DMatrix<f64>,
    pub q: DVector<f64>,
    /// Minimum SINR at (u, q).
    pub t: f64,
    pub sinr: DVector<f64>,
    pub iterations: usize,
    /// Minimum SINR after every iteration.
    pub trace: Vec<f64>,
    pub converged: bool,
    pub ridges: Vec<RidgeEvent>,
}

impl MaxMinSolution {
    pub fn rates(&self) -> DVector<f64> {
        crate::rates::rates(&self.sinr)
    }

    pub fn min_rate(&self) -> f64 {
        crate::rates::rate(self.t)
    }
}

fn relative_change(new: &DVector<f64>, old: &DVector<f64>) -> f64 {
    new.iter().zip(old.iter()).map(|(a, b)| (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)).fold(0.0, f64::max)
}

/// Alternate filter and power updates from full power until no user's SINR
/// moves by more than `epsilon` (relative).
pub fn solve_maxmin(context: &SinrContext, solver: &SolverConfig) -> Result<MaxMinSolution> {
    let k = context.users();
    let mut q = DVector::from_element(k, solver.p_max);
    let mut previous: Option<DVector<f64>> = None;
    let mut trace = Vec::new();
    let mut ridges = Vec::new();
    let mut converged = false;
    let mut state = None;
    for _ in 0..solver.max_iterations {
        let filters = receiver_filter(&q, context)?;
        ridges.extend(filters.ridges.iter().copied());
        let coupling = context.coupling(&filters.u)?;
        let allocation = power_allocate(&filters.u, context, solver.p_max, solver.bisection_tol)?;
        // Never accept powers worse than the previous ones under the new filters.
        let kept = coupling.sinr(&q);
        let (q_new, sinr) = if kept.min() > allocation.t {
            (q.clone(), kept)
        } else {
            let sinr = coupling.sinr(&allocation.q);
            (allocation.q, sinr)
        };
        trace.push(sinr.min());
        let done = previous.as_ref().is_some_and(|old| relative_change(&sinr, old) <= solver.epsilon);
        q = q_new;
        previous = Some(sinr.clone());
        state = Some((filters.u, sinr));
        if done {
            converged = true;
            break;
        }
    }
    let (u, sinr) = state.ok_or_else(|| Error::Internal("solver ran no iterations".into()))?;
    Ok(MaxMinSolution { t: sinr.min(), u, q, sinr, iterations: trace.len(), trace, converged, ridges })
}

/// Uniform filters `1/√|S_k|` with optimal powers only.
pub fn solve_baseline(context: &SinrContext, solver: &SolverConfig) -> Result<MaxMinSolution> {
    let u = context.uniform_filters();
    let allocation = power_allocate(&u, context, solver.p_max, solver.bisection_tol)?;
    let sinr = context.coupling(&u)?.sinr(&allocation.q);
    Ok(MaxMinSolution {
        t: sinr.min(),
        u,
        q: allocation.q,
        sinr,
        iterations: 1,
        trace: vec![allocation.t],
        converged: true,
        ridges: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{NetworkStats, Pilots};
    use crate::config::QuantCase;
    use crate::quantizer::{Bussgang, QuantizerSpec};
    use crate::rates::tests::toy_stats;
    use proptest::prelude::*;

    fn context(seed: u64, m: usize, k: usize, tau_p: usize) -> SinrContext {
        let stats = toy_stats(seed, m, k, tau_p);
        SinrContext::new(&stats, QuantizerSpec::for_bits(2).unwrap().linear_model(), QuantCase::WeightedSignal)
    }

    /// Largest generalized eigenvalue of (A, B) via Cholesky whitening.
    fn dense_gevp_max(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        let l = b.clone().cholesky().unwrap().unpack();
        let li = l.clone().try_inverse().unwrap();
        let c = &li * a * li.transpose();
        let c = (&c + c.transpose()) * 0.5;
        c.symmetric_eigen().eigenvalues.max()
    }

    #[test]
    fn identity_b_gives_matched_filter() {
        // With no interference, no distortion and unit noise weights B_k ∝ I.
        let beta = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        let stats = NetworkStats::new(beta, Pilots::from_sequences(1, vec![0]).unwrap(), 1, 1.0, 1.0).unwrap();
        let mut ctx = SinrContext::new(&stats, Bussgang::PERFECT, QuantCase::WeightedSignal);
        ctx.rho = 1e30;
        let f = receiver_filter(&DVector::from_element(1, 0.0), &ctx).unwrap();
        // B = diag(N/ρ·γ): u ∝ 1 over γ > 0.
        for m in 0..3 {
            assert!((f.u[(m, 0)] - 1.0 / 3f64.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn single_ap_filter_is_one() {
        let ctx = context(2, 1, 3, 3);
        let f = receiver_filter(&DVector::from_element(3, 1.0), &ctx).unwrap();
        for k in 0..3 {
            assert!((f.u[(0, k)].abs() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn filter_matches_dense_gevp() {
        for seed in 0..10 {
            let ctx = context(seed, 8, 4, 2);
            let q = DVector::from_fn(4, |k, _| 0.2 + 0.2 * k as f64);
            let f = receiver_filter(&q, &ctx).unwrap();
            let sinr = ctx.coupling(&f.u).unwrap().sinr(&q);
            for k in 0..4 {
                let (b, g) = filter_matrices(&ctx, &q, k);
                let a = &g * g.transpose() * (ctx.n * ctx.n * q[k]);
                let best = dense_gevp_max(&a, &b);
                assert!((sinr[k] / best - 1.0).abs() < 1e-10, "seed {seed} user {k}");
            }
        }
    }

    #[test]
    fn filter_invariant_to_joint_power_and_noise_scaling() {
        let ctx = context(4, 6, 3, 3);
        let q = DVector::from_vec(vec![0.3, 0.9, 0.5]);
        let base = receiver_filter(&q, &ctx).unwrap().u;
        // Scaling every power and ρ together leaves each quotient unchanged.
        let mut scaled_ctx = ctx.clone();
        scaled_ctx.rho *= 4.0;
        let scaled = receiver_filter(&(&q * 0.25), &scaled_ctx).unwrap().u;
        assert!((scaled - &base).norm() < 1e-10);
        // Without noise, scaling the powers alone is enough.
        let mut quiet = ctx.clone();
        quiet.rho = 1e40;
        let a = receiver_filter(&q, &quiet).unwrap().u;
        let b = receiver_filter(&(&q * 7.0), &quiet).unwrap().u;
        assert!((a - b).norm() < 1e-10);
    }

    #[test]
    fn single_user_gets_full_power() {
        let ctx = context(5, 5, 1, 1);
        let u = ctx.uniform_filters();
        let alloc = power_allocate(&u, &ctx, 1.0, 1e-6).unwrap();
        assert!((alloc.q[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_users_get_equal_power() {
        let beta = DMatrix::from_fn(4, 2, |m, _| 1e-11 * (m + 1) as f64);
        let stats = NetworkStats::new(beta, Pilots::from_sequences(1, vec![0, 0]).unwrap(), 2, 3e11, 3e11).unwrap();
        let ctx =
            SinrContext::new(&stats, QuantizerSpec::for_bits(3).unwrap().linear_model(), QuantCase::WeightedSignal);
        let alloc = power_allocate(&ctx.uniform_filters(), &ctx, 1.0, 1e-8).unwrap();
        assert!((alloc.q[0] - alloc.q[1]).abs() < 1e-9);
        let s = ctx.coupling(&ctx.uniform_filters()).unwrap().sinr(&alloc.q);
        assert!((s[0] - s[1]).abs() < 1e-9 * s[0]);
    }

    #[test]
    fn power_allocation_beats_grid() {
        for seed in 0..5 {
            let ctx = context(100 + seed, 10, 3, 1);
            let u = ctx.uniform_filters();
            let alloc = power_allocate(&u, &ctx, 1.0, 1e-6).unwrap();
            let coupling = ctx.coupling(&u).unwrap();
            let mut best: f64 = 0.0;
            let grid = 60;
            for i in 1..=grid {
                for j in 1..=grid {
                    for l in 1..=grid {
                        let q = DVector::from_vec(vec![i as f64, j as f64, l as f64]) / grid as f64;
                        best = best.max(coupling.sinr(&q).min());
                    }
                }
            }
            assert!(alloc.t >= best * (1.0 - 1e-6), "seed {seed}: {} < {best}", alloc.t);
            assert!(alloc.q.iter().all(|&x| x <= 1.0 + 1e-12));
            let s = coupling.sinr(&alloc.q);
            assert!(s.max() - s.min() <= 3e-6 * alloc.t);
        }
    }

    #[test]
    fn solver_trace_is_monotone_and_beats_baseline() {
        let solver = SolverConfig::default();
        for seed in 0..5 {
            let ctx = context(200 + seed, 12, 4, 2);
            let sol = solve_maxmin(&ctx, &solver).unwrap();
            for w in sol.trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-9, "seed {seed}: {:?}", sol.trace);
            }
            assert!((sol.t - ctx.coupling(&sol.u).unwrap().sinr(&sol.q).min()).abs() < 1e-12 * sol.t);
            for k in 0..4 {
                assert!((sol.u.column(k).norm() - 1.0).abs() < 1e-12);
            }
            let base = solve_baseline(&ctx, &solver).unwrap();
            assert!(sol.t >= base.t * (1.0 - 1e-9));
        }
    }

    #[test]
    fn symmetric_perfect_network_converges_fast() {
        let beta = DMatrix::from_element(4, 3, 1e-11);
        let stats = NetworkStats::new(beta, Pilots::from_sequences(3, vec![0, 1, 2]).unwrap(), 2, 3e11, 3e11).unwrap();
        let ctx = SinrContext::new(&stats, Bussgang::PERFECT, QuantCase::WeightedSignal);
        let sol = solve_maxmin(&ctx, &SolverConfig::default()).unwrap();
        assert!(sol.converged && sol.iterations <= 2);
        assert!(sol.sinr.max() - sol.sinr.min() < 1e-9 * sol.t);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn allocation_respects_caps_and_balances(seed in 0u64..10_000, p_max in 0.1f64..5.0) {
            let ctx = context(seed, 6, 3, 2);
            let u = ctx.uniform_filters();
            let alloc = power_allocate(&u, &ctx, p_max, 1e-6).unwrap();
            prop_assert!(alloc.q.iter().all(|&x| x > 0.0 && x <= p_max * (1.0 + 1e-12)));
            prop_assert!(alloc.q.iter().any(|&x| (x - p_max).abs() <= 1e-9 * p_max));
            let s = ctx.coupling(&u).unwrap().sinr(&alloc.q);
            prop_assert!(s.max() - s.min() <= 3e-6 * alloc.t);
        }
    }
}

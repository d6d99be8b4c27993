//! Fronthaul-aware user assignment: each AP forwards at most `K_m` users,
//! which frees bits for a deeper quantizer.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::channel::NetworkStats;
use crate::config::{QuantCase, SolverConfig, SystemConfig};
use crate::error::{invalid, Error, Result};
use crate::maxmin::{solve_maxmin, MaxMinSolution};
use crate::quantizer::{Bussgang, QuantizerSpec};
use crate::rates::SinrContext;

/// Largest `K_m` with `α₂·K_m ≤ C_fh·T_c/(2τ_f)`.
pub fn cap_users_per_ap(c_fh_bps: f64, t_c_s: f64, tau_f: usize, alpha2: u32) -> Result<usize> {
    if !(c_fh_bps > 0.0 && t_c_s > 0.0) || tau_f == 0 || alpha2 == 0 {
        return invalid("capacity, coherence time, tau_f and alpha2 must be positive");
    }
    let k_m = (c_fh_bps * t_c_s / (2.0 * tau_f as f64 * alpha2 as f64) + 1e-9).floor();
    if k_m < 1.0 {
        return Err(Error::InfeasibleBudget { alpha2, budget: c_fh_bps * t_c_s });
    }
    Ok(k_m as usize)
}

/// Deepest `α₂` with `α₂·K_m ≤ C_fh·T_c/(2τ_f)`.
pub fn bits_for_cap(c_fh_bps: f64, t_c_s: f64, tau_f: usize, k_m: usize) -> Result<u32> {
    if !(c_fh_bps > 0.0 && t_c_s > 0.0) || tau_f == 0 || k_m == 0 {
        return invalid("capacity, coherence time, tau_f and K_m must be positive");
    }
    let alpha = (c_fh_bps * t_c_s / (2.0 * tau_f as f64 * k_m as f64) + 1e-9).floor();
    if alpha < 1.0 {
        return Err(Error::InfeasibleBudget { alpha2: 1, budget: c_fh_bps * t_c_s });
    }
    Ok(alpha.min(u32::MAX as f64) as u32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Repair {
    pub user: usize,
    pub ap: usize,
    pub evicted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub users_per_ap_cap: usize,
    /// Bit depth the cap buys, once known.
    pub alpha2: Option<u32>,
    /// `T_m`, ascending.
    pub per_ap: Vec<Vec<usize>>,
    /// `S_k`, ascending.
    pub per_user: Vec<Vec<usize>>,
    pub repairs: Vec<Repair>,
}

impl Assignment {
    pub fn full(aps: usize, users: usize) -> Self {
        Self {
            users_per_ap_cap: users,
            alpha2: None,
            per_ap: vec![(0..users).collect(); aps],
            per_user: vec![(0..aps).collect(); users],
            repairs: Vec::new(),
        }
    }

    pub fn is_active(&self, ap: usize, user: usize) -> bool {
        self.per_user[user].binary_search(&ap).is_ok()
    }

    /// `γ` with inactive links zeroed.
    pub fn masked_gamma(&self, gamma: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(gamma.nrows(), gamma.ncols(), |m, k| if self.is_active(m, k) { gamma[(m, k)] } else { 0.0 })
    }

    pub fn total_links(&self) -> usize {
        self.per_ap.iter().map(Vec::len).sum()
    }

    pub fn check(&self) -> Result<()> {
        for (m, users) in self.per_ap.iter().enumerate() {
            if users.len() > self.users_per_ap_cap {
                return Err(Error::Internal(format!("AP {m} serves {} > K_m users", users.len())));
            }
            for &k in users {
                if !self.is_active(m, k) {
                    return Err(Error::Internal(format!("link ({m}, {k}) missing from S_{k}")));
                }
            }
        }
        for (k, aps) in self.per_user.iter().enumerate() {
            if aps.is_empty() {
                return Err(Error::AssignmentFailure { user: k });
            }
            for &m in aps {
                if self.per_ap[m].binary_search(&k).is_err() {
                    return Err(Error::Internal(format!("link ({m}, {k}) missing from T_{m}")));
                }
            }
        }
        Ok(())
    }
}

/// Index of the extreme entry; the lowest index wins ties.
fn arg_by<I: Iterator<Item = (usize, f64)>>(items: I, better: impl Fn(f64, f64) -> bool) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in items {
        if best.is_none_or(|(_, b)| better(v, b)) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Every AP keeps its `K_m` strongest users, then orphans are repaired in
/// ascending order at their strongest AP by evicting its weakest user that
/// is still served elsewhere.
pub fn assign_users(beta: &DMatrix<f64>, k_m: usize) -> Result<Assignment> {
    if k_m == 0 {
        return invalid("K_m must be at least 1");
    }
    let (aps, users) = beta.shape();
    let mut per_ap: Vec<Vec<usize>> = (0..aps)
        .map(|m| {
            let mut order: Vec<usize> = (0..users).collect();
            // Stable sort keeps the lower index first among equal gains.
            order.sort_by(|&a, &b| beta[(m, b)].total_cmp(&beta[(m, a)]));
            order.truncate(k_m);
            order.sort_unstable();
            order
        })
        .collect();
    let mut per_user: Vec<Vec<usize>> = vec![Vec::new(); users];
    for (m, list) in per_ap.iter().enumerate() {
        for &k in list {
            per_user[k].push(m);
        }
    }

    let mut repairs = Vec::new();
    for j in 0..users {
        if !per_user[j].is_empty() {
            continue;
        }
        let Some(pi) = arg_by((0..aps).map(|m| (m, beta[(m, j)])), |v, b| v > b) else {
            return Err(Error::AssignmentFailure { user: j });
        };
        let candidates = per_ap[pi].iter().filter(|&&k| per_user[k].len() >= 2).map(|&k| (k, beta[(pi, k)]));
        let Some(delta) = arg_by(candidates, |v, b| v < b) else {
            return Err(Error::AssignmentFailure { user: j });
        };
        per_ap[pi].retain(|&k| k != delta);
        per_user[delta].retain(|&m| m != pi);
        let at = per_ap[pi].partition_point(|&k| k < j);
        per_ap[pi].insert(at, j);
        per_user[j].push(pi);
        repairs.push(Repair { user: j, ap: pi, evicted: delta });
    }

    let assignment = Assignment { users_per_ap_cap: k_m, alpha2: None, per_ap, per_user, repairs };
    assignment.check()?;
    Ok(assignment)
}

/// Assignment plus the bit depth its cap buys under the configured link.
/// The depth respects `config.alpha_max`.
pub fn plan_assignment(config: &SystemConfig, beta: &DMatrix<f64>, k_m: usize) -> Result<Assignment> {
    let k_m = k_m.min(config.k);
    let alpha2 = bits_for_cap(config.c_fh_bps, config.t_c_s, config.tau_f(), k_m)?.min(config.alpha_max);
    let mut assignment = assign_users(beta, k_m)?;
    assignment.alpha2 = Some(alpha2);
    Ok(assignment)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignedSolution {
    pub k_m: usize,
    pub alpha2: Option<u32>,
    pub solution: MaxMinSolution,
}

/// Max-min re-solve with inactive links removed from every term.
pub fn solve_with_assignment(
    stats: &NetworkStats,
    assignment: &Assignment,
    model: Bussgang,
    case: QuantCase,
    solver: &SolverConfig,
) -> Result<AssignedSolution> {
    if assignment.per_user.len() != stats.users() || assignment.per_ap.len() != stats.aps() {
        return invalid("assignment shape does not match the network");
    }
    let context = SinrContext::masked(stats, assignment.per_user.clone(), model, case)?;
    Ok(AssignedSolution {
        k_m: assignment.users_per_ap_cap,
        alpha2: assignment.alpha2,
        solution: solve_maxmin(&context, solver)?,
    })
}

/// Quantizer model for an assignment's recomputed bit depth.
pub fn assignment_model(config: &SystemConfig, assignment: &Assignment) -> Result<Bussgang> {
    if config.perfect_fronthaul {
        return Ok(Bussgang::PERFECT);
    }
    let alpha = assignment.alpha2.ok_or_else(|| Error::InvalidArgument("assignment has no bit depth".into()))?;
    Ok(QuantizerSpec::for_bits(alpha)?.linear_model())
}

//! Seeded Monte-Carlo campaigns over network drops, with rate CDFs, outage
//! statistics and file output.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment::{assignment_model, bits_for_cap, plan_assignment, solve_with_assignment};
use crate::channel::NetworkStats;
use crate::config::SystemConfig;
use crate::duality::{verify_duality, DualityTolerances};
use crate::error::{invalid, Error, Result};
use crate::maxmin::{solve_baseline, solve_maxmin};
use crate::rates::{quantizer_for, SinrContext};

pub const SCHEMA_VERSION: u32 = 1;
pub const OUTAGE_PROBABILITY: f64 = 0.1;
/// Largest tolerated share of failed drops.
pub const MAX_FAILURE_SHARE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    MaxMin,
    Baseline,
    Assignment,
    Duality,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "maxmin" => Ok(Self::MaxMin),
            "baseline" => Ok(Self::Baseline),
            "assignment" => Ok(Self::Assignment),
            "duality" | "duality-check" => Ok(Self::Duality),
            other => Err(Error::Config(format!("unknown mode `{other}` (maxmin, baseline, assignment, duality)"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::MaxMin => "maxmin",
            Self::Baseline => "baseline",
            Self::Assignment => "assignment",
            Self::Duality => "duality",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualityRecord {
    pub rate_gap: f64,
    pub max_sinr_mismatch: f64,
    pub balance_residual: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizationRecord {
    pub realization: u64,
    pub seed: u64,
    /// Bit depth in use; absent with perfect fronthaul.
    pub alpha: Option<u32>,
    pub k_m: Option<usize>,
    pub min_rate: f64,
    pub rates: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Minimum SINR after every solver iteration.
    pub trace: Vec<f64>,
    pub duality: Option<DualityRecord>,
    pub error: Option<String>,
}

impl RealizationRecord {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }

    /// Whether the min-SINR trace never drops by more than `slack` (relative).
    pub fn trace_monotone(&self, slack: f64) -> bool {
        self.trace.windows(2).all(|w| w[1] >= w[0] * (1.0 - slack))
    }
}

/// Solve drop `index` along the chosen path.
pub fn run_realization(config: &SystemConfig, mode: Mode, index: u64) -> Result<RealizationRecord> {
    let stats = NetworkStats::generate(config, index)?;
    let case = config.case;
    let solver = &config.solver;
    let mut record = RealizationRecord {
        realization: index,
        seed: config.seed,
        alpha: None,
        k_m: None,
        min_rate: 0.0,
        rates: Vec::new(),
        iterations: 0,
        converged: false,
        trace: Vec::new(),
        duality: None,
        error: None,
    };
    let solution = if mode == Mode::Assignment {
        let assignment = plan_assignment(config, &stats.beta, config.k_m.unwrap_or(config.k))?;
        let model = assignment_model(config, &assignment)?;
        record.k_m = Some(assignment.users_per_ap_cap);
        record.alpha = assignment.alpha2.filter(|_| !config.perfect_fronthaul);
        solve_with_assignment(&stats, &assignment, model, case, solver)?.solution
    } else {
        let (spec, model) = quantizer_for(config, case)?;
        record.alpha = spec.map(|s| s.alpha);
        let context = SinrContext::new(&stats, model, case).with_literal_forms(config.literal_forms);
        match mode {
            Mode::Baseline => solve_baseline(&context, solver)?,
            Mode::Duality => {
                let solution = solve_maxmin(&context, solver)?;
                let report = verify_duality(&solution, &context, solver, DualityTolerances::default())?;
                record.duality = Some(DualityRecord {
                    rate_gap: report.rate_gap,
                    max_sinr_mismatch: report.sinr_mismatch.iter().copied().fold(0.0, f64::max),
                    balance_residual: report.balance_residual,
                    passed: report.passed,
                });
                solution
            }
            _ => solve_maxmin(&context, solver)?,
        }
    };
    record.min_rate = solution.min_rate();
    record.rates = solution.rates().iter().copied().collect();
    record.iterations = solution.iterations;
    record.converged = solution.converged;
    record.trace = solution.trace;
    Ok(record)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    pub rate: f64,
    pub probability: f64,
}

/// Empirical CDF `F(x_(i)) = i/n` over the pooled rates, and the rate at
/// which it reaches the outage probability by linear interpolation between
/// order statistics (clamped to the smallest sample below `1/n`).
pub fn cdf_and_outage(rates: &[f64]) -> Result<(Vec<CdfPoint>, f64)> {
    if rates.is_empty() {
        return invalid("no rates to aggregate");
    }
    if rates.iter().any(|r| r.is_nan()) {
        return invalid("rates contain NaN");
    }
    let mut sorted = rates.to_vec();
    let outage = quantile(&mut sorted, OUTAGE_PROBABILITY);
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let cdf = sorted.iter().enumerate().map(|(i, &rate)| CdfPoint { rate, probability: (i + 1) as f64 / n }).collect();
    Ok((cdf, outage))
}

/// Interpolated `x` with `F(x) = p` under `F(x_(i)) = i/n`. Reorders `values`.
fn quantile(values: &mut [f64], p: f64) -> f64 {
    let n = values.len();
    let position = p * n as f64;
    // 1-based order statistic below the target.
    let lower = (position.floor() as usize).clamp(1, n);
    let frac = if position < 1.0 { 0.0 } else { position - lower as f64 };
    let (_, &mut x_lower, rest) = values.select_nth_unstable_by(lower - 1, f64::total_cmp);
    if frac == 0.0 || rest.is_empty() {
        return x_lower;
    }
    let x_upper = rest.iter().copied().fold(f64::INFINITY, f64::min);
    x_lower + frac * (x_upper - x_lower)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Some(if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    /// Mean over all users of all successful drops.
    pub per_user_rate: f64,
    pub min_rate: f64,
    pub median_min_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub converged: usize,
    pub within_10_iterations: usize,
    pub mean_iterations: f64,
    pub max_iterations: usize,
    /// Drops whose min-SINR trace never decreased (slack 1e-9).
    pub monotone_traces: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualitySummary {
    pub passed: usize,
    pub max_rate_gap: f64,
    pub max_sinr_mismatch: f64,
    pub max_balance_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub schema_version: u32,
    pub mode: Mode,
    pub config: SystemConfig,
    pub records: Vec<RealizationRecord>,
    pub cdf: Vec<CdfPoint>,
    pub outage_rate: f64,
    pub averages: Averages,
    pub convergence: Convergence,
    pub duality: Option<DualitySummary>,
    pub failures: usize,
}

/// Solve every drop of the campaign in parallel. Individual failures are
/// recorded; the campaign fails when more than a tenth of the drops do.
pub fn run_experiment(config: &SystemConfig, mode: Mode) -> Result<ExperimentResult> {
    config.validate()?;
    let records: Vec<RealizationRecord> = (0..config.realizations as u64)
        .into_par_iter()
        .map(|index| {
            run_realization(config, mode, index).unwrap_or_else(|e| RealizationRecord {
                realization: index,
                seed: config.seed,
                alpha: None,
                k_m: None,
                min_rate: f64::NAN,
                rates: Vec::new(),
                iterations: 0,
                converged: false,
                trace: Vec::new(),
                duality: None,
                error: Some(e.to_string()),
            })
        })
        .collect();
    aggregate(config.clone(), mode, records)
}

fn aggregate(config: SystemConfig, mode: Mode, records: Vec<RealizationRecord>) -> Result<ExperimentResult> {
    let failures = records.iter().filter(|r| r.failed()).count();
    if failures as f64 > MAX_FAILURE_SHARE * records.len() as f64 {
        let first = records.iter().find_map(|r| r.error.clone()).unwrap_or_default();
        return Err(Error::Internal(format!("{failures} of {} drops failed; first: {first}", records.len())));
    }
    let ok: Vec<&RealizationRecord> = records.iter().filter(|r| !r.failed()).collect();
    let pooled: Vec<f64> = ok.iter().flat_map(|r| r.rates.iter().copied()).collect();
    let (cdf, outage_rate) = cdf_and_outage(&pooled)?;
    let min_rates: Vec<f64> = ok.iter().map(|r| r.min_rate).collect();
    let averages = Averages {
        per_user_rate: pooled.iter().sum::<f64>() / pooled.len() as f64,
        min_rate: min_rates.iter().sum::<f64>() / min_rates.len() as f64,
        median_min_rate: median(&min_rates).unwrap_or(f64::NAN),
    };
    let convergence = Convergence {
        converged: ok.iter().filter(|r| r.converged).count(),
        within_10_iterations: ok.iter().filter(|r| r.converged && r.iterations <= 10).count(),
        mean_iterations: ok.iter().map(|r| r.iterations as f64).sum::<f64>() / ok.len() as f64,
        max_iterations: ok.iter().map(|r| r.iterations).max().unwrap_or(0),
        monotone_traces: ok.iter().filter(|r| r.trace_monotone(1e-9)).count(),
    };
    let duality = (mode == Mode::Duality).then(|| {
        let reports: Vec<&DualityRecord> = ok.iter().filter_map(|r| r.duality.as_ref()).collect();
        let max = |f: fn(&DualityRecord) -> f64| reports.iter().map(|d| f(d)).fold(0.0, f64::max);
        DualitySummary {
            passed: reports.iter().filter(|d| d.passed).count(),
            max_rate_gap: max(|d| d.rate_gap),
            max_sinr_mismatch: max(|d| d.max_sinr_mismatch),
            max_balance_residual: max(|d| d.balance_residual),
        }
    });
    Ok(ExperimentResult {
        schema_version: SCHEMA_VERSION,
        mode,
        config,
        records,
        cdf,
        outage_rate,
        averages,
        convergence,
        duality,
        failures,
    })
}

#[derive(Serialize)]
struct Summary<'a> {
    schema_version: u32,
    mode: Mode,
    config: &'a SystemConfig,
    realizations: usize,
    failures: usize,
    averages: &'a Averages,
    outage: Outage,
    convergence: &'a Convergence,
    #[serde(skip_serializing_if = "Option::is_none")]
    duality: Option<&'a DualitySummary>,
}

#[derive(Serialize)]
struct Outage {
    probability: f64,
    rate: f64,
}

impl ExperimentResult {
    pub fn summary_json(&self) -> Result<String> {
        let summary = Summary {
            schema_version: self.schema_version,
            mode: self.mode,
            config: &self.config,
            realizations: self.records.len(),
            failures: self.failures,
            averages: &self.averages,
            outage: Outage { probability: OUTAGE_PROBABILITY, rate: self.outage_rate },
            convergence: &self.convergence,
            duality: self.duality.as_ref(),
        };
        Ok(serde_json::to_string_pretty(&summary)?)
    }

    /// `rates.csv`, `summary.json` and `cdf.csv` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut rates = csv::Writer::from_path(dir.join("rates.csv"))?;
        rates.write_record(["realization", "user", "rate", "seed"])?;
        for record in self.records.iter().filter(|r| !r.failed()) {
            for (user, rate) in record.rates.iter().enumerate() {
                rates.serialize((record.realization, user, rate, record.seed))?;
            }
        }
        rates.flush()?;
        let mut cdf = csv::Writer::from_path(dir.join("cdf.csv"))?;
        cdf.write_record(["rate", "probability"])?;
        for point in &self.cdf {
            cdf.serialize((point.rate, point.probability))?;
        }
        cdf.flush()?;
        let mut summary = BufWriter::new(File::create(dir.join("summary.json"))?);
        summary.write_all(self.summary_json()?.as_bytes())?;
        summary.write_all(b"\n")?;
        summary.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub k_m: usize,
    pub alpha2: u32,
    pub average_rate: f64,
    pub outage_rate: f64,
    pub failures: usize,
}

/// Assignment campaign per `K_m` at the configured fronthaul capacity.
pub fn sweep_users_per_ap(config: &SystemConfig, k_values: &[usize]) -> Result<Vec<SweepPoint>> {
    k_values
        .iter()
        .map(|&k_m| {
            let alpha2 =
                bits_for_cap(config.c_fh_bps, config.t_c_s, config.tau_f(), k_m.min(config.k))?.min(config.alpha_max);
            let result = run_experiment(&SystemConfig { k_m: Some(k_m), ..config.clone() }, Mode::Assignment)?;
            Ok(SweepPoint {
                k_m,
                alpha2,
                average_rate: result.averages.per_user_rate,
                outage_rate: result.outage_rate,
                failures: result.failures,
            })
        })
        .collect()
}

/// `K_m` values 1..=K in steps of `step`, always ending at K.
pub fn sweep_grid(k: usize, step: usize) -> Vec<usize> {
    let step = step.max(1);
    let mut grid: Vec<usize> = (step..=k).step_by(step).collect();
    if step > 1 {
        grid.insert(0, 1);
    }
    if grid.last() != Some(&k) {
        grid.push(k);
    }
    grid
}

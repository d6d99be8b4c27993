use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use cellfree::harness::{run_experiment, sweep_grid, sweep_users_per_ap, Mode};
use cellfree::quantizer::{optimize_step, DEFAULT_STEP_TOLERANCE, MAX_BITS};
use cellfree::{QuantCase, SystemConfig};

/// Max-min uplink rates for cell-free massive MIMO with quantized fronthaul.
#[derive(Parser)]
#[command(name = "cellfree", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a seeded campaign and write rates.csv, summary.json and cdf.csv.
    Run {
        #[command(flatten)]
        common: Common,
        /// Solver path: maxmin, baseline, assignment or duality.
        #[arg(long, default_value = "maxmin")]
        mode: String,
    },
    /// Solve max-min and verify the downlink dual on every drop.
    DualityCheck {
        #[command(flatten)]
        common: Common,
    },
    /// Average rates under a users-per-AP cap, as CSV.
    Assign {
        #[command(flatten)]
        common: Common,
        /// Users per AP.
        #[arg(long, conflicts_with = "sweep", required_unless_present = "sweep")]
        km: Option<usize>,
        /// Sweep the cap from 1 to K.
        #[arg(long)]
        sweep: bool,
        /// Stride of the sweep.
        #[arg(long, default_value_t = 1, requires = "sweep")]
        step: usize,
    },
    /// Optimal quantizer designs as CSV.
    QuantizerTable {
        /// Largest bit depth to list.
        #[arg(long, default_value_t = 10)]
        max_bits: u32,
    },
}

#[derive(Args)]
struct Common {
    /// JSON configuration file; overrides --profile.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named preset: desk or full.
    #[arg(long, default_value = "desk")]
    profile: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Quantization placement, 1 or 2.
    #[arg(long)]
    case: Option<u8>,
    /// Cap on the bit depth picked from the fronthaul budget.
    #[arg(long)]
    alpha_max: Option<u32>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn config(&self) -> Result<SystemConfig> {
        let mut config = match &self.config {
            Some(path) => SystemConfig::from_path(path).with_context(|| format!("reading {}", path.display()))?,
            None => SystemConfig::profile(&self.profile)?,
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(case) = self.case {
            config.case = QuantCase::from_number(case)?;
        }
        if let Some(alpha_max) = self.alpha_max {
            config.alpha_max = alpha_max;
        }
        config.validate()?;
        Ok(config)
    }
}

fn campaign(common: &Common, mode: Mode) -> Result<cellfree::ExperimentResult> {
    let config = common.config()?;
    let result = run_experiment(&config, mode)?;
    if let Some(dir) = &common.out {
        result.write(dir).with_context(|| format!("writing results to {}", dir.display()))?;
    }
    writeln!(std::io::stdout(), "{}", result.summary_json()?)?;
    Ok(result)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { common, mode } => {
            campaign(&common, mode.parse()?)?;
        }
        Command::DualityCheck { common } => {
            let result = campaign(&common, Mode::Duality)?;
            let summary = result.duality.context("duality summary missing")?;
            let solved = result.records.len() - result.failures;
            if summary.passed < solved {
                bail!("duality check failed on {} of {solved} drops", solved - summary.passed);
            }
        }
        Command::Assign { common, km, sweep, step } => {
            let config = common.config()?;
            let grid = if sweep { sweep_grid(config.k, step) } else { vec![km.unwrap_or(config.k)] };
            let points = sweep_users_per_ap(&config, &grid)?;
            let mut text = String::from("k_m,alpha2,average_rate,outage_rate\n");
            for p in &points {
                text.push_str(&format!("{},{},{},{}\n", p.k_m, p.alpha2, p.average_rate, p.outage_rate));
            }
            match &common.out {
                Some(dir) => {
                    std::fs::create_dir_all(dir)?;
                    std::fs::write(dir.join("assignment.csv"), &text)?;
                }
                None => std::io::stdout().write_all(text.as_bytes())?,
            }
        }
        Command::QuantizerTable { max_bits } => {
            if max_bits == 0 || max_bits > MAX_BITS {
                bail!("--max-bits must be in 1..={MAX_BITS}");
            }
            let mut out = std::io::stdout().lock();
            writeln!(out, "alpha,step,distortion,gain")?;
            for alpha in 1..=max_bits {
                let spec = optimize_step(1 << alpha, DEFAULT_STEP_TOLERANCE)?;
                writeln!(out, "{alpha},{},{},{}", spec.step, spec.distortion, spec.gain)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

//! Max-min uplink rate optimization for cell-free massive MIMO with
//! quantized, capacity-limited fronthaul.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assignment;
pub mod channel;
pub mod config;
pub mod duality;
pub mod error;
pub mod harness;
pub mod maxmin;
pub mod quantizer;
pub mod rates;
pub mod rng;

pub use nalgebra;

pub use assignment::{assign_users, cap_users_per_ap, solve_with_assignment, Assignment};
pub use channel::NetworkStats;
pub use config::{PilotMode, QuantCase, SolverConfig, SystemConfig};
pub use duality::{downlink_powers, verify_duality, DualityReport};
pub use error::{Error, Result};
pub use harness::{cdf_and_outage, run_experiment, ExperimentResult, Mode};
pub use maxmin::{solve_baseline, solve_maxmin, MaxMinSolution};
pub use quantizer::{Bussgang, QuantizerSpec};
pub use rates::{Coupling, SinrContext};

//! Network-slice auto-scaling simulator with cooperative Q-learning agents.
//!
//! Independent per-function agents share a finite CPU pool. Each agent
//! encodes its own and its neighbours' utilization into a compact state and
//! learns when to scale. The crate also provides static, threshold and
//! centralized-optimal reference policies, windowed metrics and a seeded
//! sweep harness.

#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![cfg_attr(test, allow(clippy::field_reassign_with_default))]

pub mod agent;
pub mod baselines;
pub mod config;
pub mod env;
pub mod error;
pub mod load;
pub mod metrics;
pub mod sim;
pub mod sweep;

pub use config::{Algorithm, Scenario, SimConfig};
pub use error::{Error, Result};
pub use sim::{run_episode, run_experiment, EpisodeResult, Learners};
pub use sweep::{run_sweep, SweepRow};

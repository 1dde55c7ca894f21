//! Batch runner for the mean-reflected BSDE solver: scenario ingestion with
//! dotted-path overrides, the validate/simulate/solve/diagnose pipeline,
//! result persistence, and convergence sweeps.
//!
//! Exit codes partition outcomes:
//! - `0` solved, all diagnostics pass
//! - `2` scenario rejected by validation (the failing assumption is named)
//! - `3` solver failure (the failing window is named)
//! - `4` solved, but at least one diagnostic failed

pub mod config;
pub mod oracle;
pub mod runner;

pub use config::{apply_override, load_scenario, scenario_digest};
pub use oracle::{detect_oracle, KnownOracle};
pub use runner::{run_scenario, sweep, RunOutcome, RunResult, SweepRow};

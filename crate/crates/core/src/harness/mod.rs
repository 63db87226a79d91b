//! Experiment runner behind the `distill` binary: TOML configs, seed sweeps
//! on a worker pool, and deterministic JSONL/CSV artifacts.

mod compare;
mod config;
mod run;

pub use compare::{compare_runs, load_run, write_comparison, Comparison, CurvePoint, ExplorationPoint, LoadedRun, MethodRow};
pub use config::{parse_env_spec, parse_seeds, BcConfig, ExperimentConfig, Method, Overrides, SCHEMA_VERSION};
pub use run::{
    deterministic_success, oracle_summary, run_experiment, seed_dir, write_summary, IterationRecord, OracleSummary,
    RunManifest, RunReport, SummaryRow, FAILED_MARKER, ITERATION_SCHEMA,
};

use crate::error::Error;

/// Process exit code for an error: 2 for bad input, 1 for anything else.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Mismatch(_) => 2,
        _ => 1,
    }
}

//! Seeded multi-environment experiments and their reports.

pub mod checks;
mod config;
mod output;
mod run;
mod stats;

pub use config::ExperimentConfig;
pub use output::{emit_outputs, plot_summary, read_records, records_csv, OutputPaths, RECORDS_HEADER};
pub use run::{
    agent_rng, default_seeds, initial_rng, run_experiment, run_world, ExperimentOutcome, RunRecord, SkippedSeed,
};
pub use stats::{format_table, mean_std, normalize_returns, summarize, SummaryRow};

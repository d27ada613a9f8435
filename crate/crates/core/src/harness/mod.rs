//! Monte-Carlo experiments: grids of schedules, costs and confidence levels,
//! run in parallel with deterministic per-trial reward streams.

mod acceptance;
mod aggregate;
mod spec;
mod trials;

pub use acceptance::{check_acceptance, AcceptanceReport, CriterionResult, Status};
pub use aggregate::{aggregate, emit_csv, emit_json, read_json_rows, Aggregate, MetricRow};
pub use spec::{CellSpec, Experiment, ExperimentSpec, InstanceSpec, DEFAULT_DELTAS, DEFAULT_TRIALS};
pub use trials::{read_records, run_trials, write_records, TrialRecord};

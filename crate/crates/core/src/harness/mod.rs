//! Experiment runner: config parsing, end-to-end runs, metrics CSV and
//! quality-versus-cost comparison.

mod compare;
mod config;
mod metrics;
mod run;

pub use compare::{compare_experiments, summarize, write_summary_csv, ExperimentSummary, SummaryTable};
pub use config::{
    parse_config, CountKind, ExperimentConfig, NoiseKind, RunMode, ScheduleKind, ServerKind,
    DEFAULT_CLIENTS_PER_ROUND, DEFAULT_CLIENT_LR,
};
pub use metrics::{emit_csv, read_csv, read_csv_file, write_csv, MetricsRow, CSV_HEADER};
pub use run::{experiment_population, run_experiment, EVAL_SPLIT_SEED_OFFSET};

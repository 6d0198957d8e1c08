//! Full experiments: configuration, the round engine, sweeps and run output.

mod config;
mod engine;
mod output;
mod sweep;

pub use config::{
    AggregatorSpec, AttackerKnowledge, DatasetSource, EvaluationMode, RunConfig, TopologySettings,
};
pub use engine::{
    fingerprint, run_experiment, ClientState, Role, RoundSettings, RunOptions, RunSummary, SeedNumbers, SeedRun,
    SimState, SummaryNumbers, WeightTriples,
};
pub use output::{read_metrics_csv, report, write_metrics_csv, write_run, MetricsRow, Report};
pub use sweep::{SweepConfig, SweepRow};

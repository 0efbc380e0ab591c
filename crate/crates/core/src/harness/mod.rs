//! Experiment orchestration: configuration, runs, sweeps, reports and plot data.

pub mod config;
pub mod experiment;
pub mod plot;
pub mod report;
pub mod sweep;

pub use config::ExperimentConfig;
pub use experiment::{
    prepare, run_experiment, run_prepared, run_unlearning, select_by_es_tradeoff, EpochRecord, Evaluator, Prepared,
    RunRecord,
};
pub use plot::{emit_plot_data, PlotKind};
pub use report::{emit_report, ReportFormat, ReportRow};
pub use sweep::{sweep, Grid, SweepTable};

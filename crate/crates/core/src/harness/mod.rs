//! Training loop, multi-seed experiments, aggregation, persistence and plots.

pub mod aggregate;
pub mod config;
pub mod io;
pub mod report;
pub mod selfcheck;
pub mod svg;
pub mod train;

pub use aggregate::{aggregate, aggregate_traces, aggregate_with, AggregatedCurve, BandKind};
pub use config::{OptimizerKind, TrainConfig};
pub use io::{
    load_checkpoint, load_checkpoint_expect, read_curve_csv, read_run_csv, save_checkpoint,
    write_curve_csv, write_run_csv, write_trace_csv,
};
pub use report::{evaluate_claims, Check, GridResults};
pub use svg::{emit_svg, render_svg, LossAxis};
pub use train::{run_all, run_experiment, train_model, train_run, RunLog};

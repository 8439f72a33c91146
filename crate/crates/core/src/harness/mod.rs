//! Monte-Carlo sweeps over missing ratio, method and mismatch level.
//!
//! Every (gamma, repeat) cell derives its own seed from the base seed, draws
//! one ground truth, one mask and one noise realization, and hands the same
//! observations to every method and mismatch level. Cells are independent, so
//! they run in parallel while the output order stays canonical.

mod config;
mod report;
mod sweep;

pub use config::{ExperimentConfig, Method, SamplingKind, SmrLevel};
pub use report::{
    aggregate, config_hash, mean_std, plot_rows, read_results_csv, write_aggregates_csv, write_plot_csv,
    write_results_csv, write_sweep, Aggregate, CurvePoint, RunResult, SweepFiles, RESULTS_HEADER,
};
pub use sweep::{
    child_seed, draw_mask, nmse, opta_curve, postulated_model, run_sweep, scenario, sort_canonical, splitmix64,
    Scenario, SweepOutput,
};

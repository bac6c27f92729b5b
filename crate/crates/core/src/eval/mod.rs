//! Metrics, threshold sweep, and the masked-vs-unmasked experiment.

mod experiment;
mod metrics;
mod sweep;

pub use experiment::{comparison_table, metrics_table, row_name, run_experiment, run_on_splits, ExperimentConfig, ExperimentReport};
pub use metrics::{compute_metrics, confusion, ConfusionMatrix, Metrics};
pub use sweep::{select_threshold, sweep, sweep_csv, sweep_svg, SweepConfig, SweepOutcome, SweepRecord, F1_TIE_TOLERANCE};

//! Experiment configuration, grid execution, metrics and CSV output.

pub mod config;
pub mod metrics;
pub mod run;

pub use config::{Experiment, ExperimentConfig, LearningRates, Scheme, TheoryTarget};
pub use metrics::{
    avg_log_density, classify_mode_behavior, emit_csv, mae_metrics, mode_distances, summarize, CsvRow,
    MetricsRow, ModeClass, ModeDistances, SummaryRow, TimingRow,
};
pub use run::{run, run_bimodal, run_gp, run_logreg, run_moments, run_theory, theory_tables, RunOutput};

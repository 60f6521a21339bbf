//! Simulation harness: designs, the method grid, and performance metrics.

pub mod config;
pub mod design;
pub mod experiment;
pub mod metrics;

pub use config::{BetaSpec, DesignSpec, MethodSpec, Noise, SimConfig, TestKind};
pub use design::{gen_block_design, gen_response, gen_riboflavin_like, gen_toeplitz_design, snr_calibrate};
pub use experiment::{run_experiment, Archive, MethodOutcome, RunRecord};
pub use metrics::{compute_metrics, MetricRow, MetricsTable};

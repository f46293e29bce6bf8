//! Throughput benchmark for the provider token endpoint (experiment A) and
//! the ICT endpoint (experiment B), reported as mean requests per minute
//! with a 95% Student-t confidence interval over repeated runs.

pub mod runner;
pub mod stats;

pub use runner::{run_experiment, run_experiment_with_progress, BenchConfig, BenchError, BenchReport, Experiment};
pub use stats::{mean_ci95, t_quantile, Interval, StatsError};

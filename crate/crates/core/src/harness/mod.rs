//! Experiment orchestration: configs, seeded trial runs, curves, scores,
//! checkpoints, and the variance-bound sweep.

pub mod checkpoint;
pub mod config;
pub mod curves;
pub mod runner;
pub mod score;
pub mod sweep;

pub use checkpoint::{load_checkpoint, save_checkpoint, TrialCheckpoint};
pub use config::ExperimentConfig;
pub use curves::EvalRecord;
pub use runner::{run_experiment, ExperimentOutcome, RunOptions, RunSummary};
pub use score::{normalized_score, summarize};
pub use sweep::{run_variance_sweep, SweepConfig};

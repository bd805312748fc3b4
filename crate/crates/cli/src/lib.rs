//! Config-driven experiment runner for Sobolev-regularized MMD flows.
//!
//! Each experiment reads a TOML config, fills in per-experiment defaults and
//! writes its metric log, particle sets and resolved config to an output
//! directory. Colour transfer additionally reads and writes P6 images.

pub mod color;
pub mod config;
pub mod ppm;
pub mod run;

pub use config::{Experiment, ExperimentConfig};
pub use run::{run_experiment, Prepared, RunOutcome};

//! Sobolev-regularized MMD particle flows.
//!
//! The crate assembles regularized witness functions on particle ensembles and
//! runs the resulting descent schemes, for targets given by samples, by a
//! closed-form kernel mean embedding, or only by their score through a
//! Langevin Stein kernel. Baseline flows (MMD, hybrid, KSD, SVGD) and the
//! discrepancies used to compare them (MMD², KSD², exact W₂) live alongside.

pub mod error;
pub mod flows;
pub mod kernels;
pub mod linalg;
pub mod metrics;
pub mod points;
pub mod rng;
pub mod stein;
pub mod targets;
pub mod witness;

pub use error::{Error, Result};
pub use points::Points;

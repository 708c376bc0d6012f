//! Exact tabular tools for on-policy bisimulation measurements: fixed-point
//! solvers, an expectile-based operator for offline datasets, small encoders
//! trained on embedding distances, and checks relating residuals to errors.

pub mod bisim;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod expectile;
pub mod mdp;
pub mod report;
pub mod repr;
pub mod rng;

pub use error::{Error, Result};

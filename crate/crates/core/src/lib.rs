//! Generalized orthogonal Procrustes: solvers, certificates and experiments.

pub mod bench;
pub mod bm;
pub mod certificate;
pub mod error;
pub mod format;
pub mod gpm;
pub mod linops;
pub mod model;
pub mod report;

pub use error::{Error, Result};

//! Smoothness-aware compressed distributed gradient methods.

pub mod compressors;
pub mod encoding;
pub mod error;
pub mod harness;
pub mod methods;
pub mod par;
pub mod problems;
pub mod rng;
pub mod smoothness;
pub mod step_solver;

pub use error::{Error, Result};

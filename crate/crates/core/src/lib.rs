//! Stochastic interpolant processes, their ensemble velocity, acceleration and
//! Reynolds fields, grid residuals of the associated balance laws, flow
//! integration, and straightness diagnostics.

pub mod calculus;
pub mod cli;
pub mod error;
pub mod estimate;
pub mod flow;
pub mod linalg;
pub mod oracle;
pub mod process;
pub mod verify;

pub use error::{Error, Result};

//! Noiseless non-adaptive and two-stage group testing: random test designs,
//! information-theoretic bounds, the DD and spatially coupled decoders, a
//! brute-force posterior oracle and a Monte Carlo experiment harness.

pub mod bounds;
pub mod decoders;
pub mod designs;
mod error;
pub mod gt1;
pub mod harness;
pub mod instance;
pub mod oracle;

pub use error::{Error, Result};
pub use instance::{Design, InfectionVector, ProblemInstance, ResultVector, ScLayout};

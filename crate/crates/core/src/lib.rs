//! Simulation and security analysis for continuous-variable quantum key
//! distribution built on EPR inference-variance criteria.
//!
//! - [`gaussian`]: Gaussian states, symplectic maps, homodyne conditioning.
//! - [`epr`]: measurement records and inference-variance estimators.
//! - [`eve`]: eavesdropping attacks and Eve's optimal Gaussian inference.
//! - [`protocol`]: full sessions, sifting, key formation and binning encryption.
//! - [`security`]: bounds on Eve's inference and the derived error rates.

pub mod epr;
pub mod error;
pub mod eve;
pub mod gaussian;
pub mod normal;
pub mod protocol;
pub mod rng;
pub mod security;
pub mod stats;

pub use error::{Error, Result};

//! Numerical toolkit for adiabatic invariants on the Klein-Gordon chain:
//! exact sparse polynomial algebra and the normal-form ladder, Gibbs
//! sampling with deterministic transfer-operator oracles, Monte-Carlo
//! estimators for variances/correlations of the invariant, symplectic
//! dynamics with autocorrelation bounds, and spatial correlation decay
//! scans.

pub mod dynamics;
pub mod error;
pub mod estimators;
pub mod gibbs;
pub mod model;
pub mod normalform;
pub mod poly;

pub use error::CoreError;

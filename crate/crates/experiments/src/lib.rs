//! Empirical harness for orthonormal spline systems: weak-type sign-flip
//! sweeps, pointwise convergence tables, the covering-family maximal
//! function with its height decomposition, and a polynomial sublevel
//! check, all driven by seeded configs that make every output
//! reproducible.

pub mod ae_sweep;
pub mod collection;
pub mod config;
pub mod corpus;
pub mod cz;
pub mod error;
pub mod grid;
pub mod remez;
pub mod weak_type;

pub use error::{Error, Result};

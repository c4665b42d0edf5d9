//! Spline spaces on interval filtrations.
//!
//! The crate builds tensor-product B-spline bases over rectangular domains
//! that are refined one atom at a time, computes their Gram matrices and
//! dual (biorthogonal) systems, and derives from them orthonormal spline
//! functions together with the projection and maximal-function machinery
//! needed to study their convergence behaviour.

pub mod bspline;
pub mod error;
pub mod fitting;
pub mod gram;
pub mod linalg;
pub mod ortho1d;
pub mod partition;
pub mod projection;
pub mod quadrature;
pub mod regularity;
pub mod tensor_system;

pub use error::{Error, Result};

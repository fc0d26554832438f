//! Iterative sweep-method solver for fixed-endpoint quadratic optimal control
//! of bilinear systems and bilinear ensembles.
//!
//! The single-system solver freezes the bilinear coefficients along the
//! previous iterate, solves the resulting time-varying linear problem with a
//! Riccati sweep (`λ = Kx + Sν`), and repeats. The ensemble solver assembles
//! the input-to-state operator of the frozen ensemble and synthesizes a
//! truncated minimum-energy control from its singular system.

pub mod ensemble;
pub mod error;
pub mod linalg;
pub mod model;
pub mod ode;
pub mod oracle;
pub mod problems;
pub mod solver;
pub mod sweep;
pub mod validation;

pub use error::{Error, Result};
pub use model::{BilinearSystem, BoundaryConditions, QuadraticCost, TimeGrid};
pub use ode::{Direction, MatrixPath, Path, VectorPath};

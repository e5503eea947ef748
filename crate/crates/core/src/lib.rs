//! Inexact augmented Lagrangian methods for smooth convex inequality
//! constrained problems, with an adaptive accelerated proximal gradient
//! subsolver and cutting-plane dual searches (bisection, ellipsoid) that
//! keep the subproblem cost independent of the penalty parameter.

pub mod apg;
pub mod dualcut;
pub mod error;
pub mod ialm;
pub mod problem;
pub mod qcqp;

pub use error::{ApgError, DualCutError, IalmError, ProblemError, QcqpError};

//! Finite element optimal control of the amplitudes of point sources driving
//! a monotone semilinear elliptic equation, with mesh-convergence studies of
//! the discretization error.

pub mod config;
pub mod control;
pub mod error;
pub mod fem;
pub mod field;
pub mod harness;
pub mod mesh;
pub mod nonlinearity;
pub mod quadrature;
pub mod simplex;
pub mod sparse;
pub mod state;

pub use error::{Error, Result};

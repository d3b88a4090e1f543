//! Numerical laboratory for nonlinear electrical conductors: forward solver,
//! Dirichlet-to-Neumann and Average DtN operators, monotonicity checks, and
//! monotonicity-based inclusion imaging on 2-D triangulations.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod boundary_ops;
pub mod cli;
pub mod config;
pub mod constitutive;
pub mod error;
pub mod excitation;
pub mod forward;
pub mod imaging;
pub mod mesh;
pub mod quadrature;
pub mod sparse;
pub mod verify;

pub use error::{Error, Result};

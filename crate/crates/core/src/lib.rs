//! Simulation of the Dirichlet-to-Neumann map of the wave equation in a
//! cylindrical waveguide, geometric-optics probing, X-ray inversion of the
//! mollified potential gap and the accompanying stability checks.

// `!(a < b)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bump;
pub mod dn;
pub mod error;
pub mod fields;
pub mod geometry;
pub mod grid_io;
pub mod phantom;
pub mod probes;
pub mod reconstruct;
pub mod solver;
pub mod stability;
pub mod xray;

pub use error::{Error, Result};

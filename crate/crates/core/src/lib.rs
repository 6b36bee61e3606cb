//! Numerical experiments for the Dirichlet Laplacian in a domain perforated by
//! many small holes and its homogenized limit `−Δ + q`.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops mirror the stencil and matrix formulas they implement.
#![allow(clippy::needless_range_loop)]

pub mod capacity;
pub mod closeness;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod harness;
pub mod linalg;

pub use error::{Error, Result};

//! Radiating fields of locally perturbed periodic waveguides in the half-plane.

// `!(x > y)` rejects NaN in input checks; index loops mirror the stencils.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bloch;
pub mod cell_solver;
pub mod cli_io;
pub mod diagnostics;
pub mod error;
pub mod linalg;
pub mod medium;
pub mod modes;
pub mod perturbed_solver;
pub mod radiating_solver;
pub mod special_fn;

pub use error::{Error, Result};

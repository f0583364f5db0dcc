//! Learning PDE models from noisy spatiotemporal data.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod denoise;
pub mod error;
pub mod experiment;
pub mod grid;
pub mod inverse;
pub mod io;
pub mod library;
pub mod linalg;
pub mod metrics;
pub mod mol;
pub mod pdefind;

pub use error::{Error, Result};
pub use grid::{Field, Grid};

//! Finite-difference derivatives straight from the data.

use ndarray::{Array2, Axis};

use super::{DerivativeBundle, Method};
use crate::dataset::NoisyDataset;
use crate::error::{Error, Result};
use crate::grid::Field;

/// First derivative along `axis`: central differences inside, forward at the
/// low edge and backward at the high edge.
pub fn first_difference(values: &Array2<f64>, axis: Axis, step: f64) -> Array2<f64> {
    let mut out = Array2::zeros(values.raw_dim());
    for (lane, mut dst) in values.lanes(axis).into_iter().zip(out.lanes_mut(axis)) {
        let n = lane.len();
        dst[0] = (lane[1] - lane[0]) / step;
        dst[n - 1] = (lane[n - 1] - lane[n - 2]) / step;
        for k in 1..n - 1 {
            dst[k] = (lane[k + 1] - lane[k - 1]) / (2.0 * step);
        }
    }
    out
}

/// `u_xx` is the first-difference rule applied twice, not a three-point
/// second-difference stencil.
pub fn fd_bundle(ds: &NoisyDataset) -> Result<DerivativeBundle> {
    let grid = ds.grid();
    for (axis, n) in [("x", grid.nx()), ("t", grid.nt())] {
        if n < 3 {
            return Err(Error::InsufficientPoints {
                axis,
                needed: 3,
                got: n,
            });
        }
    }
    let u = &ds.observed.values;
    let ut = first_difference(u, Axis(1), grid.dt());
    let ux = first_difference(u, Axis(0), grid.dx());
    let uxx = first_difference(&ux, Axis(0), grid.dx());
    let bundle = DerivativeBundle::new(
        Field::new(grid.clone(), u.clone(), "u")?,
        Field::new(grid.clone(), ut, "u_t")?,
        Field::new(grid.clone(), ux, "u_x")?,
        Field::new(grid.clone(), uxx, "u_xx")?,
        Method::Fd,
    )?;
    Ok(bundle.unscale(ds.scale))
}

//! Local bicubic regression: for every grid point, an ordinary least-squares
//! fit of the tensor-product cubic `sum c_ab x^a t^b` (`0 <= a, b <= 3`) to the
//! surrounding window, differentiated analytically.
//!
//! On a uniform grid every window has the same geometry, so the fit reduces
//! to a fixed set of evaluation weights per query position inside the window.
//! Near the boundary the window is clamped inside the domain and the fit is
//! evaluated off-center.

use nalgebra::DMatrix;
use ndarray::Array2;
use rayon::prelude::*;

use super::{DerivativeBundle, Method};
use crate::dataset::NoisyDataset;
use crate::error::{Error, Result};
use crate::grid::Field;

pub const DEFAULT_WINDOW: usize = 11;
const DEGREE: usize = 3;
const NCOEF: usize = (DEGREE + 1) * (DEGREE + 1);
const MAX_CONDITION: f64 = 1e12;

/// Evaluation weights of the local fit, `weights[q][p]` for query position
/// `q` and window sample `p`, for `u`, `u_t`, `u_x`, `u_xx`.
struct Stencils {
    window: usize,
    weights: [Vec<Vec<f64>>; 4],
}

fn local_coords(window: usize) -> Vec<f64> {
    let half = (window - 1) as f64 / 2.0;
    (0..window).map(|k| (k as f64 - half) / half).collect()
}

fn powers(v: f64) -> [f64; DEGREE + 1] {
    [1.0, v, v * v, v * v * v]
}

fn stencils(window: usize, dx: f64, dt: f64) -> Result<Stencils> {
    let coords = local_coords(window);
    let npts = window * window;
    let design = DMatrix::from_fn(npts, NCOEF, |p, c| {
        let (kx, kt) = (p / window, p % window);
        let (a, b) = (c / (DEGREE + 1), c % (DEGREE + 1));
        coords[kx].powi(a as i32) * coords[kt].powi(b as i32)
    });
    let svd = design.svd(true, true);
    let sv = &svd.singular_values;
    let (smax, smin) = sv.iter().fold((0.0f64, f64::INFINITY), |(hi, lo), &s| {
        (hi.max(s), lo.min(s))
    });
    let condition = smax / smin;
    if !(condition < MAX_CONDITION) {
        return Err(Error::SingularFit {
            i: 0,
            j: 0,
            condition,
        });
    }
    let pinv = svd
        .pseudo_inverse(smax * 1e-14)
        .expect("SVD computed with both factors");

    let half = (window - 1) as f64 / 2.0;
    let sx = 1.0 / (half * dx);
    let st = 1.0 / (half * dt);
    let mut weights: [Vec<Vec<f64>>; 4] = Default::default();
    for qx in 0..window {
        for qt in 0..window {
            let px = powers(coords[qx]);
            let pt = powers(coords[qt]);
            let mut rows = [[0.0; NCOEF]; 4];
            for a in 0..=DEGREE {
                for b in 0..=DEGREE {
                    let c = a * (DEGREE + 1) + b;
                    let (af, bf) = (a as f64, b as f64);
                    rows[0][c] = px[a] * pt[b];
                    if b >= 1 {
                        rows[1][c] = bf * px[a] * pt[b - 1] * st;
                    }
                    if a >= 1 {
                        rows[2][c] = af * px[a - 1] * pt[b] * sx;
                    }
                    if a >= 2 {
                        rows[3][c] = af * (af - 1.0) * px[a - 2] * pt[b] * sx * sx;
                    }
                }
            }
            for (k, row) in rows.iter().enumerate() {
                let w: Vec<f64> = (0..npts)
                    .map(|p| (0..NCOEF).map(|c| row[c] * pinv[(c, p)]).sum())
                    .collect();
                weights[k].push(w);
            }
        }
    }
    Ok(Stencils { window, weights })
}

fn window_start(i: usize, n: usize, window: usize) -> usize {
    let half = (window - 1) / 2;
    i.saturating_sub(half).min(n - window)
}

/// Local bicubic regression with the default 11 x 11 window.
pub fn spline_bundle(ds: &NoisyDataset) -> Result<DerivativeBundle> {
    spline_bundle_with_window(ds, DEFAULT_WINDOW)
}

pub fn spline_bundle_with_window(ds: &NoisyDataset, window: usize) -> Result<DerivativeBundle> {
    let grid = ds.grid();
    let (m, n) = grid.shape();
    if window < DEGREE + 1 || window.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "spline window must be odd and at least {}, got {window}",
            DEGREE + 1
        )));
    }
    for (axis, got) in [("x", m), ("t", n)] {
        if got < window {
            return Err(Error::InsufficientPoints {
                axis,
                needed: window,
                got,
            });
        }
    }
    let st = stencils(window, grid.dx(), grid.dt())?;
    let obs = &ds.observed.values;

    let rows: Vec<[Vec<f64>; 4]> = (0..m)
        .into_par_iter()
        .map(|i| {
            let i0 = window_start(i, m, st.window);
            let qx = i - i0;
            let mut out: [Vec<f64>; 4] = Default::default();
            for o in out.iter_mut() {
                o.reserve(n);
            }
            for j in 0..n {
                let j0 = window_start(j, n, st.window);
                let q = qx * st.window + (j - j0);
                let mut acc = [0.0; 4];
                for kx in 0..st.window {
                    let base = kx * st.window;
                    for kt in 0..st.window {
                        let v = obs[[i0 + kx, j0 + kt]];
                        for (k, a) in acc.iter_mut().enumerate() {
                            *a += st.weights[k][q][base + kt] * v;
                        }
                    }
                }
                for (o, a) in out.iter_mut().zip(acc) {
                    o.push(a);
                }
            }
            out
        })
        .collect();

    let mut fields: [Array2<f64>; 4] = Default::default();
    for f in fields.iter_mut() {
        *f = Array2::zeros((m, n));
    }
    for (i, row) in rows.into_iter().enumerate() {
        for (k, vals) in row.into_iter().enumerate() {
            for (j, v) in vals.into_iter().enumerate() {
                fields[k][[i, j]] = v;
            }
        }
    }
    let [u, ut, ux, uxx] = fields;
    let bundle = DerivativeBundle::new(
        Field::new(grid.clone(), u, "u")?,
        Field::new(grid.clone(), ut, "u_t")?,
        Field::new(grid.clone(), ux, "u_x")?,
        Field::new(grid.clone(), uxx, "u_xx")?,
        Method::Spline,
    )?;
    Ok(bundle.unscale(ds.scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{add_noise, NoiseSpec, Preset};
    use crate::grid::Grid;

    fn dataset(grid: &Grid, f: impl Fn(f64, f64) -> f64) -> NoisyDataset {
        add_noise(
            &Field::from_fn(grid, "u", f).unwrap(),
            &Preset::FisherKpp.model_spec(),
            NoiseSpec::proportional(0.0, 0),
        )
    }

    #[test]
    fn reproduces_cubic_surface() {
        let grid = Grid::uniform((0.0, 1.0), 25, (0.0, 2.0), 21).unwrap();
        let ds = dataset(&grid, |x, t| x.powi(3) + t.powi(3) + x * t);
        let b = spline_bundle(&ds).unwrap();
        for i in 0..grid.nx() {
            for j in 0..grid.nt() {
                let (x, t) = (grid.x()[i], grid.t()[j]);
                assert!((b.u_x.values[[i, j]] - (3.0 * x * x + t)).abs() < 1e-8);
                assert!((b.u_t.values[[i, j]] - (3.0 * t * t + x)).abs() < 1e-8);
                assert!((b.u_xx.values[[i, j]] - 6.0 * x).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn constant_field_has_zero_derivatives() {
        let grid = Grid::uniform((0.0, 1.0), 15, (0.0, 1.0), 13).unwrap();
        let b = spline_bundle(&dataset(&grid, |_, _| 2.5)).unwrap();
        assert!(b.u.values.iter().all(|v| (v - 2.5).abs() < 1e-10));
        for f in [&b.u_t, &b.u_x, &b.u_xx] {
            assert!(f.values.iter().all(|v| v.abs() < 1e-10));
        }
    }

    #[test]
    fn needs_full_window() {
        let grid = Grid::uniform((0.0, 1.0), 10, (0.0, 1.0), 20).unwrap();
        assert!(matches!(
            spline_bundle(&dataset(&grid, |x, _| x)),
            Err(Error::InsufficientPoints { axis: "x", .. })
        ));
    }

    #[test]
    fn constant_shift_moves_only_u() {
        let grid = Grid::uniform((0.0, 1.0), 15, (0.0, 1.0), 15).unwrap();
        let f = |x: f64, t: f64| (3.0 * x).sin() * (1.0 + t * t);
        let a = spline_bundle(&dataset(&grid, f)).unwrap();
        let b = spline_bundle(&dataset(&grid, move |x, t| f(x, t) + 4.0)).unwrap();
        for ((u0, u1), (d0, d1)) in a
            .u
            .values
            .iter()
            .zip(b.u.values.iter())
            .zip(a.u_xx.values.iter().zip(b.u_xx.values.iter()))
        {
            assert!((u1 - u0 - 4.0).abs() < 1e-10);
            assert!((d1 - d0).abs() < 1e-8);
        }
    }
}

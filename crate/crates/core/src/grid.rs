//! Space-time sampling lattice and scalar fields sampled on it.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rectangular lattice of `M` spatial points by `N` time points.
///
/// Both axes are strictly increasing and uniformly spaced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    x: Vec<f64>,
    t: Vec<f64>,
}

fn check_axis(name: &'static str, v: &[f64]) -> Result<()> {
    if v.len() < 3 {
        return Err(Error::InsufficientPoints {
            axis: name,
            needed: 3,
            got: v.len(),
        });
    }
    if v.iter().any(|a| !a.is_finite()) {
        return Err(Error::InvalidGrid(format!("{name} axis has non-finite entries")));
    }
    let step = (v[v.len() - 1] - v[0]) / (v.len() - 1) as f64;
    if step <= 0.0 {
        return Err(Error::InvalidGrid(format!("{name} axis is not increasing")));
    }
    let scale = v.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    let tol = 1e-12 * step + 4.0 * f64::EPSILON * scale;
    for w in v.windows(2) {
        let d = w[1] - w[0];
        if d <= 0.0 {
            return Err(Error::InvalidGrid(format!(
                "{name} axis is not strictly increasing"
            )));
        }
        if (d - step).abs() > tol {
            return Err(Error::InvalidGrid(format!(
                "{name} axis spacing is not uniform ({d:e} vs {step:e})"
            )));
        }
    }
    Ok(())
}

pub fn linspace(start: f64, end: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![start];
    }
    let step = (end - start) / (n - 1) as f64;
    (0..n)
        .map(|i| if i == n - 1 { end } else { start + step * i as f64 })
        .collect()
}

impl Grid {
    pub fn new(x: Vec<f64>, t: Vec<f64>) -> Result<Self> {
        check_axis("x", &x)?;
        check_axis("t", &t)?;
        Ok(Self { x, t })
    }

    /// Uniform grid on `[x0, x1] x [t0, t1]`.
    pub fn uniform(x_range: (f64, f64), m: usize, t_range: (f64, f64), n: usize) -> Result<Self> {
        Self::new(
            linspace(x_range.0, x_range.1, m),
            linspace(t_range.0, t_range.1, n),
        )
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn t(&self) -> &[f64] {
        &self.t
    }

    pub fn nx(&self) -> usize {
        self.x.len()
    }

    pub fn nt(&self) -> usize {
        self.t.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.x.len(), self.t.len())
    }

    pub fn dx(&self) -> f64 {
        (self.x[self.x.len() - 1] - self.x[0]) / (self.x.len() - 1) as f64
    }

    pub fn dt(&self) -> f64 {
        (self.t[self.t.len() - 1] - self.t[0]) / (self.t.len() - 1) as f64
    }

    pub fn x_range(&self) -> (f64, f64) {
        (self.x[0], self.x[self.x.len() - 1])
    }

    pub fn t_range(&self) -> (f64, f64) {
        (self.t[0], self.t[self.t.len() - 1])
    }

    /// Same spatial axis, time axis restricted to `from..`.
    pub fn tail(&self, from: usize) -> Result<Self> {
        Self::new(self.x.clone(), self.t[from..].to_vec())
    }
}

/// A scalar quantity sampled on a [`Grid`]; `values[[i, j]]` is the value
/// at `(x_i, t_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field {
    pub grid: Grid,
    pub values: Array2<f64>,
    pub label: String,
}

impl Field {
    pub fn new(grid: Grid, values: Array2<f64>, label: impl Into<String>) -> Result<Self> {
        let label = label.into();
        if values.dim() != grid.shape() {
            return Err(Error::ShapeMismatch {
                expected: grid.shape(),
                got: values.dim(),
            });
        }
        if let Some(((i, j), _)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { label, i, j });
        }
        Ok(Self {
            grid,
            values,
            label,
        })
    }

    pub fn from_fn(
        grid: &Grid,
        label: impl Into<String>,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self> {
        let values = Array2::from_shape_fn(grid.shape(), |(i, j)| f(grid.x[i], grid.t[j]));
        Self::new(grid.clone(), values, label)
    }

    pub fn zeros(grid: &Grid, label: impl Into<String>) -> Self {
        Self {
            values: Array2::zeros(grid.shape()),
            grid: grid.clone(),
            label: label.into(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn relabel(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn map(&self, label: impl Into<String>, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.mapv(f),
            label: label.into(),
        }
    }

    /// Time slice `u(., t_j)`.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.column(j).to_vec()
    }
}

//! Spatial stencils shared by the forward solvers: second-order central
//! differences on a uniform grid with zero-flux (homogeneous Neumann) ends.

/// `u_x` by central differences; zero at both ends (no-flux condition).
pub fn gradient_neumann(u: &[f64], dx: f64, out: &mut [f64]) {
    let m = u.len();
    out[0] = 0.0;
    out[m - 1] = 0.0;
    let inv = 0.5 / dx;
    for i in 1..m - 1 {
        out[i] = (u[i + 1] - u[i - 1]) * inv;
    }
}

/// `u_xx` with mirrored ghost nodes, `u_{-1} = u_1` and `u_M = u_{M-2}`.
pub fn laplacian_neumann(u: &[f64], dx: f64, out: &mut [f64]) {
    let m = u.len();
    let inv = 1.0 / (dx * dx);
    out[0] = 2.0 * (u[1] - u[0]) * inv;
    out[m - 1] = 2.0 * (u[m - 2] - u[m - 1]) * inv;
    for i in 1..m - 1 {
        out[i] = (u[i + 1] - 2.0 * u[i] + u[i - 1]) * inv;
    }
}

/// `d/dx (D u u_x)` in conservative flux form, zero flux through both ends.
///
/// Boundary nodes own half a cell, so the trapezoid-rule integral of the
/// result is exactly zero.
pub fn nonlinear_flux_divergence(u: &[f64], diffusivity: f64, dx: f64, out: &mut [f64]) {
    let m = u.len();
    let flux = |i: usize| diffusivity * 0.5 * (u[i] + u[i + 1]) * (u[i + 1] - u[i]) / dx;
    let mut left = 0.0;
    for (i, o) in out.iter_mut().enumerate().take(m) {
        let right = if i + 1 < m { flux(i) } else { 0.0 };
        let width = if i == 0 || i == m - 1 { 0.5 * dx } else { dx };
        *o = (right - left) / width;
        left = right;
    }
}

/// Trapezoid-rule integral over a uniform axis.
pub fn trapezoid(values: &[f64], dx: f64) -> f64 {
    let m = values.len();
    if m < 2 {
        return 0.0;
    }
    let inner: f64 = values[1..m - 1].iter().sum();
    dx * (inner + 0.5 * (values[0] + values[m - 1]))
}

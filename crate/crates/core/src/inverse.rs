//! Coefficient refinement for a fixed equation structure: forward
//! simulation by the method of lines and a Nelder-Mead search on the
//! generalized least-squares misfit.

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denoise::ann::gls_denominator;
use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::library::{Term, NUM_TERMS};
use crate::mol;
use crate::pdefind::{LearnedEquation, Provenance};

/// Cost assigned to coefficient vectors whose simulation blows up.
pub const DIVERGENCE_COST: f64 = 1e10;

/// States beyond this magnitude count as blown up.
const BLOWUP: f64 = 1e6;

/// Upper bound on explicit steps per simulation.
const MAX_STEPS: usize = 2_000_000;

pub const PROVENANCE_TAG: &str = "inverse_problem";

#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePde {
    pub terms: Vec<Term>,
    pub coefficients: Vec<f64>,
    pub grid: Grid,
    pub initial_profile: Vec<f64>,
}

impl CandidatePde {
    pub fn new(terms: Vec<Term>, coefficients: Vec<f64>, grid: Grid, initial_profile: Vec<f64>) -> Result<Self> {
        if terms.len() != coefficients.len() {
            return Err(Error::InvalidModel(format!(
                "{} terms but {} coefficients",
                terms.len(),
                coefficients.len()
            )));
        }
        if initial_profile.len() != grid.nx() {
            return Err(Error::InvalidModel(format!(
                "initial profile has {} points, grid has {}",
                initial_profile.len(),
                grid.nx()
            )));
        }
        if initial_profile.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("initial profile is not finite".into()));
        }
        Ok(Self {
            terms,
            coefficients,
            grid,
            initial_profile,
        })
    }

    /// Structure and starting coefficients taken from a learned equation.
    pub fn from_equation(eq: &LearnedEquation, grid: Grid, initial_profile: Vec<f64>) -> Result<Self> {
        let terms = eq.terms();
        let coefficients = terms.iter().map(|&t| eq.coefficient(t)).collect();
        Self::new(terms, coefficients, grid, initial_profile)
    }

    /// Equation with the given coefficients on this structure.
    pub fn to_equation(&self, coeffs: &[f64], val0: f64, sigma: f64, seed: u64) -> LearnedEquation {
        let mut xi = vec![0.0; NUM_TERMS];
        for (t, c) in self.terms.iter().zip(coeffs) {
            xi[t.index()] = *c;
        }
        LearnedEquation::new(
            xi,
            val0,
            &Provenance {
                method: PROVENANCE_TAG.into(),
                sigma,
                seed,
            },
        )
    }
}

/// Largest stable explicit step for the current state.
fn stable_step(terms: &[Term], coeffs: &[f64], u: &[f64], ux: &[f64], uxx: &[f64], dx: f64) -> f64 {
    let umax = u.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let uxmax = ux.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let uxxmax = uxx.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let (mut diffusion, mut speed, mut rate) = (0.0, 0.0, 0.0);
    for (&term, &c) in terms.iter().zip(coeffs) {
        let c = c.abs();
        match term {
            Term::One => {}
            Term::U => rate += c,
            Term::U2 => rate += 2.0 * c * umax,
            Term::Ux => speed += c,
            Term::UUx => speed += c * umax,
            Term::U2Ux => speed += c * umax * umax,
            Term::Ux2 => speed += 2.0 * c * uxmax,
            Term::Uxx => diffusion += c,
            Term::UUxx => diffusion += c * umax,
            Term::U2Uxx => diffusion += c * umax * umax,
            Term::UxUxx => {
                diffusion += c * uxmax;
                speed += c * uxxmax;
            }
            Term::Uxx2 => diffusion += 2.0 * c * uxxmax,
        }
    }
    let mut dt = f64::INFINITY;
    if diffusion > 0.0 {
        dt = dt.min(0.4 * dx * dx / diffusion);
    }
    if speed > 0.0 {
        dt = dt.min(0.5 * dx / speed);
    }
    if rate > 0.0 {
        dt = dt.min(0.5 / rate);
    }
    dt
}

/// Explicit Euler integration of `u_t = sum c_k term_k(u, u_x, u_xx)` with
/// central differences and zero-flux ends, sampled on the candidate grid.
/// Blow-up is reported as [`Error::Divergence`].
pub fn simulate_candidate(pde: &CandidatePde, coeffs: &[f64]) -> Result<Field> {
    if coeffs.len() != pde.terms.len() {
        return Err(Error::InvalidModel(format!(
            "expected {} coefficients, got {}",
            pde.terms.len(),
            coeffs.len()
        )));
    }
    let grid = &pde.grid;
    let (m, n) = grid.shape();
    let dx = grid.dx();
    let mut u = pde.initial_profile.clone();
    let mut ux = vec![0.0; m];
    let mut uxx = vec![0.0; m];
    let mut rhs = vec![0.0; m];
    let mut values = Array2::zeros((m, n));
    values.column_mut(0).assign(&ArrayView1::from(&u));
    let mut step = 0usize;
    for j in 1..n {
        let mut remaining = grid.t()[j] - grid.t()[j - 1];
        while remaining > 0.0 {
            mol::gradient_neumann(&u, dx, &mut ux);
            mol::laplacian_neumann(&u, dx, &mut uxx);
            let bound = stable_step(&pde.terms, coeffs, &u, &ux, &uxx, dx);
            // split what is left of the interval into equal steps
            let pieces = (remaining / bound).ceil().max(1.0);
            let h = remaining / pieces;
            rhs.iter_mut().for_each(|r| *r = 0.0);
            for (&term, &c) in pde.terms.iter().zip(coeffs) {
                if c == 0.0 {
                    continue;
                }
                for i in 0..m {
                    rhs[i] += c * term.eval(u[i], ux[i], uxx[i]);
                }
            }
            for (ui, ri) in u.iter_mut().zip(&rhs) {
                *ui += h * ri;
            }
            step += 1;
            if u.iter().any(|v| !v.is_finite() || v.abs() > BLOWUP) || step > MAX_STEPS {
                return Err(Error::Divergence { step });
            }
            remaining = if pieces <= 1.0 { 0.0 } else { remaining - h };
        }
        values.column_mut(j).assign(&ArrayView1::from(&u));
    }
    Field::new(grid.clone(), values, "u")
}

/// Mean of `((h - u) / |h|^gamma)^2` between a simulation and observations.
pub fn gls_misfit(sim: &Field, observed: &Field, gamma: f64) -> f64 {
    let n = sim.values.len().max(1) as f64;
    sim.values
        .iter()
        .zip(observed.values.iter())
        .map(|(&h, &u)| {
            let r = (h - u) / gls_denominator(h, gamma);
            r * r
        })
        .sum::<f64>()
        / n
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NelderMeadOptions {
    pub reflection: f64,
    pub expansion: f64,
    pub contraction: f64,
    pub shrink: f64,
    /// Relative perturbation of each coordinate for the starting simplex.
    pub initial_step: f64,
    /// Perturbation used for coordinates that start at zero.
    pub zero_step: f64,
    /// Stop once the simplex diameter falls below this fraction of the
    /// best vertex norm.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            reflection: 1.0,
            expansion: 2.0,
            contraction: 0.5,
            shrink: 0.5,
            initial_step: 0.05,
            zero_step: 1e-4,
            tolerance: 1e-8,
            max_iterations: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub initial_value: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn diameter(simplex: &[Vec<f64>]) -> f64 {
    let mut d: f64 = 0.0;
    for a in 0..simplex.len() {
        for b in a + 1..simplex.len() {
            let dist = simplex[a]
                .iter()
                .zip(&simplex[b])
                .map(|(p, q)| (p - q) * (p - q))
                .sum::<f64>()
                .sqrt();
            d = d.max(dist);
        }
    }
    d
}

/// Derivative-free minimization of `f` starting from `x0`. Vertices where
/// `f` is not finite are treated as `+inf`. Fails with
/// [`Error::SimplexInit`] when no starting vertex has a value below
/// `reject`.
pub fn nelder_mead<F>(f: F, x0: &[f64], opts: &NelderMeadOptions, reject: f64) -> Result<Minimum>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let n = x0.len();
    let eval = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for k in 0..n {
        let mut v = x0.to_vec();
        v[k] = if v[k] == 0.0 {
            opts.zero_step
        } else {
            v[k] * (1.0 + opts.initial_step)
        };
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.par_iter().map(|v| eval(v)).collect();
    let initial_value = values[0];
    if values.iter().all(|&v| v >= reject) {
        return Err(Error::SimplexInit);
    }
    if n == 0 {
        return Ok(Minimum {
            x: vec![],
            value: initial_value,
            initial_value,
            iterations: 0,
            converged: true,
        });
    }

    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iterations {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let scale = simplex[0].iter().map(|v| v * v).sum::<f64>().sqrt();
        if diameter(&simplex) <= opts.tolerance * scale.max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..n)
            .map(|k| simplex[..n].iter().map(|v| v[k]).sum::<f64>() / n as f64)
            .collect();
        let along = |coef: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n])
                .map(|(c, w)| c + coef * (c - w))
                .collect()
        };
        let xr = along(opts.reflection);
        let fr = eval(&xr);
        if fr < values[0] {
            let xe = along(opts.reflection * opts.expansion);
            let fe = eval(&xe);
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < values[n] {
            let xc = along(opts.reflection * opts.contraction);
            let fc = eval(&xc);
            (xc, fc)
        } else {
            let xc = along(-opts.contraction);
            let fc = eval(&xc);
            (xc, fc)
        };
        if fc < values[n].min(fr) {
            simplex[n] = xc;
            values[n] = fc;
            continue;
        }
        let best = simplex[0].clone();
        for v in simplex.iter_mut().skip(1) {
            for (vk, bk) in v.iter_mut().zip(&best) {
                *vk = bk + opts.shrink * (*vk - bk);
            }
        }
        let shrunk: Vec<f64> = simplex[1..].par_iter().map(|v| eval(v)).collect();
        values[1..].copy_from_slice(&shrunk);
    }
    let best = (0..=n)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .expect("simplex is not empty");
    Ok(Minimum {
        x: simplex[best].clone(),
        value: values[best],
        initial_value,
        iterations,
        converged,
    })
}

/// Nelder-Mead fit of the candidate's coefficients to `observed`, which
/// must live on the candidate grid. Divergent trials cost
/// [`DIVERGENCE_COST`].
pub fn fit_coefficients(
    pde: &CandidatePde,
    observed: &Field,
    gamma: f64,
    opts: &NelderMeadOptions,
) -> Result<Minimum> {
    if observed.grid != pde.grid {
        return Err(Error::ShapeMismatch {
            expected: pde.grid.shape(),
            got: observed.shape(),
        });
    }
    let cost = |c: &[f64]| match simulate_candidate(pde, c) {
        Ok(sim) => gls_misfit(&sim, observed, gamma).min(DIVERGENCE_COST),
        Err(_) => DIVERGENCE_COST,
    };
    let found = nelder_mead(cost, &pde.coefficients, opts, DIVERGENCE_COST)?;
    log::info!(
        "simplex search: cost {:.4e} -> {:.4e} in {} iterations",
        found.initial_value,
        found.value,
        found.iterations
    );
    Ok(found)
}

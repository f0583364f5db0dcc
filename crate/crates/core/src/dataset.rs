//! Synthetic data from the three transport models, proportional-error
//! noise, and the unit rescaling applied before denoising.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::mol;

/// PDE model with exactly the coefficients its equation carries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    /// `u_t = -c u_x + D u_xx`
    DiffusionAdvection { d: f64, c: f64 },
    /// `u_t = D u_xx + r u - r u^2`
    FisherKpp { d: f64, r: f64 },
    /// `u_t = (D u u_x)_x + r u - r u^2`
    NonlinearFisherKpp { d: f64, r: f64 },
}

impl Model {
    pub fn diffusivity(&self) -> f64 {
        match *self {
            Model::DiffusionAdvection { d, .. }
            | Model::FisherKpp { d, .. }
            | Model::NonlinearFisherKpp { d, .. } => d,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        match *self {
            Model::DiffusionAdvection { d, c } => {
                if !ok(d) || !c.is_finite() {
                    return Err(Error::InvalidModel(format!(
                        "diffusion-advection needs D > 0 and finite c (D={d}, c={c})"
                    )));
                }
            }
            Model::FisherKpp { d, r } | Model::NonlinearFisherKpp { d, r } => {
                if !ok(d) || !ok(r) {
                    return Err(Error::InvalidModel(format!(
                        "Fisher-KPP models need D > 0 and r > 0 (D={d}, r={r})"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "snake_case")]
pub enum InitialCondition {
    /// `exp(-(x - center)^2 / (2 width^2))`
    Gaussian { center: f64, width: f64 },
    Constant { value: f64 },
    /// Explicit nodal values, one per spatial grid point.
    Tabulated { values: Vec<f64> },
}

impl InitialCondition {
    pub fn sample(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            InitialCondition::Gaussian { center, width } => Ok(x
                .iter()
                .map(|xi| (-(xi - center).powi(2) / (2.0 * width * width)).exp())
                .collect()),
            InitialCondition::Constant { value } => Ok(vec![*value; x.len()]),
            InitialCondition::Tabulated { values } => {
                if values.len() != x.len() {
                    return Err(Error::InvalidModel(format!(
                        "tabulated initial condition has {} values for {} grid points",
                        values.len(),
                        x.len()
                    )));
                }
                Ok(values.clone())
            }
        }
    }

    fn name(&self) -> &'static str {
        match self {
            InitialCondition::Gaussian { .. } => "gaussian",
            InitialCondition::Constant { .. } => "constant",
            InitialCondition::Tabulated { .. } => "tabulated",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model: Model,
    pub initial: InitialCondition,
}

impl ModelSpec {
    pub fn new(model: Model, initial: InitialCondition) -> Result<Self> {
        model.validate()?;
        if let InitialCondition::Gaussian { width, .. } = initial {
            if !(width > 0.0) {
                return Err(Error::InvalidModel("Gaussian width must be positive".into()));
            }
        }
        Ok(Self { model, initial })
    }
}

/// Proportional-error noise: `U = u + sigma |u|^gamma eps`, `eps ~ N(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub gamma: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn proportional(sigma: f64, seed: u64) -> Self {
        Self {
            sigma,
            gamma: 1.0,
            seed,
        }
    }
}

/// Affine map between original values and `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scale {
    pub min: f64,
    pub max: f64,
}

impl Scale {
    pub const IDENTITY: Scale = Scale { min: 0.0, max: 1.0 };

    pub fn span(&self) -> f64 {
        self.max - self.min
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.min) / self.span()
    }

    pub fn invert(&self, v: f64) -> f64 {
        self.min + self.span() * v
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }
}

impl Default for Scale {
    fn default() -> Self {
        Self::IDENTITY
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisyDataset {
    pub clean: Field,
    /// Observations, in scaled units when `scale` is not the identity.
    pub observed: Field,
    pub model: ModelSpec,
    pub noise: NoiseSpec,
    pub scale: Scale,
}

impl NoisyDataset {
    pub fn grid(&self) -> &Grid {
        &self.clean.grid
    }

    /// Observations mapped back to original units.
    pub fn observed_original(&self) -> Field {
        let s = self.scale;
        self.observed.map("U", |v| s.invert(v))
    }
}

/// The three models with the grids and coefficients used for the
/// reproduction experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    DiffusionAdvection,
    FisherKpp,
    NonlinearFisherKpp,
}

impl Preset {
    pub const ALL: [Preset; 3] = [
        Preset::DiffusionAdvection,
        Preset::FisherKpp,
        Preset::NonlinearFisherKpp,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Preset::DiffusionAdvection => "diffusion-advection",
            Preset::FisherKpp => "fisher-kpp",
            Preset::NonlinearFisherKpp => "nonlinear-fisher-kpp",
        }
    }

    pub fn model_spec(&self) -> ModelSpec {
        let (model, initial) = match self {
            Preset::DiffusionAdvection => (
                Model::DiffusionAdvection { d: 0.01, c: 0.8 },
                InitialCondition::Gaussian {
                    center: 0.2,
                    width: 0.05,
                },
            ),
            Preset::FisherKpp => (
                Model::FisherKpp { d: 0.02, r: 10.0 },
                InitialCondition::Gaussian {
                    center: 0.0,
                    width: 0.05,
                },
            ),
            Preset::NonlinearFisherKpp => (
                Model::NonlinearFisherKpp { d: 0.02, r: 10.0 },
                InitialCondition::Gaussian {
                    center: 0.0,
                    width: 0.05,
                },
            ),
        };
        ModelSpec::new(model, initial).expect("preset coefficients are valid")
    }

    pub fn grid(&self) -> Grid {
        let (m, n) = match self {
            Preset::DiffusionAdvection => (101, 300),
            Preset::FisherKpp | Preset::NonlinearFisherKpp => (199, 99),
        };
        Grid::uniform((0.0, 1.0), m, (0.0, 1.0), n).expect("preset grid is valid")
    }

    /// Pruning threshold that suits the model.
    pub fn alpha(&self) -> f64 {
        match self {
            Preset::NonlinearFisherKpp => 0.05,
            _ => 0.25,
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model preset `{s}`")))
    }
}

/// Noiseless field for any model: analytic for diffusion-advection, the
/// explicit solver for both Fisher-KPP variants.
pub fn solve(spec: &ModelSpec, grid: &Grid) -> Result<Field> {
    match spec.model {
        Model::DiffusionAdvection { .. } => solve_diffusion_advection(spec, grid),
        _ => solve_reaction_diffusion(spec, grid, default_internal_step(spec, grid)?),
    }
}

fn gaussian_params(spec: &ModelSpec) -> Result<(f64, f64, f64, f64)> {
    let Model::DiffusionAdvection { d, c } = spec.model else {
        return Err(Error::InvalidModel(
            "analytic solution is only available for diffusion-advection".into(),
        ));
    };
    match spec.initial {
        InitialCondition::Gaussian { center, width } => Ok((d, c, center, width)),
        ref other => Err(Error::UnsupportedAnalyticIc(other.name().into())),
    }
}

/// Exact `(u, u_t, u_x, u_xx)` of the advected, spreading Gaussian.
pub fn diffusion_advection_exact(spec: &ModelSpec, x: f64, t: f64) -> Result<[f64; 4]> {
    let (d, c, x0, s) = gaussian_params(spec)?;
    Ok(gaussian_pulse(d, c, x0, s, x, t))
}

fn gaussian_pulse(d: f64, c: f64, x0: f64, s: f64, x: f64, t: f64) -> [f64; 4] {
    let var = s * s + 2.0 * d * t;
    let offset = x - x0 - c * t;
    let u = (s / var.sqrt()) * (-offset * offset / (2.0 * var)).exp();
    let ux = -offset / var * u;
    let uxx = (offset * offset / (var * var) - 1.0 / var) * u;
    let ut = -c * ux + d * uxx;
    [u, ut, ux, uxx]
}

pub fn solve_diffusion_advection(spec: &ModelSpec, grid: &Grid) -> Result<Field> {
    let (d, c, x0, s) = gaussian_params(spec)?;
    Field::from_fn(grid, "u", |x, t| gaussian_pulse(d, c, x0, s, x, t)[0])
}

/// Exact derivative fields `(u, u_t, u_x, u_xx)` of the diffusion-advection
/// solution on a grid.
pub fn diffusion_advection_derivatives(spec: &ModelSpec, grid: &Grid) -> Result<[Field; 4]> {
    let (d, c, x0, s) = gaussian_params(spec)?;
    let (m, n) = grid.shape();
    let mut out = [
        Array2::zeros((m, n)),
        Array2::zeros((m, n)),
        Array2::zeros((m, n)),
        Array2::zeros((m, n)),
    ];
    for i in 0..m {
        for j in 0..n {
            let v = gaussian_pulse(d, c, x0, s, grid.x()[i], grid.t()[j]);
            for k in 0..4 {
                out[k][[i, j]] = v[k];
            }
        }
    }
    let [u, ut, ux, uxx] = out;
    Ok([
        Field::new(grid.clone(), u, "u")?,
        Field::new(grid.clone(), ut, "u_t")?,
        Field::new(grid.clone(), ux, "u_x")?,
        Field::new(grid.clone(), uxx, "u_xx")?,
    ])
}

fn reaction_diffusion_coeffs(spec: &ModelSpec) -> Result<(f64, f64, bool)> {
    match spec.model {
        Model::FisherKpp { d, r } => Ok((d, r, false)),
        Model::NonlinearFisherKpp { d, r } => Ok((d, r, true)),
        Model::DiffusionAdvection { .. } => Err(Error::InvalidModel(
            "the explicit solver handles the Fisher-KPP models only".into(),
        )),
    }
}

fn effective_diffusivity(spec: &ModelSpec, u0: &[f64]) -> Result<f64> {
    let (d, _, nonlinear) = reaction_diffusion_coeffs(spec)?;
    if nonlinear {
        let peak = u0.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        Ok(d * peak)
    } else {
        Ok(d)
    }
}

/// Largest explicit-Euler step that keeps the scheme stable.
pub fn stability_bound(spec: &ModelSpec, grid: &Grid) -> Result<f64> {
    let u0 = spec.initial.sample(grid.x())?;
    let (_, r, _) = reaction_diffusion_coeffs(spec)?;
    let dx = grid.dx();
    let diffusive = 0.5 * dx * dx / effective_diffusivity(spec, &u0)?;
    Ok(diffusive.min(1.0 / r))
}

/// `0.4 dx^2 / D_max`, capped by the reaction time scale.
pub fn default_internal_step(spec: &ModelSpec, grid: &Grid) -> Result<f64> {
    let u0 = spec.initial.sample(grid.x())?;
    let (_, r, _) = reaction_diffusion_coeffs(spec)?;
    let dx = grid.dx();
    Ok((0.4 * dx * dx / effective_diffusivity(spec, &u0)?).min(0.5 / r))
}

/// Method-of-lines solution of either Fisher-KPP variant: explicit Euler in
/// time, central differences in space, zero-flux ends. The internal step is
/// shrunk so that it divides every output interval.
pub fn solve_reaction_diffusion(spec: &ModelSpec, grid: &Grid, dt_internal: f64) -> Result<Field> {
    let (d, r, nonlinear) = reaction_diffusion_coeffs(spec)?;
    let bound = stability_bound(spec, grid)?;
    if !(dt_internal > 0.0) || dt_internal > bound {
        return Err(Error::Stability {
            dt: dt_internal,
            bound,
        });
    }
    let (m, n) = grid.shape();
    let dx = grid.dx();
    let mut u = spec.initial.sample(grid.x())?;
    let mut values = Array2::zeros((m, n));
    values.column_mut(0).assign(&ndarray::ArrayView1::from(&u));
    let mut diffusion = vec![0.0; m];
    let mut step = 0usize;
    for j in 1..n {
        let interval = grid.t()[j] - grid.t()[j - 1];
        let substeps = (interval / dt_internal).ceil().max(1.0) as usize;
        let h = interval / substeps as f64;
        for _ in 0..substeps {
            step += 1;
            if nonlinear {
                mol::nonlinear_flux_divergence(&u, d, dx, &mut diffusion);
            } else {
                mol::laplacian_neumann(&u, dx, &mut diffusion);
                diffusion.iter_mut().for_each(|v| *v *= d);
            }
            for (ui, di) in u.iter_mut().zip(&diffusion) {
                *ui += h * (di + r * *ui * (1.0 - *ui));
            }
            if u.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence { step });
            }
        }
        values.column_mut(j).assign(&ndarray::ArrayView1::from(&u));
    }
    Field::new(grid.clone(), values, "u")
}

/// Corrupt a clean field with seeded proportional-error noise.
pub fn add_noise(clean: &Field, model: &ModelSpec, noise: NoiseSpec) -> NoisyDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let observed = if noise.sigma == 0.0 {
        clean.clone()
    } else {
        let mut values = clean.values.clone();
        for v in values.iter_mut() {
            let eps: f64 = StandardNormal.sample(&mut rng);
            *v += noise.sigma * v.abs().powf(noise.gamma) * eps;
        }
        Field {
            grid: clean.grid.clone(),
            values,
            label: "U".into(),
        }
    };
    NoisyDataset {
        clean: clean.clone(),
        observed: observed.relabel("U"),
        model: model.clone(),
        noise,
        scale: Scale::IDENTITY,
    }
}

/// Map observations affinely onto `[0, 1]`, recording the scale. A constant
/// field keeps the identity scale. Applying to an already scaled dataset
/// composes the two maps.
pub fn rescale_unit(ds: &NoisyDataset) -> NoisyDataset {
    let (lo, hi) = ds
        .observed
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let mut out = ds.clone();
    if !(hi > lo) {
        return out;
    }
    let step = Scale { min: lo, max: hi };
    out.observed.values.mapv_inplace(|v| step.apply(v));
    out.scale = Scale {
        min: ds.scale.invert(lo),
        max: ds.scale.invert(hi),
    };
    out
}

/// Generate, corrupt, and rescale one dataset.
pub fn generate(spec: &ModelSpec, grid: &Grid, noise: NoiseSpec) -> Result<NoisyDataset> {
    let clean = solve(spec, grid)?;
    Ok(rescale_unit(&add_noise(&clean, spec, noise)))
}

pub fn generate_preset(preset: Preset, noise: NoiseSpec) -> Result<NoisyDataset> {
    generate(&preset.model_spec(), &preset.grid(), noise)
}

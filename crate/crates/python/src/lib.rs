//! Python bindings: datasets, the three denoisers, equation learning, the
//! inverse problem and whole experiments.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use pdelearn::dataset::{self, NoiseSpec, NoisyDataset, Preset};
use pdelearn::denoise::{self, DerivativeBundle, Init, TrainConfig};
use pdelearn::experiment::{self, split_seed, ExperimentConfig};
use pdelearn::inverse::{self, CandidatePde, NelderMeadOptions};
use pdelearn::library::{build_library, true_support, Subsample, Term};
use pdelearn::metrics;
use pdelearn::pdefind::{self, LearnedEquation, Provenance};
use pdelearn::{Error, Field};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::InvalidModel(_) | Error::InvalidTrainConfig(_) | Error::ShapeMismatch { .. } => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(py_err)
}

fn rows(f: &Field) -> Vec<Vec<f64>> {
    f.values.outer_iter().map(|r| r.to_vec()).collect()
}

fn parse_terms(labels: &[String]) -> PyResult<Vec<Term>> {
    labels.iter().map(|l| parse(l)).collect()
}

/// Noisy observations of a simulated model, indexed `[x][t]`.
#[pyclass(name = "Dataset", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyDataset {
    inner: NoisyDataset,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    #[pyo3(signature = (model, sigma, seed = 0))]
    fn generate(model: &str, sigma: f64, seed: u64) -> PyResult<Self> {
        let preset: Preset = parse(model)?;
        let inner = dataset::generate_preset(preset, NoiseSpec::proportional(sigma, seed)).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn x(&self) -> Vec<f64> {
        self.inner.grid().x().to_vec()
    }

    #[getter]
    fn t(&self) -> Vec<f64> {
        self.inner.grid().t().to_vec()
    }

    #[getter]
    fn clean(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.clean)
    }

    /// Observations in original units.
    #[getter]
    fn observed(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.observed_original())
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.inner.noise.sigma
    }

    /// RMSE of each field of `bundle` against the reference derivatives.
    fn score(&self, bundle: &PyBundle) -> PyResult<Vec<(String, f64)>> {
        let truth = experiment::truth_fields(&self.inner).map_err(py_err)?;
        bundle
            .inner
            .fields()
            .iter()
            .zip(&truth)
            .map(|((name, f), t)| Ok((name.to_string(), metrics::rmse(f, t).map_err(py_err)?)))
            .collect()
    }

    fn __repr__(&self) -> String {
        let (m, n) = self.inner.grid().shape();
        format!("Dataset({m}x{n}, sigma={})", self.inner.noise.sigma)
    }
}

/// `u`, `u_t`, `u_x`, `u_xx` estimated by one denoiser.
#[pyclass(name = "Bundle", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyBundle {
    inner: DerivativeBundle,
}

#[pymethods]
impl PyBundle {
    #[getter]
    fn method(&self) -> String {
        self.inner.method.to_string()
    }

    #[getter]
    fn u(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.u)
    }

    #[getter]
    fn u_t(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.u_t)
    }

    #[getter]
    fn u_x(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.u_x)
    }

    #[getter]
    fn u_xx(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.u_xx)
    }

    fn __repr__(&self) -> String {
        format!("Bundle(method={})", self.inner.method)
    }
}

#[pyclass(name = "Equation", frozen, from_py_object)]
#[derive(Clone)]
pub struct PyEquation {
    inner: LearnedEquation,
}

#[pymethods]
impl PyEquation {
    #[getter]
    fn terms(&self) -> Vec<String> {
        self.inner.terms().iter().map(|t| t.label().to_string()).collect()
    }

    #[getter]
    fn coefficients(&self) -> Vec<(String, f64)> {
        self.inner
            .terms()
            .iter()
            .map(|&t| (t.label().to_string(), self.inner.coefficient(t)))
            .collect()
    }

    #[getter]
    fn val0(&self) -> f64 {
        self.inner.val0
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    fn render(&self) -> String {
        self.inner.render()
    }

    fn __repr__(&self) -> String {
        self.inner.render()
    }
}

#[pyfunction]
fn fd(ds: &PyDataset) -> PyResult<PyBundle> {
    Ok(PyBundle {
        inner: denoise::fd_bundle(&ds.inner).map_err(py_err)?,
    })
}

#[pyfunction]
fn spline(ds: &PyDataset) -> PyResult<PyBundle> {
    Ok(PyBundle {
        inner: denoise::spline_bundle(&ds.inner).map_err(py_err)?,
    })
}

/// Train the network surrogate and differentiate it. With `weight_scale`
/// set, hidden units are drawn at random and the output layer is solved by
/// least squares before any Adam epochs; `None` keeps the uniform start.
/// The GIL is released while training.
#[pyfunction]
#[pyo3(signature = (ds, hidden = 1000, weight_scale = Some(30.0), max_epochs = 0, gamma = 1.0, learning_rate = 1e-3, final_learning_rate = None, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn ann(
    py: Python<'_>,
    ds: &PyDataset,
    hidden: usize,
    weight_scale: Option<f64>,
    max_epochs: usize,
    gamma: f64,
    learning_rate: f64,
    final_learning_rate: Option<f64>,
    seed: u64,
) -> PyResult<PyBundle> {
    let cfg = TrainConfig {
        hidden,
        init: weight_scale.map_or(Init::Uniform, Init::random_features),
        max_epochs,
        gamma,
        learning_rate,
        final_learning_rate,
        seed,
        ..TrainConfig::default()
    };
    let data = ds.inner.clone();
    let inner = py
        .detach(move || {
            let (net, _) = denoise::train(&data, &cfg)?;
            net.bundle(data.grid())
        })
        .map_err(py_err)?;
    Ok(PyBundle { inner })
}

/// Sparse regression over `splits` tile splits; `alpha=None` skips pruning
/// and a negative value selects the model default.
#[pyfunction]
#[pyo3(signature = (bundle, model, splits = 100, alpha = Some(-1.0), master_seed = 0))]
fn learn(bundle: &PyBundle, model: &str, splits: usize, alpha: Option<f64>, master_seed: u64) -> PyResult<Vec<PyEquation>> {
    let preset: Preset = parse(model)?;
    let alpha = alpha.map(|a| if a < 0.0 { preset.alpha() } else { a });
    let lib = build_library(&bundle.inner, Subsample::for_preset(preset)).map_err(py_err)?;
    let grid = pdefind::default_k_grid();
    Ok((0..splits as u64)
        .map(|i| {
            let seed = split_seed(master_seed, i);
            let split = pdefind::make_split(&lib, pdefind::DEFAULT_TILE, seed);
            let prov = Provenance {
                method: bundle.inner.method.to_string(),
                sigma: 0.0,
                seed,
            };
            PyEquation {
                inner: pdefind::learn(&lib, &split, &grid, alpha, &prov),
            }
        })
        .collect())
}

/// Modal equation of a list of learned equations, with mean coefficients.
#[pyfunction]
fn modal(equations: Vec<PyEquation>) -> Option<(PyEquation, usize)> {
    let eqs: Vec<LearnedEquation> = equations.into_iter().map(|e| e.inner).collect();
    let agg = metrics::aggregate_equations(&eqs)?;
    let template = eqs.iter().find(|e| e.support == agg.support)?;
    Some((
        PyEquation {
            inner: agg.as_equation(template),
        },
        agg.count,
    ))
}

#[pyfunction]
fn tpr(learned: Vec<String>, truth: Vec<String>) -> PyResult<f64> {
    Ok(metrics::tpr(&parse_terms(&learned)?, &parse_terms(&truth)?).value())
}

#[pyfunction]
fn true_terms(model: &str) -> PyResult<Vec<String>> {
    let preset: Preset = parse(model)?;
    Ok(true_support(preset).iter().map(|t| t.label().to_string()).collect())
}

/// Fit the coefficients of a fixed equation structure by forward
/// simulation against the dataset's observations.
#[pyfunction]
#[pyo3(signature = (ds, terms, coefficients, gamma = 1.0))]
fn refine(py: Python<'_>, ds: &PyDataset, terms: Vec<String>, coefficients: Vec<f64>, gamma: f64) -> PyResult<(Vec<f64>, f64)> {
    let terms = parse_terms(&terms)?;
    let data = ds.inner.clone();
    let found = py
        .detach(move || {
            let pde = CandidatePde::new(terms, coefficients, data.grid().clone(), data.observed_original().column(0))?;
            inverse::fit_coefficients(&pde, &data.observed_original(), gamma, &NelderMeadOptions::default())
        })
        .map_err(py_err)?;
    Ok((found.x, found.value))
}

/// Run a whole experiment from a TOML configuration; returns the contents
/// of `equations.json`.
#[pyfunction]
fn run_experiment(py: Python<'_>, config_toml: &str) -> PyResult<String> {
    let cfg = ExperimentConfig::from_toml(config_toml).map_err(py_err)?;
    let report = py.detach(|| experiment::run_experiment(&cfg)).map_err(py_err)?;
    serde_json::to_string(&report.equations).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
fn pdelearn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyBundle>()?;
    m.add_class::<PyEquation>()?;
    m.add_function(wrap_pyfunction!(fd, m)?)?;
    m.add_function(wrap_pyfunction!(spline, m)?)?;
    m.add_function(wrap_pyfunction!(ann, m)?)?;
    m.add_function(wrap_pyfunction!(learn, m)?)?;
    m.add_function(wrap_pyfunction!(modal, m)?)?;
    m.add_function(wrap_pyfunction!(tpr, m)?)?;
    m.add_function(wrap_pyfunction!(true_terms, m)?)?;
    m.add_function(wrap_pyfunction!(refine, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}

//! End-to-end experiment driver: generate, denoise, learn, refine, report.
//! Every stage reads and writes artifacts under the output directory, so the
//! stages can run separately or in one go with identical results.

use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{self, ModelSpec, NoiseSpec, NoisyDataset, Preset};
use crate::denoise::ann::TrainReport;
use crate::denoise::{self, DerivativeBundle, Method, TrainConfig, TrainedSurrogate};
use crate::error::{Error, Result};
use crate::grid::Field;
use crate::inverse::{self, CandidatePde, Minimum, NelderMeadOptions};
use crate::io;
use crate::library::{build_library, true_support, Subsample, Term};
use crate::metrics::{self, AggregateEquation, BoxStats};
use crate::pdefind::{self, LearnedEquation, Provenance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: Preset,
    /// Replaces the preset's coefficients and initial condition.
    pub model: Option<ModelSpec>,
    pub sigmas: Vec<f64>,
    pub methods: Vec<Method>,
    pub splits: usize,
    /// Pruning threshold; the preset default when absent.
    pub alpha: Option<f64>,
    pub prune: bool,
    pub k_grid: Vec<f64>,
    pub tile_size: usize,
    pub noise_seed: u64,
    /// Split seeds are derived from this one.
    pub master_seed: u64,
    pub output: PathBuf,
    pub inverse: bool,
    /// Equation structure for refinement; the modal learned support when absent.
    pub inverse_terms: Option<Vec<Term>>,
    pub inverse_gamma: f64,
    pub subsample: Option<Subsample>,
    pub ann: TrainConfig,
    pub nelder_mead: NelderMeadOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            preset: Preset::DiffusionAdvection,
            model: None,
            sigmas: vec![0.0, 0.01, 0.05, 0.10, 0.25, 0.50],
            methods: Method::ALL.to_vec(),
            splits: 100,
            alpha: None,
            prune: true,
            k_grid: pdefind::default_k_grid(),
            tile_size: pdefind::DEFAULT_TILE,
            noise_seed: 0,
            master_seed: 0,
            output: PathBuf::from("results"),
            inverse: false,
            inverse_terms: None,
            inverse_gamma: 1.0,
            subsample: None,
            ann: TrainConfig::default(),
            nelder_mead: NelderMeadOptions::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn for_preset(preset: Preset) -> Self {
        Self {
            preset,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.splits == 0 {
            return bad("splits must be at least 1".into());
        }
        if self.sigmas.is_empty() {
            return bad("sigma list is empty".into());
        }
        if let Some(s) = self.sigmas.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return bad(format!("sigma must be finite and non-negative, got {s}"));
        }
        if self.methods.is_empty() {
            return bad("denoiser list is empty".into());
        }
        if self.k_grid.is_empty() || self.k_grid.iter().any(|k| !(k.is_finite() && *k >= 0.0)) {
            return bad("k grid must be a non-empty list of non-negative numbers".into());
        }
        if let Some(a) = self.alpha {
            if !(a >= 0.0) {
                return bad(format!("alpha must be non-negative, got {a}"));
            }
        }
        if self.tile_size == 0 {
            return bad("tile size must be positive".into());
        }
        self.ann.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.model_spec()?;
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        match &self.model {
            Some(spec) => ModelSpec::new(spec.model, spec.initial.clone()),
            None => Ok(self.preset.model_spec()),
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(self.preset.alpha())
    }

    pub fn subsample(&self) -> Subsample {
        self.subsample.unwrap_or(Subsample::for_preset(self.preset))
    }

    pub fn dataset_dir(&self, sigma: f64) -> PathBuf {
        self.output.join(self.preset.name()).join(format!("sigma-{sigma}"))
    }

    pub fn dataset_path(&self, sigma: f64) -> PathBuf {
        self.dataset_dir(sigma).join("data.csv")
    }

    pub fn bundle_path(&self, sigma: f64, method: Method) -> PathBuf {
        self.dataset_dir(sigma).join(format!("bundle-{method}.csv"))
    }

    pub fn checkpoint_path(&self, sigma: f64) -> PathBuf {
        self.dataset_dir(sigma).join("ann-checkpoint.json")
    }

    pub fn learn_path(&self, sigma: f64, method: Method) -> PathBuf {
        self.dataset_dir(sigma).join(format!("learn-{method}.json"))
    }

    pub fn refine_path(&self, sigma: f64, method: Method) -> PathBuf {
        self.dataset_dir(sigma).join(format!("refine-{method}.json"))
    }

    pub fn split_seeds(&self) -> Vec<u64> {
        (0..self.splits as u64).map(|i| split_seed(self.master_seed, i)).collect()
    }
}

/// Seed of split `index`: one word from ChaCha stream `index` keyed by the
/// master seed, so any split can be reproduced on its own.
pub fn split_seed(master: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng.next_u64()
}

fn dataset_hash(cfg: &ExperimentConfig, sigma: f64) -> Result<String> {
    io::hash_file(&cfg.dataset_path(sigma))
}

pub fn stage_generate(cfg: &ExperimentConfig, sigma: f64) -> Result<NoisyDataset> {
    let run = || -> Result<NoisyDataset> {
        let spec = cfg.model_spec()?;
        let ds = dataset::generate(&spec, &cfg.preset.grid(), NoiseSpec::proportional(sigma, cfg.noise_seed))?;
        io::save_dataset(&ds, &cfg.dataset_path(sigma))?;
        log::info!("{} sigma={sigma}: dataset written", cfg.preset);
        Ok(ds)
    };
    run().map_err(|e| e.in_stage("generate"))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Checkpoint {
    key: String,
    epochs_run: usize,
    best_epoch: usize,
    best_val_cost: f64,
    surrogate: TrainedSurrogate,
}

#[derive(Debug, Clone)]
pub struct DenoiseOutcome {
    pub bundle: DerivativeBundle,
    /// Set when a cached network was reused instead of training.
    pub reused_checkpoint: bool,
    pub report: Option<TrainReport>,
}

fn checkpoint_key(source: &str, ann: &TrainConfig) -> Result<String> {
    let text = format!("{source}\n{}", serde_json::to_string(ann)?);
    Ok(io::sha256_hex(text.as_bytes()))
}

pub fn stage_denoise(cfg: &ExperimentConfig, sigma: f64, method: Method) -> Result<DenoiseOutcome> {
    let run = || -> Result<DenoiseOutcome> {
        let data_path = cfg.dataset_path(sigma);
        let ds = io::load_dataset(&data_path)?;
        let source = io::hash_file(&data_path)?;
        let mut reused = false;
        let mut report = None;
        let bundle = match method {
            Method::Fd => denoise::fd_bundle(&ds)?,
            Method::Spline => denoise::spline_bundle(&ds)?,
            Method::Ann => {
                let key = checkpoint_key(&source, &cfg.ann)?;
                let path = cfg.checkpoint_path(sigma);
                let cached = match io::read_json::<Checkpoint>(&path) {
                    Ok(c) if c.key == key && c.surrogate.net.is_finite() => Some(c),
                    _ => None,
                };
                let surrogate = match cached {
                    Some(c) => {
                        log::info!("{} sigma={sigma}: reusing trained network", cfg.preset);
                        reused = true;
                        c.surrogate
                    }
                    None => {
                        log::info!("{} sigma={sigma}: training network", cfg.preset);
                        let (surrogate, r) = denoise::train(&ds, &cfg.ann)?;
                        io::write_json(
                            &path,
                            &Checkpoint {
                                key,
                                epochs_run: r.epochs_run,
                                best_epoch: r.best_epoch,
                                best_val_cost: r.best_val_cost,
                                surrogate: surrogate.clone(),
                            },
                        )?;
                        report = Some(r);
                        surrogate
                    }
                };
                surrogate.bundle(ds.grid())?
            }
        };
        io::save_bundle(&bundle, &source, &cfg.bundle_path(sigma, method))?;
        Ok(DenoiseOutcome {
            bundle,
            reused_checkpoint: reused,
            report,
        })
    };
    run().map_err(|e| e.in_stage("denoise"))
}

/// Bundle on disk, refusing one computed from a different dataset.
fn load_current_bundle(cfg: &ExperimentConfig, sigma: f64, method: Method) -> Result<DerivativeBundle> {
    let path = cfg.bundle_path(sigma, method);
    let (bundle, meta) = io::load_bundle(&path)?;
    if meta.source_sha256 != dataset_hash(cfg, sigma)? {
        return Err(Error::StaleArtifact {
            path,
            reason: format!("dataset changed since this bundle was computed; rerun `denoise --method {method}`"),
        });
    }
    Ok(bundle)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnOutcome {
    pub method: Method,
    pub sigma: f64,
    pub pruned: bool,
    pub alpha: Option<f64>,
    pub equations: Vec<LearnedEquation>,
    pub tpr: Vec<f64>,
    pub tpr_stats: BoxStats,
    pub modal: Option<AggregateEquation>,
    pub source_sha256: String,
}

impl LearnOutcome {
    pub fn median_tpr(&self) -> f64 {
        self.tpr_stats.median
    }

    /// Modal support with mean coefficients as an equation.
    pub fn modal_equation(&self) -> Option<LearnedEquation> {
        let agg = self.modal.as_ref()?;
        let template = self.equations.iter().find(|e| e.support == agg.support)?;
        Some(agg.as_equation(template))
    }
}

pub fn stage_learn(cfg: &ExperimentConfig, sigma: f64, method: Method) -> Result<LearnOutcome> {
    let run = || -> Result<LearnOutcome> {
        let bundle = load_current_bundle(cfg, sigma, method)?;
        let source = io::hash_file(&cfg.bundle_path(sigma, method))?;
        let lib = build_library(&bundle, cfg.subsample())?;
        let truth = true_support(cfg.preset);
        let alpha = cfg.prune.then(|| cfg.alpha());
        let equations: Vec<LearnedEquation> = cfg
            .split_seeds()
            .into_par_iter()
            .map(|seed| {
                let split = pdefind::make_split(&lib, cfg.tile_size, seed);
                let prov = Provenance {
                    method: method.to_string(),
                    sigma,
                    seed,
                };
                pdefind::learn(&lib, &split, &cfg.k_grid, alpha, &prov)
            })
            .collect();
        let tpr: Vec<f64> = equations
            .iter()
            .map(|e| metrics::tpr(&e.terms(), &truth).value())
            .collect();
        let outcome = LearnOutcome {
            method,
            sigma,
            pruned: cfg.prune,
            alpha,
            tpr_stats: BoxStats::from_values(&tpr).expect("at least one split"),
            tpr,
            modal: metrics::aggregate_equations(&equations),
            equations,
            source_sha256: source,
        };
        if let Some(eq) = outcome.modal_equation() {
            log::info!(
                "{} sigma={sigma} {method}: {} (median TPR {})",
                cfg.preset,
                eq.render(),
                outcome.median_tpr()
            );
        }
        io::write_json(&cfg.learn_path(sigma, method), &outcome)?;
        Ok(outcome)
    };
    run().map_err(|e| e.in_stage("learn"))
}

fn load_learn(cfg: &ExperimentConfig, sigma: f64, method: Method) -> Result<LearnOutcome> {
    let path = cfg.learn_path(sigma, method);
    let outcome: LearnOutcome = io::read_json(&path)?;
    if outcome.source_sha256 != io::hash_file(&cfg.bundle_path(sigma, method))? {
        return Err(Error::StaleArtifact {
            path,
            reason: "bundle changed since these equations were learned; rerun `learn`".into(),
        });
    }
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineOutcome {
    pub method: Method,
    pub sigma: f64,
    pub initial: LearnedEquation,
    pub refined: LearnedEquation,
    pub search: Minimum,
}

/// Fit the coefficients of the learned structure by forward simulation.
/// Returns `None` when there is nothing to refine (zero equation).
pub fn stage_refine(cfg: &ExperimentConfig, sigma: f64, method: Method) -> Result<Option<RefineOutcome>> {
    let run = || -> Result<Option<RefineOutcome>> {
        let learned = load_learn(cfg, sigma, method)?;
        let Some(modal) = learned.modal_equation() else {
            return Ok(None);
        };
        let terms = cfg.inverse_terms.clone().unwrap_or_else(|| modal.terms());
        if terms.is_empty() {
            return Ok(None);
        }
        let coeffs: Vec<f64> = terms.iter().map(|&t| modal.coefficient(t)).collect();
        let ds = io::load_dataset(&cfg.dataset_path(sigma))?;
        let bundle = load_current_bundle(cfg, sigma, method)?;
        let skip = cfg.subsample().skip;
        let grid = ds.grid().tail(skip)?;
        let observed = ds.observed_original();
        let observed = Field::new(
            grid.clone(),
            observed.values.slice(ndarray::s![.., skip..]).to_owned(),
            "U",
        )?;
        let pde = CandidatePde::new(terms, coeffs, grid, bundle.u.column(skip))?;
        let search = inverse::fit_coefficients(&pde, &observed, cfg.inverse_gamma, &cfg.nelder_mead)?;
        let initial = pde.to_equation(&pde.coefficients, search.initial_value, sigma, cfg.master_seed);
        let refined = pde.to_equation(&search.x, search.value, sigma, cfg.master_seed);
        log::info!("{} sigma={sigma} {method} refined: {}", cfg.preset, refined.render());
        let outcome = RefineOutcome {
            method,
            sigma,
            initial,
            refined,
            search,
        };
        io::write_json(&cfg.refine_path(sigma, method), &outcome)?;
        Ok(Some(outcome))
    };
    run().map_err(|e| e.in_stage("refine"))
}

/// Reference derivatives: analytic where available, otherwise finite
/// differences on the clean field.
pub fn truth_fields(ds: &NoisyDataset) -> Result<[Field; 4]> {
    match dataset::diffusion_advection_derivatives(&ds.model, ds.grid()) {
        Ok(f) => Ok(f),
        Err(Error::UnsupportedAnalyticIc(_)) | Err(Error::InvalidModel(_)) => {
            let clean = dataset::add_noise(&ds.clean, &ds.model, NoiseSpec::proportional(0.0, 0));
            let b = denoise::fd_bundle(&clean)?;
            Ok([b.u, b.u_t, b.u_x, b.u_xx])
        }
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseRow {
    pub method: Method,
    pub sigma: f64,
    pub field: String,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquationSummary {
    pub model: String,
    pub sigma: f64,
    pub method: Method,
    pub pruned: bool,
    pub alpha: Option<f64>,
    pub splits: usize,
    pub equation: Option<String>,
    pub support: Vec<String>,
    pub coefficients: Vec<(String, f64)>,
    pub count: usize,
    pub tied: bool,
    pub tpr: BoxStats,
    pub refined: Option<String>,
    pub refined_coefficients: Option<Vec<(String, f64)>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub rmse: Vec<RmseRow>,
    pub learned: Vec<LearnOutcome>,
    pub refined: Vec<RefineOutcome>,
    pub equations: Vec<EquationSummary>,
}

#[derive(Serialize)]
struct Lock<'a> {
    config: &'a ExperimentConfig,
    split_seeds: Vec<u64>,
}

fn named_coefficients(eq: &LearnedEquation) -> Vec<(String, f64)> {
    eq.support
        .iter()
        .map(|&j| (eq.labels[j].clone(), eq.coefficients[j]))
        .collect()
}

/// Collect every stage artifact and write `rmse.csv`, `tpr.csv`,
/// `equations.json` and `config.lock` into the output directory.
pub fn stage_report(cfg: &ExperimentConfig) -> Result<Report> {
    let run = || -> Result<Report> {
        let mut rmse = Vec::new();
        let mut learned = Vec::new();
        let mut refined = Vec::new();
        for &sigma in &cfg.sigmas {
            let ds = io::load_dataset(&cfg.dataset_path(sigma))?;
            let truth = truth_fields(&ds)?;
            for &method in &cfg.methods {
                let bundle = load_current_bundle(cfg, sigma, method)?;
                for ((name, field), t) in bundle.fields().iter().zip(&truth) {
                    rmse.push(RmseRow {
                        method,
                        sigma,
                        field: name.to_string(),
                        rmse: metrics::rmse(field, t)?,
                    });
                }
                learned.push(load_learn(cfg, sigma, method)?);
                let rpath = cfg.refine_path(sigma, method);
                if cfg.inverse && method == Method::Ann && rpath.exists() {
                    refined.push(io::read_json::<RefineOutcome>(&rpath)?);
                }
            }
        }
        let equations = learned
            .iter()
            .map(|l| {
                let modal = l.modal_equation();
                let refine = refined.iter().find(|r| r.sigma == l.sigma && r.method == l.method);
                EquationSummary {
                    model: cfg.preset.name().to_string(),
                    sigma: l.sigma,
                    method: l.method,
                    pruned: l.pruned,
                    alpha: l.alpha,
                    splits: l.equations.len(),
                    equation: modal.as_ref().map(LearnedEquation::render),
                    support: modal
                        .as_ref()
                        .map(|m| m.terms().iter().map(|t| t.label().to_string()).collect())
                        .unwrap_or_default(),
                    coefficients: modal.as_ref().map(named_coefficients).unwrap_or_default(),
                    count: l.modal.as_ref().map_or(0, |m| m.count),
                    tied: l.modal.as_ref().is_some_and(|m| m.tied),
                    tpr: l.tpr_stats.clone(),
                    refined: refine.map(|r| r.refined.render()),
                    refined_coefficients: refine.map(|r| named_coefficients(&r.refined)),
                }
            })
            .collect();
        let report = Report {
            rmse,
            learned,
            refined,
            equations,
        };
        write_report(cfg, &report)?;
        Ok(report)
    };
    run().map_err(|e| e.in_stage("report"))
}

fn write_report(cfg: &ExperimentConfig, report: &Report) -> Result<()> {
    let out = &cfg.output;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "sigma", "field", "rmse"])?;
    for r in &report.rmse {
        w.write_record([
            r.method.to_string(),
            r.sigma.to_string(),
            r.field.clone(),
            r.rmse.to_string(),
        ])?;
    }
    io::write_atomic(&out.join("rmse.csv"), &csv_bytes(w)?)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "sigma", "seed", "tpr", "support", "val0"])?;
    for l in &report.learned {
        for (eq, tpr) in l.equations.iter().zip(&l.tpr) {
            let support: Vec<&str> = eq.terms().iter().map(|t| t.label()).collect();
            w.write_record([
                l.method.to_string(),
                l.sigma.to_string(),
                eq.seed.to_string(),
                tpr.to_string(),
                support.join(" "),
                eq.val0.to_string(),
            ])?;
        }
    }
    io::write_atomic(&out.join("tpr.csv"), &csv_bytes(w)?)?;

    io::write_json(&out.join("equations.json"), &report.equations)?;
    let lock = Lock {
        config: cfg,
        split_seeds: cfg.split_seeds(),
    };
    let text = toml::to_string(&lock).map_err(|e| Error::Config(e.to_string()))?;
    io::write_atomic(&out.join("config.lock"), text.as_bytes())?;
    Ok(())
}

fn csv_bytes(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Every stage for every noise level and method, then the report.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    for &sigma in &cfg.sigmas {
        stage_generate(cfg, sigma)?;
        for &method in &cfg.methods {
            stage_denoise(cfg, sigma, method)?;
            stage_learn(cfg, sigma, method)?;
            if cfg.inverse && method == Method::Ann {
                stage_refine(cfg, sigma, method)?;
            }
        }
    }
    stage_report(cfg)
}

/// Output directory relative paths written by [`stage_report`].
pub const REPORT_FILES: [&str; 4] = ["rmse.csv", "tpr.csv", "equations.json", "config.lock"];

pub fn report_paths(output: &Path) -> Vec<PathBuf> {
    REPORT_FILES.iter().map(|f| output.join(f)).collect()
}

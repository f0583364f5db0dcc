//! Single-hidden-layer softplus surrogate `h(x, t)` fitted under the
//! generalized least-squares loss, with closed-form partial derivatives.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DerivativeBundle, Method};
use crate::dataset::{NoisyDataset, Scale};
use crate::error::{Error, Result};
use crate::grid::{Field, Grid};

/// Model outputs below this magnitude use a unit denominator in the GLS
/// residual.
pub const DENOMINATOR_GUARD: f64 = 1e-4;

#[inline]
fn split_softplus(z: f64) -> (f64, f64) {
    let e = (-z.abs()).exp();
    let sp = z.max(0.0) + e.ln_1p();
    let sig = if z >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
    (sp, sig)
}

/// `log(1 + e^z)`, evaluated without overflow.
pub fn softplus(z: f64) -> f64 {
    split_softplus(z).0
}

/// Logistic sigmoid, the derivative of [`softplus`].
pub fn sigmoid(z: f64) -> f64 {
    split_softplus(z).1
}

/// Residual denominator `|h|^gamma`, replaced by 1 for `|h| < 1e-4`.
#[inline]
pub fn gls_denominator(h: f64, gamma: f64) -> f64 {
    if h.abs() < DENOMINATOR_GUARD {
        1.0
    } else {
        h.abs().powf(gamma)
    }
}

/// `h(x, t) = W2 softplus(W1 [x t]^T + b1) + b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateNet {
    pub w1: Vec<[f64; 2]>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

/// Network value and its partial derivatives at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Derivatives {
    pub h: f64,
    pub h_t: f64,
    pub h_x: f64,
    pub h_xx: f64,
}

impl SurrogateNet {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            w1: vec![[0.0; 2]; hidden],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: 0.0,
        }
    }

    /// Layer-1 weights uniform in `+-1/sqrt(2)`, layer-2 weights uniform in
    /// `+-1/sqrt(H)`, biases zero.
    pub fn random(hidden: usize, rng: &mut impl Rng) -> Self {
        let a1 = 1.0 / 2f64.sqrt();
        let a2 = 1.0 / (hidden as f64).sqrt();
        let w1 = (0..hidden)
            .map(|_| [rng.random_range(-a1..a1), rng.random_range(-a1..a1)])
            .collect();
        let w2 = (0..hidden).map(|_| rng.random_range(-a2..a2)).collect();
        Self {
            w1,
            b1: vec![0.0; hidden],
            w2,
            b2: 0.0,
        }
    }

    pub fn hidden(&self) -> usize {
        self.b1.len()
    }

    pub fn num_params(&self) -> usize {
        4 * self.hidden() + 1
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }

    /// Flat parameter layout `[W1[:,0], W1[:,1], b1, W2, b2]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let h = self.hidden();
        let mut out = Vec::with_capacity(4 * h + 1);
        out.extend(self.w1.iter().map(|w| w[0]));
        out.extend(self.w1.iter().map(|w| w[1]));
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(&self.w2);
        out.push(self.b2);
        out
    }

    pub fn from_flat(hidden: usize, theta: &[f64]) -> Self {
        assert_eq!(theta.len(), 4 * hidden + 1, "parameter vector length");
        let (wx, rest) = theta.split_at(hidden);
        let (wt, rest) = rest.split_at(hidden);
        let (b1, rest) = rest.split_at(hidden);
        let (w2, b2) = rest.split_at(hidden);
        Self {
            w1: wx.iter().zip(wt).map(|(&a, &b)| [a, b]).collect(),
            b1: b1.to_vec(),
            w2: w2.to_vec(),
            b2: b2[0],
        }
    }

    pub fn forward(&self, x: f64, t: f64) -> f64 {
        let mut h = self.b2;
        for k in 0..self.hidden() {
            let z = self.w1[k][0] * x + self.w1[k][1] * t + self.b1[k];
            h += self.w2[k] * softplus(z);
        }
        h
    }

    /// Uses `softplus' = sigmoid` and `softplus'' = sigmoid (1 - sigmoid)`.
    pub fn derivatives(&self, x: f64, t: f64) -> Derivatives {
        let mut d = Derivatives {
            h: self.b2,
            h_t: 0.0,
            h_x: 0.0,
            h_xx: 0.0,
        };
        for k in 0..self.hidden() {
            let [wx, wt] = self.w1[k];
            let z = wx * x + wt * t + self.b1[k];
            let (sp, sig) = split_softplus(z);
            let a = self.w2[k];
            d.h += a * sp;
            d.h_x += a * sig * wx;
            d.h_t += a * sig * wt;
            d.h_xx += a * sig * (1.0 - sig) * wx * wx;
        }
        d
    }
}

/// One observation in normalized coordinates and scaled units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub x: f64,
    pub t: f64,
    pub u: f64,
}

/// Mean over samples of `((h - u) / |h|^gamma)^2`.
pub fn gls_cost(net: &SurrogateNet, samples: &[Sample], gamma: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let total: f64 = samples
        .iter()
        .map(|s| {
            let h = net.forward(s.x, s.t);
            ((h - s.u) / gls_denominator(h, gamma)).powi(2)
        })
        .sum();
    total / samples.len() as f64
}

/// Min-max normalization of the input coordinates onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoordNormalization {
    pub x: (f64, f64),
    pub t: (f64, f64),
}

impl CoordNormalization {
    pub const IDENTITY: Self = Self {
        x: (0.0, 1.0),
        t: (0.0, 1.0),
    };

    pub fn from_grid(grid: &Grid) -> Self {
        Self {
            x: grid.x_range(),
            t: grid.t_range(),
        }
    }

    pub fn x_span(&self) -> f64 {
        self.x.1 - self.x.0
    }

    pub fn t_span(&self) -> f64 {
        self.t.1 - self.t.0
    }

    pub fn apply(&self, x: f64, t: f64) -> (f64, f64) {
        ((x - self.x.0) / self.x_span(), (t - self.t.0) / self.t_span())
    }
}

/// Samples for every grid point of a dataset, coordinates normalized.
pub fn dataset_samples(ds: &NoisyDataset, coords: &CoordNormalization) -> Vec<Sample> {
    let grid = ds.grid();
    let mut out = Vec::with_capacity(grid.nx() * grid.nt());
    for (i, &x) in grid.x().iter().enumerate() {
        for (j, &t) in grid.t().iter().enumerate() {
            let (x, t) = coords.apply(x, t);
            out.push(Sample {
                x,
                t,
                u: ds.observed.values[[i, j]],
            });
        }
    }
    out
}

/// How the network parameters are initialized before Adam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Init {
    /// Layer-1 weights uniform in `+-1/sqrt(2)`, layer-2 weights uniform in
    /// `+-1/sqrt(H)`, biases zero.
    Uniform,
    /// Hidden units get random directions with magnitudes uniform in
    /// `[0.2, 1] * weight_scale` and kinks through random points of the
    /// normalized domain. The output layer is then the ridge least-squares
    /// fit on the training points, with the ridge factor (relative to the
    /// mean Gram diagonal) picked from `ridge` by validation cost.
    RandomFeatures { weight_scale: f64, ridge: Vec<f64> },
}

impl Init {
    pub fn random_features(weight_scale: f64) -> Self {
        Init::RandomFeatures {
            weight_scale,
            ridge: vec![1e-10, 1e-8, 1e-6, 1e-4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden: usize,
    pub init: Init,
    pub gamma: f64,
    pub lambda: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub val_fraction: f64,
    pub learning_rate: f64,
    /// When set, the step size decays geometrically per epoch and reaches
    /// this value at `max_epochs`.
    pub final_learning_rate: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: 1000,
            init: Init::Uniform,
            gamma: 1.0,
            lambda: 0.0,
            batch_size: 10,
            patience: 50,
            val_fraction: 0.1,
            learning_rate: 1e-3,
            final_learning_rate: None,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_epochs: 5000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidTrainConfig(msg.to_string()));
        if self.hidden == 0 {
            return bad("hidden width must be positive");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad("val_fraction must lie in (0, 1)");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.gamma < 0.0 || self.lambda < 0.0 {
            return bad("gamma and lambda must be non-negative");
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("optimizer hyperparameters out of range");
        }
        if let Init::RandomFeatures { weight_scale, ridge } = &self.init {
            if !(*weight_scale > 0.0) || ridge.is_empty() || ridge.iter().any(|r| !(*r >= 0.0)) {
                return bad("random-feature init needs a positive weight scale and non-negative ridge factors");
            }
        }
        if self.final_learning_rate.is_some_and(|lr| !(lr > 0.0)) {
            return bad("final_learning_rate must be positive");
        }
        Ok(())
    }
}

/// Batch loss of the training objective and its gradient with respect to the
/// flat parameter vector (layout of [`SurrogateNet::to_flat`]).
///
/// `mean_b [ r_b^2 + lambda |z_b|^2 ] + mean_b [ h_b^2 if h_b outside [0, 1] ]`
/// with `r = (h - u) / |h|^gamma` and `z = W1 [x t]^T + b1`.
pub struct Objective {
    hidden: usize,
    gamma: f64,
    lambda: f64,
    sp: Vec<f64>,
    sig: Vec<f64>,
    z: Vec<f64>,
}

impl Objective {
    pub fn new(hidden: usize, gamma: f64, lambda: f64) -> Self {
        Self {
            hidden,
            gamma,
            lambda,
            sp: vec![0.0; hidden],
            sig: vec![0.0; hidden],
            z: vec![0.0; hidden],
        }
    }

    /// Loss only, for an arbitrary parameter vector.
    pub fn loss(&self, theta: &[f64], batch: &[Sample]) -> f64 {
        let net = SurrogateNet::from_flat(self.hidden, theta);
        let inv = 1.0 / batch.len() as f64;
        batch
            .iter()
            .map(|s| {
                let mut h = net.b2;
                let mut zsq = 0.0;
                for k in 0..self.hidden {
                    let z = net.w1[k][0] * s.x + net.w1[k][1] * s.t + net.b1[k];
                    zsq += z * z;
                    h += net.w2[k] * softplus(z);
                }
                let r = (h - s.u) / gls_denominator(h, self.gamma);
                let penalty = if (0.0..=1.0).contains(&h) { 0.0 } else { h * h };
                inv * (r * r + self.lambda * zsq + penalty)
            })
            .sum()
    }

    /// Loss, with the gradient written (not accumulated) into `grad`.
    pub fn loss_and_gradient(&mut self, theta: &[f64], batch: &[Sample], grad: &mut [f64]) -> f64 {
        let hd = self.hidden;
        debug_assert_eq!(theta.len(), 4 * hd + 1);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let (wx, rest) = theta.split_at(hd);
        let (wt, rest) = rest.split_at(hd);
        let (b1, rest) = rest.split_at(hd);
        let (w2, b2) = rest.split_at(hd);
        let b2 = b2[0];
        let (g_wx, rest) = grad.split_at_mut(hd);
        let (g_wt, rest) = rest.split_at_mut(hd);
        let (g_b1, rest) = rest.split_at_mut(hd);
        let (g_w2, g_b2) = rest.split_at_mut(hd);

        let inv = 1.0 / batch.len() as f64;
        let reg = 2.0 * self.lambda * inv;
        let mut loss = 0.0;
        for s in batch {
            let mut h = b2;
            let mut zsq = 0.0;
            for k in 0..hd {
                let z = wx[k] * s.x + wt[k] * s.t + b1[k];
                let (sp, sig) = split_softplus(z);
                self.z[k] = z;
                self.sp[k] = sp;
                self.sig[k] = sig;
                zsq += z * z;
                h += w2[k] * sp;
            }
            let diff = h - s.u;
            let (r, dr_dh) = if h.abs() < DENOMINATOR_GUARD || self.gamma == 0.0 {
                (diff, 1.0)
            } else {
                let den = h.abs().powf(self.gamma);
                (diff / den, (1.0 - self.gamma * diff / h) / den)
            };
            let outside = !(0.0..=1.0).contains(&h);
            let penalty = if outside { h * h } else { 0.0 };
            loss += inv * (r * r + self.lambda * zsq + penalty);

            let mut g = 2.0 * r * dr_dh;
            if outside {
                g += 2.0 * h;
            }
            g *= inv;
            g_b2[0] += g;
            for k in 0..hd {
                g_w2[k] += g * self.sp[k];
                let gz = g * w2[k] * self.sig[k] + reg * self.z[k];
                g_wx[k] += gz * s.x;
                g_wt[k] += gz * s.t;
                g_b1[k] += gz;
            }
        }
        loss
    }
}

struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(n: usize, cfg: &TrainConfig) -> Self {
        Self {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.epsilon,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, theta: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let lr = self.lr * c2.sqrt() / c1;
        for ((p, &g), (m, v)) in theta
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= lr * *m / (v.sqrt() + self.eps * c2.sqrt());
        }
    }
}

/// A trained network together with the coordinate and value maps it was
/// trained under. This is the checkpoint format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedSurrogate {
    pub net: SurrogateNet,
    pub coords: CoordNormalization,
    pub scale: Scale,
}

impl TrainedSurrogate {
    pub fn bundle(&self, grid: &Grid) -> Result<DerivativeBundle> {
        ann_bundle(&self.net, grid, &self.coords, &self.scale)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let model: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        if !model.net.is_finite() {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: "non-finite network parameter".into(),
            });
        }
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs_run: usize,
    /// Index into `val_history`; 0 means the initialization was never improved on.
    pub best_epoch: usize,
    pub best_val_cost: f64,
    /// Validation cost of the initialization followed by one entry per epoch.
    pub val_history: Vec<f64>,
}

/// Rows of softplus features (plus a trailing 1) processed per Gram update.
const GRAM_BLOCK: usize = 2048;

fn feature_row(net: &SurrogateNet, s: &Sample, row: &mut [f64]) {
    let h = net.hidden();
    for ((r, w), b) in row.iter_mut().zip(&net.w1).zip(&net.b1) {
        *r = softplus(w[0] * s.x + w[1] * s.t + b);
    }
    row[h] = 1.0;
}

/// Normal equations of the output layer over `samples`.
fn output_normal_equations(net: &SurrogateNet, samples: &[Sample]) -> (DMatrix<f64>, DVector<f64>) {
    let p = net.hidden() + 1;
    let mut gram = DMatrix::zeros(p, p);
    let mut rhs = DVector::zeros(p);
    for chunk in samples.chunks(GRAM_BLOCK) {
        // column-major: one feature vector per column
        let mut phi = DMatrix::zeros(p, chunk.len());
        for (c, s) in chunk.iter().enumerate() {
            feature_row(net, s, phi.column_mut(c).as_mut_slice());
        }
        let y = DVector::from_iterator(chunk.len(), chunk.iter().map(|s| s.u));
        gram.gemm(1.0, &phi, &phi.transpose(), 1.0);
        rhs.gemv(1.0, &phi, &y, 1.0);
    }
    (gram, rhs)
}

fn initial_net(cfg: &TrainConfig, train: &[Sample], val: &[Sample], rng: &mut ChaCha8Rng) -> SurrogateNet {
    let mut net = SurrogateNet::random(cfg.hidden, rng);
    let Init::RandomFeatures { weight_scale, ridge } = &cfg.init else {
        return net;
    };
    for k in 0..cfg.hidden {
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let magnitude = weight_scale * rng.random_range(0.2..1.0);
        net.w1[k] = [magnitude * angle.cos(), magnitude * angle.sin()];
        let (px, pt): (f64, f64) = (rng.random(), rng.random());
        net.b1[k] = -(net.w1[k][0] * px + net.w1[k][1] * pt);
    }
    let (gram, rhs) = output_normal_equations(&net, train);
    let mut best: Option<(f64, SurrogateNet)> = None;
    for &r in ridge {
        let Some(candidate) = solve_output_layer(&net, &gram, &rhs, r) else { continue };
        let cost = gls_cost(&candidate, val, cfg.gamma);
        log::debug!("output layer with ridge {r:e}: validation cost {cost:.4e}");
        if cost.is_finite() && best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, candidate));
        }
    }
    best.map_or(net, |(_, n)| n)
}

fn solve_output_layer(net: &SurrogateNet, gram: &DMatrix<f64>, rhs: &DVector<f64>, ridge: f64) -> Option<SurrogateNet> {
    let h = net.hidden();
    let mut g = gram.clone();
    let shift = ridge * gram.diagonal().mean();
    for i in 0..=h {
        g[(i, i)] += shift;
    }
    let w = g.cholesky()?.solve(rhs);
    let mut out = net.clone();
    out.w2.copy_from_slice(&w.as_slice()[..h]);
    out.b2 = w[h];
    Some(out)
}

/// Fit the surrogate to a dataset already rescaled to `[0, 1]`.
///
/// Points are split 90/10 (by default) into training and validation sets;
/// training stops once the validation GLS cost has not improved for
/// `patience` epochs, and the best snapshot is returned.
pub fn train(ds: &NoisyDataset, cfg: &TrainConfig) -> Result<(TrainedSurrogate, TrainReport)> {
    cfg.validate()?;
    let coords = CoordNormalization::from_grid(ds.grid());
    let mut samples = dataset_samples(ds, &coords);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    samples.shuffle(&mut rng);
    let n_val = ((samples.len() as f64 * cfg.val_fraction).round() as usize)
        .clamp(1, samples.len() - 1);
    let (val, train_set) = samples.split_at(n_val);
    let mut train_set = train_set.to_vec();

    let net = initial_net(cfg, &train_set, val, &mut rng);
    let mut theta = net.to_flat();
    let mut grad = vec![0.0; theta.len()];
    let mut objective = Objective::new(cfg.hidden, cfg.gamma, cfg.lambda);
    let mut adam = Adam::new(theta.len(), cfg);

    let mut best_theta = theta.clone();
    let mut best_cost = gls_cost(&net, val, cfg.gamma);
    let mut best_epoch = 0;
    let mut history = vec![best_cost];
    let mut stale = 0;
    let decay = cfg.final_learning_rate.map_or(1.0, |end| {
        (end / cfg.learning_rate).powf(1.0 / (cfg.max_epochs.max(2) - 1) as f64)
    });
    for epoch in 0..cfg.max_epochs {
        adam.lr = cfg.learning_rate * decay.powi(epoch as i32);
        train_set.shuffle(&mut rng);
        for (b, batch) in train_set.chunks(cfg.batch_size).enumerate() {
            let loss = objective.loss_and_gradient(&theta, batch, &mut grad);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingDiverged { epoch, batch: b });
            }
            adam.update(&mut theta, &grad);
        }
        let net = SurrogateNet::from_flat(cfg.hidden, &theta);
        let cost = gls_cost(&net, val, cfg.gamma);
        if !cost.is_finite() {
            return Err(Error::TrainingDiverged {
                epoch,
                batch: train_set.len().div_ceil(cfg.batch_size),
            });
        }
        history.push(cost);
        if cost < best_cost {
            best_cost = cost;
            best_theta.copy_from_slice(&theta);
            best_epoch = epoch + 1;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
        if epoch % 50 == 0 {
            log::debug!("epoch {epoch}: validation cost {cost:.4e} (best {best_cost:.4e})");
        }
    }
    let report = TrainReport {
        epochs_run: history.len() - 1,
        best_epoch,
        best_val_cost: best_cost,
        val_history: history,
    };
    log::info!(
        "surrogate trained: {} epochs, best validation cost {:.4e} at epoch {}",
        report.epochs_run,
        report.best_val_cost,
        report.best_epoch
    );
    Ok((
        TrainedSurrogate {
            net: SurrogateNet::from_flat(cfg.hidden, &best_theta),
            coords,
            scale: ds.scale,
        },
        report,
    ))
}

/// Evaluate the surrogate and its derivatives on every grid point, mapped
/// back to original coordinates and value units.
pub fn ann_bundle(
    net: &SurrogateNet,
    grid: &Grid,
    coords: &CoordNormalization,
    scale: &Scale,
) -> Result<DerivativeBundle> {
    let (m, n) = grid.shape();
    let span = scale.span();
    let fx = 1.0 / coords.x_span();
    let ft = 1.0 / coords.t_span();
    let mut fields = [
        Array2::zeros((m, n)),
        Array2::zeros((m, n)),
        Array2::zeros((m, n)),
        Array2::zeros((m, n)),
    ];
    for (i, &x) in grid.x().iter().enumerate() {
        for (j, &t) in grid.t().iter().enumerate() {
            let (xn, tn) = coords.apply(x, t);
            let d = net.derivatives(xn, tn);
            fields[0][[i, j]] = scale.invert(d.h);
            fields[1][[i, j]] = span * ft * d.h_t;
            fields[2][[i, j]] = span * fx * d.h_x;
            fields[3][[i, j]] = span * fx * fx * d.h_xx;
        }
    }
    let [u, ut, ux, uxx] = fields;
    DerivativeBundle::new(
        Field::new(grid.clone(), u, "u")?,
        Field::new(grid.clone(), ut, "u_t")?,
        Field::new(grid.clone(), ux, "u_x")?,
        Field::new(grid.clone(), uxx, "u_xx")?,
        Method::Ann,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_net(hidden: usize, seed: u64) -> SurrogateNet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = SurrogateNet::random(hidden, &mut rng);
        for b in net.b1.iter_mut() {
            *b = rng.random_range(-1.0..1.0);
        }
        net.b2 = rng.random_range(-0.5..0.5);
        net
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = SurrogateNet::zeros(7);
        assert_eq!(net.forward(0.3, -2.0), 0.0);
    }

    #[test]
    fn single_unit_outputs_log_two() {
        let mut net = SurrogateNet::zeros(1);
        net.w2[0] = 1.0;
        for (x, t) in [(0.0, 0.0), (0.7, 0.1), (-3.0, 5.0)] {
            assert!((net.forward(x, t) - std::f64::consts::LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_matches_direct_evaluation() {
        let net = random_net(13, 4);
        let direct = |x: f64, t: f64| {
            let mut s = net.b2;
            for k in 0..13 {
                let z = net.w1[k][0] * x + net.w1[k][1] * t + net.b1[k];
                s += net.w2[k] * (1.0 + z.exp()).ln();
            }
            s
        };
        for (x, t) in [(0.1, 0.9), (0.5, 0.5), (1.0, 0.0)] {
            assert!((net.forward(x, t) - direct(x, t)).abs() < 1e-12);
        }
    }

    #[test]
    fn activation_identities() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(sigmoid(0.0) * (1.0 - sigmoid(0.0)), 0.25);
        assert!(softplus(800.0).is_finite());
        assert!((softplus(-800.0)).abs() < 1e-300);
    }

    #[test]
    fn constant_net_has_zero_derivatives() {
        let mut net = random_net(5, 1);
        net.w2.iter_mut().for_each(|w| *w = 0.0);
        let d = net.derivatives(0.4, 0.6);
        assert_eq!((d.h_x, d.h_t, d.h_xx), (0.0, 0.0, 0.0));
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let net = random_net(20, 11);
        let (x, t) = (0.37, 0.62);
        let d = net.derivatives(x, t);
        let eps = 1e-5;
        let hx = (net.forward(x + eps, t) - net.forward(x - eps, t)) / (2.0 * eps);
        let ht = (net.forward(x, t + eps) - net.forward(x, t - eps)) / (2.0 * eps);
        let e2 = 1e-3;
        let hxx = (net.forward(x + e2, t) - 2.0 * net.forward(x, t) + net.forward(x - e2, t))
            / (e2 * e2);
        assert!(((d.h_x - hx) / d.h_x).abs() < 1e-5);
        assert!(((d.h_t - ht) / d.h_t).abs() < 1e-5);
        assert!(((d.h_xx - hxx) / d.h_xx).abs() < 1e-4);
    }

    #[test]
    fn gls_cost_examples() {
        let samples: Vec<Sample> = (0..5)
            .map(|k| Sample {
                x: k as f64 * 0.2,
                t: 0.5,
                u: 1.0,
            })
            .collect();
        assert_eq!(gls_cost(&SurrogateNet::zeros(3), &samples, 0.0), 1.0);
        let mut two = SurrogateNet::zeros(3);
        two.b2 = 2.0;
        assert!((gls_cost(&two, &samples, 1.0) - 0.25).abs() < 1e-15);
        let mut one = SurrogateNet::zeros(3);
        one.b2 = 1.0;
        assert_eq!(gls_cost(&one, &samples, 1.0), 0.0);
    }

    #[test]
    fn denominator_guard_makes_gamma_irrelevant_for_tiny_outputs() {
        let mut net = SurrogateNet::zeros(2);
        net.b2 = 5e-5;
        let samples = vec![
            Sample { x: 0.0, t: 0.0, u: 0.3 },
            Sample { x: 1.0, t: 1.0, u: -0.2 },
        ];
        assert_eq!(gls_cost(&net, &samples, 1.0), gls_cost(&net, &samples, 0.0));
    }

    #[test]
    fn flat_round_trip() {
        let net = random_net(6, 2);
        assert_eq!(SurrogateNet::from_flat(6, &net.to_flat()), net);
    }

    #[test]
    fn bundle_applies_chain_rule() {
        let net = random_net(8, 3);
        let grid = Grid::uniform((0.0, 1.0), 5, (0.0, 1.0), 4).unwrap();
        let raw = ann_bundle(&net, &grid, &CoordNormalization::IDENTITY, &Scale::IDENTITY).unwrap();
        let d = net.derivatives(grid.x()[2], grid.t()[1]);
        assert_eq!(raw.u.values[[2, 1]], d.h);
        assert_eq!(raw.u_xx.values[[2, 1]], d.h_xx);

        let scaled = ann_bundle(
            &net,
            &grid,
            &CoordNormalization::IDENTITY,
            &Scale { min: 0.0, max: 2.0 },
        )
        .unwrap();
        for (a, b) in scaled.u_x.values.iter().zip(raw.u_x.values.iter()) {
            assert!((a - 2.0 * b).abs() < 1e-14);
        }
        for (a, b) in scaled.u.values.iter().zip(raw.u.values.iter()) {
            assert!((a - 2.0 * b).abs() < 1e-14);
        }

        let long = Grid::uniform((0.0, 1.0), 5, (0.0, 4.0), 4).unwrap();
        let coords = CoordNormalization::from_grid(&long);
        let stretched = ann_bundle(&net, &long, &coords, &Scale::IDENTITY).unwrap();
        for (a, b) in stretched.u_t.values.iter().zip(raw.u_t.values.iter()) {
            assert!((a - b / 4.0).abs() < 1e-14);
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.val_fraction = 1.0;
        assert!(cfg.validate().is_err());
        cfg = TrainConfig { patience: 0, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
        cfg = TrainConfig { batch_size: 0, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
    }

    fn plane_dataset() -> NoisyDataset {
        use crate::dataset::{add_noise, rescale_unit, NoiseSpec, Preset};
        let grid = Grid::uniform((0.0, 1.0), 50, (0.0, 1.0), 50).unwrap();
        let clean = crate::Field::from_fn(&grid, "u", |x, t| x + t).unwrap();
        rescale_unit(&add_noise(&clean, &Preset::FisherKpp.model_spec(), NoiseSpec::proportional(0.0, 0)))
    }

    #[test]
    fn random_features_recover_a_plane() {
        let ds = plane_dataset();
        let cfg = TrainConfig {
            hidden: 200,
            init: Init::random_features(10.0),
            gamma: 0.0,
            max_epochs: 0,
            ..TrainConfig::default()
        };
        let (net, report) = train(&ds, &cfg).unwrap();
        assert_eq!(report.epochs_run, 0);
        let b = net.bundle(ds.grid()).unwrap();
        let truth = crate::Field::from_fn(ds.grid(), "u", |x, t| x + t).unwrap();
        assert!(crate::metrics::rmse(&b.u, &truth).unwrap() < 1e-3);
        for i in 5..45 {
            for j in 5..45 {
                assert!((b.u_x.values[[i, j]] - 1.0).abs() < 0.05, "h_x at ({i}, {j})");
            }
        }
    }

    #[test]
    fn random_features_are_deterministic() {
        let ds = plane_dataset();
        let cfg = TrainConfig {
            hidden: 30,
            init: Init::random_features(5.0),
            max_epochs: 2,
            ..TrainConfig::default()
        };
        assert_eq!(train(&ds, &cfg).unwrap().0, train(&ds, &cfg).unwrap().0);
        let bad = TrainConfig {
            init: Init::RandomFeatures { weight_scale: -1.0, ridge: vec![1e-8] },
            ..cfg
        };
        assert!(bad.validate().is_err());
    }
}

//! Sparse recovery of the PDE right-hand side: tile-based train/validation
//! splits, forward-backward greedy selection swept over its stopping
//! tolerance, and validation-driven pruning.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::library::{Library, Term, NUM_TERMS};
use crate::linalg::{lstsq, solve_spd};

pub const DEFAULT_TILE: usize = 5;

/// A removal is accepted when it costs less than this fraction of the gain
/// of the most recent forward step.
const BACKWARD_RATIO: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileSplit {
    pub train_rows: Vec<usize>,
    pub val_rows: Vec<usize>,
    pub tile_size: usize,
    pub seed: u64,
}

/// Partition the retained space-time grid into `tile_size` squares and send
/// a random half of the tiles (rounded up) to training, the rest to
/// validation.
pub fn make_split(lib: &Library, tile_size: usize, seed: u64) -> TileSplit {
    let tile_size = tile_size.max(1);
    let mut times: Vec<usize> = lib.points.iter().map(|p| p.1).collect();
    times.sort_unstable();
    times.dedup();
    let rank: HashMap<usize, usize> = times.iter().enumerate().map(|(r, &j)| (j, r)).collect();

    let mut tiles: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (row, &(i, j)) in lib.points.iter().enumerate() {
        tiles
            .entry((i / tile_size, rank[&j] / tile_size))
            .or_default()
            .push(row);
    }
    let mut order: Vec<Vec<usize>> = tiles.into_values().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_train = order.len().div_ceil(2);
    let mut train_rows: Vec<usize> = order[..n_train].iter().flatten().copied().collect();
    let mut val_rows: Vec<usize> = order[n_train..].iter().flatten().copied().collect();
    train_rows.sort_unstable();
    val_rows.sort_unstable();
    TileSplit {
        train_rows,
        val_rows,
        tile_size,
        seed,
    }
}

/// Subset of terms as a bitmask over the twelve library columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
struct Mask(u32);

impl Mask {
    fn with(self, j: usize) -> Self {
        Mask(self.0 | (1 << j))
    }
    fn without(self, j: usize) -> Self {
        Mask(self.0 & !(1 << j))
    }
    fn contains(self, j: usize) -> bool {
        self.0 & (1 << j) != 0
    }
    fn len(self) -> usize {
        self.0.count_ones() as usize
    }
    fn indices(self, d: usize) -> Vec<usize> {
        (0..d).filter(|&j| self.contains(j)).collect()
    }
}

/// Training MSE of least-squares fits on column subsets, computed from the
/// Gram matrix of norm-scaled columns and memoized per subset.
struct SubsetSolver {
    gram: DMatrix<f64>,
    rhs: DVector<f64>,
    yy: f64,
    n: f64,
    usable: Vec<bool>,
    cache: HashMap<Mask, f64>,
}

impl SubsetSolver {
    fn new(theta: ArrayView2<f64>, target: ArrayView1<f64>) -> Self {
        let d = theta.ncols();
        let norms: Vec<f64> = (0..d)
            .map(|j| theta.column(j).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let usable: Vec<bool> = norms.iter().map(|&n| n > 0.0 && n.is_finite()).collect();
        let scale: Vec<f64> = norms
            .iter()
            .map(|&n| if n > 0.0 && n.is_finite() { 1.0 / n } else { 0.0 })
            .collect();
        let mut gram = DMatrix::zeros(d, d);
        let mut rhs = DVector::zeros(d);
        for a in 0..d {
            let ca = theta.column(a);
            rhs[a] = ca.dot(&target) * scale[a];
            for b in a..d {
                let v = ca.dot(&theta.column(b)) * scale[a] * scale[b];
                gram[(a, b)] = v;
                gram[(b, a)] = v;
            }
        }
        Self {
            gram,
            rhs,
            yy: target.dot(&target),
            n: target.len().max(1) as f64,
            usable,
            cache: HashMap::new(),
        }
    }

    fn dim(&self) -> usize {
        self.usable.len()
    }

    fn mse(&mut self, mask: Mask) -> f64 {
        if let Some(&v) = self.cache.get(&mask) {
            return v;
        }
        let idx = mask.indices(self.dim());
        let s = idx.len();
        let g = DMatrix::from_fn(s, s, |a, b| self.gram[(idx[a], idx[b])]);
        let b = DVector::from_fn(s, |a, _| self.rhs[idx[a]]);
        let w = solve_spd(&g, &b);
        let rss = (self.yy - b.dot(&w)).max(0.0);
        let v = rss / self.n;
        self.cache.insert(mask, v);
        v
    }

    /// Forward-backward greedy selection with stopping tolerance `tol` on
    /// the per-step MSE reduction.
    fn select(&mut self, tol: f64, max_terms: usize) -> Mask {
        let d = self.dim();
        let mut support = Mask::default();
        let mut current = self.mse(support);
        let mut gains: Vec<f64> = Vec::new();
        for _ in 0..10 * d {
            if support.len() >= max_terms.min(d) {
                break;
            }
            let mut best: Option<(usize, f64)> = None;
            for j in 0..d {
                if support.contains(j) || !self.usable[j] {
                    continue;
                }
                let m = self.mse(support.with(j));
                if best.is_none_or(|(_, bm)| m < bm) {
                    best = Some((j, m));
                }
            }
            let Some((j, m)) = best else { break };
            let gain = current - m;
            if !(gain > tol) {
                break;
            }
            support = support.with(j);
            current = m;
            gains.push(gain);

            while support.len() > 1 {
                let Some(&last_gain) = gains.last() else { break };
                let (k, mk) = support
                    .indices(d)
                    .into_iter()
                    .map(|k| (k, self.mse(support.without(k))))
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .expect("support is not empty");
                if mk - current < BACKWARD_RATIO * last_gain {
                    support = support.without(k);
                    current = mk;
                    gains.pop();
                } else {
                    break;
                }
            }
        }
        support
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GreedyParams {
    /// Smallest MSE reduction a forward step must achieve.
    pub tolerance: f64,
    pub max_terms: usize,
}

impl GreedyParams {
    pub fn tolerance(tolerance: f64) -> Self {
        Self {
            tolerance,
            max_terms: usize::MAX,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreedyFit {
    pub xi: Vec<f64>,
    pub support: Vec<usize>,
    pub train_mse: f64,
    /// Set when the refit on the selected columns was rank deficient and the
    /// minimum-norm solution was returned.
    pub rank_deficient: bool,
}

fn refit(theta: ArrayView2<f64>, target: ArrayView1<f64>, support: &[usize]) -> (Vec<f64>, bool) {
    let d = theta.ncols();
    let mut xi = vec![0.0; d];
    if support.is_empty() {
        return (xi, false);
    }
    let a = DMatrix::from_fn(theta.nrows(), support.len(), |r, c| theta[[r, support[c]]]);
    let b = DVector::from_iterator(target.len(), target.iter().copied());
    let (w, deficient) = lstsq(&a, &b);
    for (c, &j) in support.iter().enumerate() {
        xi[j] = w[c];
    }
    (xi, deficient)
}

/// Mean squared residual of `target - theta xi`.
pub fn residual_mse(theta: ArrayView2<f64>, target: ArrayView1<f64>, xi: &[f64]) -> f64 {
    if target.is_empty() {
        return 0.0;
    }
    let xi = ArrayView1::from(xi);
    let pred = theta.dot(&xi);
    let total: f64 = pred
        .iter()
        .zip(target.iter())
        .map(|(p, y)| (y - p) * (y - p))
        .sum();
    total / target.len() as f64
}

/// Forward-backward greedy subset selection followed by an unregularized
/// least-squares refit on the chosen columns.
pub fn greedy_fit(theta: ArrayView2<f64>, target: ArrayView1<f64>, params: &GreedyParams) -> GreedyFit {
    let mut solver = SubsetSolver::new(theta, target);
    let mask = solver.select(params.tolerance, params.max_terms);
    let support = mask.indices(theta.ncols());
    let (xi, rank_deficient) = refit(theta, target, &support);
    GreedyFit {
        train_mse: residual_mse(theta, target, &xi),
        support: xi
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(j, _)| j)
            .collect(),
        xi,
        rank_deficient,
    }
}

/// `{0}` followed by 50 log-spaced tolerances in `[1e-3, 1e3]`.
pub fn default_k_grid() -> Vec<f64> {
    std::iter::once(0.0)
        .chain((0..50).map(|i| 10f64.powf(-3.0 + 6.0 * i as f64 / 49.0)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub method: String,
    pub sigma: f64,
    pub seed: u64,
}

/// A sparse right-hand side `u_t = sum xi_j term_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnedEquation {
    pub labels: Vec<String>,
    pub coefficients: Vec<f64>,
    /// Indices of the nonzero coefficients.
    pub support: Vec<usize>,
    pub val0: f64,
    pub k: Option<f64>,
    pub alpha: Option<f64>,
    pub seed: u64,
    pub method: String,
    pub sigma: f64,
    #[serde(default)]
    pub rank_deficient: bool,
}

impl LearnedEquation {
    pub fn new(coefficients: Vec<f64>, val0: f64, provenance: &Provenance) -> Self {
        assert_eq!(coefficients.len(), NUM_TERMS, "one coefficient per library term");
        let support = coefficients
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(j, _)| j)
            .collect();
        Self {
            labels: Term::ALL.iter().map(|t| t.label().to_string()).collect(),
            coefficients,
            support,
            val0,
            k: None,
            alpha: None,
            seed: provenance.seed,
            method: provenance.method.clone(),
            sigma: provenance.sigma,
            rank_deficient: false,
        }
    }

    pub fn zero(val0: f64, provenance: &Provenance) -> Self {
        Self::new(vec![0.0; NUM_TERMS], val0, provenance)
    }

    pub fn provenance(&self) -> Provenance {
        Provenance {
            method: self.method.clone(),
            sigma: self.sigma,
            seed: self.seed,
        }
    }

    pub fn terms(&self) -> Vec<Term> {
        self.support
            .iter()
            .map(|&j| Term::from_index(j).expect("support index within library"))
            .collect()
    }

    pub fn coefficient(&self, term: Term) -> f64 {
        self.coefficients[term.index()]
    }

    pub fn is_zero(&self) -> bool {
        self.support.is_empty()
    }

    /// Least-squares fit of a fixed support on the training rows, scored on
    /// the validation rows.
    pub fn fit_support(lib: &Library, split: &TileSplit, support: &[Term], provenance: &Provenance) -> Self {
        let data = SplitData::new(lib, split);
        let idx: Vec<usize> = support.iter().map(|t| t.index()).collect();
        let (xi, deficient) = refit(data.theta_train.view(), data.y_train.view(), &idx);
        let val = data.val_mse(&xi);
        let mut eq = Self::new(xi, val, provenance);
        eq.rank_deficient = deficient;
        eq
    }

    /// `u_t = -0.800*u_x + 0.0100*u_xx`, three significant digits.
    pub fn render(&self) -> String {
        if self.is_zero() {
            return "u_t = 0".to_string();
        }
        let mut out = String::from("u_t =");
        for (n, &j) in self.support.iter().enumerate() {
            let c = self.coefficients[j];
            let mag = significant(c.abs());
            let sign = if c < 0.0 { "-" } else { "+" };
            if n == 0 {
                out.push(' ');
                if c < 0.0 {
                    out.push('-');
                }
            } else {
                out.push_str(&format!(" {sign} "));
            }
            let term = Term::ALL[j];
            if term == Term::One {
                out.push_str(&mag);
            } else {
                out.push_str(&format!("{mag}*{}", term.label()));
            }
        }
        out
    }
}

fn significant(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let exp = v.log10().floor() as i32;
    if !(-4..6).contains(&exp) {
        return format!("{v:.2e}");
    }
    let decimals = (2 - exp).max(0) as usize;
    format!("{v:.decimals$}")
}

/// Training and validation rows of a library, materialized once per split.
struct SplitData {
    theta_train: Array2<f64>,
    y_train: Array1<f64>,
    theta_val: Array2<f64>,
    y_val: Array1<f64>,
}

impl SplitData {
    fn new(lib: &Library, split: &TileSplit) -> Self {
        Self {
            theta_train: lib.theta.select(Axis(0), &split.train_rows),
            y_train: lib.target.select(Axis(0), &split.train_rows),
            theta_val: lib.theta.select(Axis(0), &split.val_rows),
            y_val: lib.target.select(Axis(0), &split.val_rows),
        }
    }

    fn val_mse(&self, xi: &[f64]) -> f64 {
        residual_mse(self.theta_val.view(), self.y_val.view(), xi)
    }
}

/// Sweep the greedy tolerance over `k_grid`, fitting on the training rows
/// and keeping the model with the lowest validation MSE. Ties go to the
/// smaller support, then the smaller tolerance.
pub fn select_hyperparameter(
    lib: &Library,
    split: &TileSplit,
    k_grid: &[f64],
    provenance: &Provenance,
) -> LearnedEquation {
    assert!(!k_grid.is_empty(), "hyperparameter grid must not be empty");
    let data = SplitData::new(lib, split);
    let mut solver = SubsetSolver::new(data.theta_train.view(), data.y_train.view());
    let mut fits: HashMap<Mask, (Vec<f64>, bool, f64)> = HashMap::new();
    let mut best: Option<(f64, usize, f64, Mask)> = None;
    for &k in k_grid {
        let mask = solver.select(k, usize::MAX);
        let (_, _, val) = fits.entry(mask).or_insert_with(|| {
            let (xi, deficient) = refit(
                data.theta_train.view(),
                data.y_train.view(),
                &mask.indices(NUM_TERMS),
            );
            let val = data.val_mse(&xi);
            (xi, deficient, val)
        });
        let key = (*val, mask.len(), k, mask);
        let better = match best {
            None => true,
            Some((bv, bl, bk, _)) => (key.0, key.1, key.2)
                .partial_cmp(&(bv, bl, bk))
                .is_some_and(|o| o.is_lt()),
        };
        if better {
            best = Some(key);
        }
    }
    let (val, _, k, mask) = best.expect("grid is not empty");
    let (xi, deficient, _) = fits.remove(&mask).expect("fit cached");
    let mut eq = LearnedEquation::new(xi, val, provenance);
    eq.k = Some(k);
    eq.rank_deficient = deficient;
    eq
}

/// Drop every term whose removal raises the validation MSE by less than a
/// factor `1 + alpha`, then refit the survivors once more.
pub fn prune(lib: &Library, split: &TileSplit, eq: &LearnedEquation, alpha: f64) -> LearnedEquation {
    if eq.is_zero() {
        let mut out = eq.clone();
        out.alpha = Some(alpha);
        return out;
    }
    let data = SplitData::new(lib, split);
    let support = eq.support.clone();
    let val0 = eq.val0;
    let keep: Vec<usize> = support
        .iter()
        .copied()
        .filter(|&drop| {
            let reduced: Vec<usize> = support.iter().copied().filter(|&j| j != drop).collect();
            let (xi, _) = refit(data.theta_train.view(), data.y_train.view(), &reduced);
            let val = data.val_mse(&xi);
            let ratio = if val0 > 0.0 {
                val / val0
            } else if val > 0.0 {
                f64::INFINITY
            } else {
                1.0
            };
            ratio >= 1.0 + alpha
        })
        .collect();
    let (xi, deficient) = refit(data.theta_train.view(), data.y_train.view(), &keep);
    let val = data.val_mse(&xi);
    let mut out = LearnedEquation::new(xi, val, &eq.provenance());
    out.k = eq.k;
    out.alpha = Some(alpha);
    out.rank_deficient = deficient;
    out
}

/// Hyperparameter selection, optionally followed by pruning.
pub fn learn(
    lib: &Library,
    split: &TileSplit,
    k_grid: &[f64],
    alpha: Option<f64>,
    provenance: &Provenance,
) -> LearnedEquation {
    let eq = select_hyperparameter(lib, split, k_grid, provenance);
    match alpha {
        Some(a) => prune(lib, split, &eq, a),
        None => eq,
    }
}

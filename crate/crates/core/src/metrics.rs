//! Error measures for derivative estimates and recovered equations.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Field;
use crate::library::{Term, NUM_TERMS};
use crate::pdefind::LearnedEquation;

/// Relative squared error `sum (a - t)^2 / sum t^2`. Falls back to the mean
/// squared error when the truth is identically zero.
pub fn rmse(approx: &Field, truth: &Field) -> Result<f64> {
    if approx.shape() != truth.shape() {
        return Err(Error::ShapeMismatch {
            expected: truth.shape(),
            got: approx.shape(),
        });
    }
    Ok(relative_error(
        approx.values.iter().copied(),
        truth.values.iter().copied(),
    ))
}

pub fn relative_error(approx: impl Iterator<Item = f64>, truth: impl Iterator<Item = f64>) -> f64 {
    let (mut num, mut den, mut n) = (0.0, 0.0, 0usize);
    for (a, t) in approx.zip(truth) {
        num += (a - t) * (a - t);
        den += t * t;
        n += 1;
    }
    if den > 0.0 {
        num / den
    } else if n == 0 {
        0.0
    } else {
        num / n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TprScore {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl TprScore {
    /// `tp / (tp + fn + fp)`; two empty supports agree perfectly.
    pub fn value(&self) -> f64 {
        let total = self.tp + self.fp + self.fn_;
        if total == 0 {
            1.0
        } else {
            self.tp as f64 / total as f64
        }
    }
}

pub fn tpr(learned: &[Term], truth: &[Term]) -> TprScore {
    let mut l = [false; NUM_TERMS];
    let mut t = [false; NUM_TERMS];
    learned.iter().for_each(|x| l[x.index()] = true);
    truth.iter().for_each(|x| t[x.index()] = true);
    let mut score = TprScore { tp: 0, fp: 0, fn_: 0 };
    for j in 0..NUM_TERMS {
        match (l[j], t[j]) {
            (true, true) => score.tp += 1,
            (true, false) => score.fp += 1,
            (false, true) => score.fn_ += 1,
            _ => {}
        }
    }
    score
}

/// Five-number summary with Tukey fences at 1.5 IQR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub outliers: Vec<f64>,
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl BoxStats {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q1 = quantile(&v, 0.25);
        let q3 = quantile(&v, 0.75);
        let iqr = q3 - q1;
        let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
        Some(Self {
            min: v[0],
            q1,
            median: quantile(&v, 0.5),
            q3,
            max: v[v.len() - 1],
            outliers: v.iter().copied().filter(|&x| x < lo || x > hi).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateEquation {
    pub support: Vec<usize>,
    pub labels: Vec<String>,
    /// Mean coefficient per library term over the equations with the modal support.
    pub mean: Vec<f64>,
    /// Box statistics per support term, in support order.
    pub spread: Vec<BoxStats>,
    pub count: usize,
    pub total: usize,
    /// Set when more than one support shared the highest count; the
    /// lexicographically smallest was taken.
    pub tied: bool,
}

impl AggregateEquation {
    pub fn terms(&self) -> Vec<Term> {
        self.support
            .iter()
            .map(|&j| Term::from_index(j).expect("support index within library"))
            .collect()
    }

    pub fn as_equation(&self, template: &LearnedEquation) -> LearnedEquation {
        let mut eq = LearnedEquation::new(self.mean.clone(), f64::NAN, &template.provenance());
        eq.val0 = template.val0;
        eq
    }
}

/// Modal support across equations and the coefficient statistics of the
/// equations that share it.
pub fn aggregate_equations(equations: &[LearnedEquation]) -> Option<AggregateEquation> {
    if equations.is_empty() {
        return None;
    }
    let mut groups: BTreeMap<Vec<usize>, Vec<&LearnedEquation>> = BTreeMap::new();
    for eq in equations {
        groups.entry(eq.support.clone()).or_default().push(eq);
    }
    let best_count = groups.values().map(Vec::len).max().expect("non-empty");
    let modal: Vec<_> = groups.iter().filter(|(_, v)| v.len() == best_count).collect();
    let tied = modal.len() > 1;
    let (support, members) = modal[0];
    let mut mean = vec![0.0; NUM_TERMS];
    for eq in members {
        for (m, c) in mean.iter_mut().zip(&eq.coefficients) {
            *m += c;
        }
    }
    mean.iter_mut().for_each(|m| *m /= members.len() as f64);
    let spread = support
        .iter()
        .map(|&j| {
            let vals: Vec<f64> = members.iter().map(|e| e.coefficients[j]).collect();
            BoxStats::from_values(&vals).expect("group is not empty")
        })
        .collect();
    Some(AggregateEquation {
        support: support.clone(),
        labels: support.iter().map(|&j| Term::ALL[j].label().to_string()).collect(),
        mean,
        spread,
        count: best_count,
        total: equations.len(),
        tied,
    })
}

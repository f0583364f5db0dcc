//! Candidate-term matrix `Theta` and target `u_t` built from a derivative
//! bundle.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::dataset::Preset;
use crate::denoise::DerivativeBundle;
use crate::error::{Error, Result};

/// The twelve candidate terms for powers of `u` up to 2, in column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Term {
    One,
    U,
    U2,
    Ux,
    UUx,
    U2Ux,
    Uxx,
    UUxx,
    U2Uxx,
    Ux2,
    UxUxx,
    Uxx2,
}

pub const NUM_TERMS: usize = 12;

impl From<Term> for String {
    fn from(t: Term) -> String {
        t.label().to_string()
    }
}

impl TryFrom<String> for Term {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl Term {
    pub const ALL: [Term; NUM_TERMS] = [
        Term::One,
        Term::U,
        Term::U2,
        Term::Ux,
        Term::UUx,
        Term::U2Ux,
        Term::Uxx,
        Term::UUxx,
        Term::U2Uxx,
        Term::Ux2,
        Term::UxUxx,
        Term::Uxx2,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Term> {
        Term::ALL.get(i).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            Term::One => "1",
            Term::U => "u",
            Term::U2 => "u^2",
            Term::Ux => "u_x",
            Term::UUx => "u*u_x",
            Term::U2Ux => "u^2*u_x",
            Term::Uxx => "u_xx",
            Term::UUxx => "u*u_xx",
            Term::U2Uxx => "u^2*u_xx",
            Term::Ux2 => "u_x^2",
            Term::UxUxx => "u_x*u_xx",
            Term::Uxx2 => "u_xx^2",
        }
    }

    pub fn eval(self, u: f64, ux: f64, uxx: f64) -> f64 {
        match self {
            Term::One => 1.0,
            Term::U => u,
            Term::U2 => u * u,
            Term::Ux => ux,
            Term::UUx => u * ux,
            Term::U2Ux => u * u * ux,
            Term::Uxx => uxx,
            Term::UUxx => u * uxx,
            Term::U2Uxx => u * u * uxx,
            Term::Ux2 => ux * ux,
            Term::UxUxx => ux * uxx,
            Term::Uxx2 => uxx * uxx,
        }
    }

    /// Power of `u` multiplying a `u_xx` factor, if the term is linear in
    /// `u_xx`.
    pub fn diffusion_power(self) -> Option<i32> {
        match self {
            Term::Uxx => Some(0),
            Term::UUxx => Some(1),
            Term::U2Uxx => Some(2),
            _ => None,
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Term {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Term::ALL
            .into_iter()
            .find(|t| t.label() == s)
            .ok_or_else(|| Error::UnknownTerm(s.to_string()))
    }
}

/// True support of each model's generating equation.
pub fn true_support(preset: Preset) -> Vec<Term> {
    match preset {
        Preset::DiffusionAdvection => vec![Term::Ux, Term::Uxx],
        Preset::FisherKpp => vec![Term::U, Term::U2, Term::Uxx],
        Preset::NonlinearFisherKpp => vec![Term::U, Term::U2, Term::UUxx, Term::Ux2],
    }
}

/// Which time indices enter the library: drop the first `skip`, then keep
/// every `stride`-th of the rest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subsample {
    pub skip: usize,
    pub stride: usize,
}

impl Subsample {
    pub const ALL: Subsample = Subsample { skip: 0, stride: 1 };

    pub fn for_preset(preset: Preset) -> Self {
        match preset {
            Preset::DiffusionAdvection => Subsample { skip: 20, stride: 5 },
            _ => Subsample::ALL,
        }
    }

    pub fn retained(&self, nt: usize) -> Vec<usize> {
        (self.skip..nt).step_by(self.stride.max(1)).collect()
    }
}

impl Default for Subsample {
    fn default() -> Self {
        Self::ALL
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Library {
    /// `R x 12`, columns in [`Term::ALL`] order.
    pub theta: Array2<f64>,
    pub target: Array1<f64>,
    pub labels: Vec<String>,
    /// Grid coordinates `(i, j)` of each row.
    pub points: Vec<(usize, usize)>,
}

impl Library {
    pub fn rows(&self) -> usize {
        self.points.len()
    }

    pub fn column(&self, term: Term) -> ndarray::ArrayView1<'_, f64> {
        self.theta.column(term.index())
    }

    /// CSV with header `labels..., u_t, i, j`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(std::io::BufWriter::new(std::fs::File::create(path)?));
        let mut header: Vec<&str> = self.labels.iter().map(String::as_str).collect();
        header.extend(["u_t", "i", "j"]);
        w.write_record(&header)?;
        for (r, &(i, j)) in self.points.iter().enumerate() {
            let mut rec: Vec<String> = self.theta.row(r).iter().map(|v| v.to_string()).collect();
            rec.push(self.target[r].to_string());
            rec.push(i.to_string());
            rec.push(j.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        w.into_inner()
            .map_err(|e| Error::Io(e.into_error()))?
            .flush()?;
        Ok(())
    }
}

pub fn build_library(bundle: &DerivativeBundle, subsample: Subsample) -> Result<Library> {
    let (m, n) = bundle.grid().shape();
    let times = subsample.retained(n);
    if times.is_empty() || m == 0 {
        return Err(Error::EmptyLibrary);
    }
    let rows = m * times.len();
    let mut theta = Array2::zeros((rows, NUM_TERMS));
    let mut target = Array1::zeros(rows);
    let mut points = Vec::with_capacity(rows);
    for &j in &times {
        for i in 0..m {
            let r = points.len();
            let (u, ux, uxx) = (
                bundle.u.values[[i, j]],
                bundle.u_x.values[[i, j]],
                bundle.u_xx.values[[i, j]],
            );
            for term in Term::ALL {
                theta[[r, term.index()]] = term.eval(u, ux, uxx);
            }
            target[r] = bundle.u_t.values[[i, j]];
            points.push((i, j));
        }
    }
    Ok(Library {
        theta,
        target,
        labels: Term::ALL.iter().map(|t| t.label().to_string()).collect(),
        points,
    })
}

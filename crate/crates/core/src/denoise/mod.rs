//! Approximating `u` and its partial derivatives from noisy observations.

pub mod ann;
pub mod fd;
pub mod spline;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::Scale;
use crate::error::{Error, Result};
use crate::grid::{Field, Grid};

pub use ann::{ann_bundle, train, Init, SurrogateNet, TrainConfig, TrainedSurrogate};
pub use fd::fd_bundle;
pub use spline::spline_bundle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Fd,
    Spline,
    Ann,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Fd, Method::Spline, Method::Ann];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Fd => "fd",
            Method::Spline => "spline",
            Method::Ann => "ann",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown denoising method `{s}`")))
    }
}

/// `u` and the derivatives used to build the term library, all on one grid
/// and in original (unscaled) units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivativeBundle {
    pub u: Field,
    pub u_t: Field,
    pub u_x: Field,
    pub u_xx: Field,
    pub method: Method,
}

impl DerivativeBundle {
    pub fn new(u: Field, u_t: Field, u_x: Field, u_xx: Field, method: Method) -> Result<Self> {
        for f in [&u_t, &u_x, &u_xx] {
            if f.grid != u.grid {
                return Err(Error::InvalidGrid(format!(
                    "field `{}` is on a different grid than `u`",
                    f.label
                )));
            }
        }
        for f in [&u, &u_t, &u_x, &u_xx] {
            if let Some(((i, j), _)) = f.values.indexed_iter().find(|(_, v)| !v.is_finite()) {
                return Err(Error::NonFinite {
                    label: f.label.clone(),
                    i,
                    j,
                });
            }
        }
        Ok(Self {
            u,
            u_t,
            u_x,
            u_xx,
            method,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.u.grid
    }

    /// `(name, field)` pairs in the order `u, u_t, u_x, u_xx`.
    pub fn fields(&self) -> [(&'static str, &Field); 4] {
        [
            ("u", &self.u),
            ("u_t", &self.u_t),
            ("u_x", &self.u_x),
            ("u_xx", &self.u_xx),
        ]
    }

    /// Undo a value scaling: `u -> min + span u`, derivatives times `span`.
    pub fn unscale(mut self, scale: Scale) -> Self {
        let span = scale.span();
        self.u.values.mapv_inplace(|v| scale.invert(v));
        for f in [&mut self.u_t, &mut self.u_x, &mut self.u_xx] {
            f.values.mapv_inplace(|v| v * span);
        }
        self
    }
}

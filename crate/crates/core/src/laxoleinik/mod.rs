//! Negative and positive Lax-Oleinik operators and evolutions.
//!
//! An [`Evolution`] packages an initial datum, a Tonelli Lagrangian and a
//! manifold with a sample window. The negative evolution
//! `T^-_t u(x) = inf_y u(y) + h_t(y, x)` is evaluated exactly through
//! projection oracles for characteristic data of closed sets with the kinetic
//! Lagrangian (where it equals `d_C(x)^2 / (2t)`), and through a candidate
//! grid with local refinement otherwise. The positive operator
//! `T^+_s w(x) = sup_y w(y) - h_s(x, y)` supports the restricted variant over
//! a metric ball, and the composed evaluation `T^+_s T^-_{s+t} u` that drives
//! the adapted homotopy exploits per-branch closed forms of the argmax.

mod closed_set;
mod evolution;

use alloc::string::String;
use core::fmt;

use crate::geometry::GeometryError;
use crate::tonelli::TonelliError;

pub use closed_set::{ClosedSet, ProjectionSet};
pub use evolution::{
    DominationReport, EvalMinus, EvalPlus, Evolution, MinusOptimum, PlusOptimum, Tolerances,
    Window,
};

use crate::geometry::{ManifoldSpec, Point};
use crate::num;
use crate::tonelli::ScalarField;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq)]
pub enum LaxOleinikError {
    /// The evolution value is `+inf` at the queried point: the window
    /// violates the finiteness hypothesis (e.g. characteristic of the empty
    /// set). Reported, never clamped.
    InfiniteValue { t: f64 },
    OutOfWindow { t: f64 },
    /// Restricted ball contains no candidate (radius below grid resolution).
    EmptyBall { radius: f64 },
    Unsupported(String),
    InvalidArgument(String),
    Geometry(GeometryError),
    Tonelli(TonelliError),
}

impl fmt::Display for LaxOleinikError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LaxOleinikError::InfiniteValue { t } => {
                write!(f, "evolution value is +inf at t = {t} (finiteness violated)")
            }
            LaxOleinikError::OutOfWindow { t } => write!(f, "query time {t} outside the window"),
            LaxOleinikError::EmptyBall { radius } => {
                write!(f, "restricted ball of radius {radius} holds no candidate")
            }
            LaxOleinikError::Unsupported(m) => write!(f, "unsupported: {m}"),
            LaxOleinikError::InvalidArgument(m) => write!(f, "invalid argument: {m}"),
            LaxOleinikError::Geometry(e) => write!(f, "{e}"),
            LaxOleinikError::Tonelli(e) => write!(f, "{e}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for LaxOleinikError {}

impl From<GeometryError> for LaxOleinikError {
    fn from(e: GeometryError) -> Self {
        LaxOleinikError::Geometry(e)
    }
}

impl From<TonelliError> for LaxOleinikError {
    fn from(e: TonelliError) -> Self {
        LaxOleinikError::Tonelli(e)
    }
}

/// Initial data `u : M -> [-inf, +inf]` for the evolutions.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "kebab-case"))]
pub enum InitialDatum {
    /// `chi_C`: 0 on the set, `+inf` off it.
    Characteristic { set: ClosedSet },
    /// Finite samples; `+inf` values allowed (excluded from argmin candidates).
    Sampled { points: Vec<Point>, values: Vec<f64> },
    /// A continuous closed-form datum over chart coordinates.
    Expression { expr: ScalarField },
}

impl InitialDatum {
    /// Raw value `u(x)` (with `chi_C` evaluated at exact-oracle tolerance).
    pub fn value(&self, m: &ManifoldSpec, x: &Point) -> f64 {
        match self {
            InitialDatum::Characteristic { set } => {
                let d = set.distance(m, x);
                if d <= 1e-10 * (1.0 + scale_of(m)) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            InitialDatum::Sampled { points, values } => points
                .iter()
                .zip(values)
                .find(|(p, _)| m.distance(p, x) <= 1e-12 * (1.0 + scale_of(m)))
                .map(|(_, v)| *v)
                .unwrap_or(f64::INFINITY),
            InitialDatum::Expression { expr } => expr.value(&x.coords),
        }
    }
}

fn scale_of(m: &ManifoldSpec) -> f64 {
    m.diameter().unwrap_or(1.0)
}

/// Lower semi-continuous regularization evaluated at a point.
///
/// Characteristic and expression data are already lower semi-continuous (the
/// closure of the supported sets is themselves); sampled data take the min
/// over the sample neighborhood at the cloud's mesh resolution, which drops
/// isolated spikes.
pub fn lsc_regularize(datum: &InitialDatum, m: &ManifoldSpec, x: &Point) -> f64 {
    match datum {
        InitialDatum::Characteristic { .. } | InitialDatum::Expression { .. } => {
            datum.value(m, x)
        }
        InitialDatum::Sampled { points, values } => {
            if points.is_empty() {
                return f64::INFINITY;
            }
            // Mesh norm: the largest nearest-neighbor spacing in the cloud.
            let mut mesh: f64 = 0.0;
            for (i, p) in points.iter().enumerate() {
                let mut nn = f64::INFINITY;
                for (j, q) in points.iter().enumerate() {
                    if i != j {
                        nn = nn.min(m.distance(p, q));
                    }
                }
                if nn.is_finite() {
                    mesh = mesh.max(nn);
                }
            }
            let nearest = points
                .iter()
                .map(|p| m.distance(p, x))
                .fold(f64::INFINITY, f64::min);
            let radius = nearest.max(mesh) * (1.0 + 1e-9);
            let mut best = f64::INFINITY;
            for (p, v) in points.iter().zip(values) {
                if m.distance(p, x) <= radius {
                    best = best.min(*v);
                }
            }
            best
        }
    }
}

/// Shared numeric guard: treat `v` as `+inf` when it is.
pub(crate) fn finite_or_err(v: f64, t: f64) -> Result<f64, LaxOleinikError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(LaxOleinikError::InfiniteValue { t })
    }
}

pub(crate) fn value_scale(v: f64) -> f64 {
    1.0 + num::abs(v)
}

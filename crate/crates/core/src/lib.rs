//! Numerical study of the singular structure of viscosity solutions of the
//! evolutionary Hamilton-Jacobi equation `∂_t U + H(x, ∂_x U) = 0`.
//!
//! The crate evaluates negative and positive Lax-Oleinik evolutions of initial
//! data over closed-form manifolds (Euclidean space, flat tori, the round
//! 2-sphere and products), detects the singular set, medial axes, cut times and
//! Aubry sets of the evolved solution, and drives the adapted-homotopy
//! retraction of the non-Aubry region onto the singular set while checking the
//! quantitative bounds along the way.
//!
//! The supported manifolds all have exact distances and geodesic enumerations,
//! so the Lax-Oleinik inf/sup formulas can be evaluated through projection
//! oracles and serve as ground truth for the generic grid-based paths.
//!
//! IO, file formats and the experiment CLI live in the companion `hjlab` crate;
//! this crate is `no_std`-compatible (with `alloc`) when built with the `libm`
//! feature instead of the default `std`.

#![cfg_attr(not(feature = "std"), no_std)]

#[cfg(not(any(feature = "std", feature = "libm")))]
compile_error!("hjlab-core requires either the `std` or the `libm` feature");

extern crate alloc;

pub mod applications;
pub mod geometry;
pub mod homotopy;
pub mod laxoleinik;
mod num;
pub mod singularity;
pub mod tonelli;
mod vecn;

pub use geometry::{GeodesicFamily, GeodesicSegment, ManifoldSpec, Point, Tangent};
pub use laxoleinik::{ClosedSet, Evolution, InitialDatum, Window};
pub use tonelli::{DiscreteCurve, TonelliConstants, TonelliLagrangian};

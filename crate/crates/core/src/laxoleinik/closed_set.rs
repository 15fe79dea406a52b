//! Closed subsets with exact distance and projection oracles.

use alloc::vec;
use alloc::vec::Vec;

use crate::geometry::{ManifoldSpec, Point};
use crate::num;
use crate::vecn;

use super::LaxOleinikError;

/// Nearest set points of a query, up to a cap. `exhaustive` drops when a
/// continuum of projections exists or the cap truncated the list.
#[derive(Debug, Clone)]
pub struct ProjectionSet {
    pub points: Vec<Point>,
    pub exhaustive: bool,
}

/// Supported closed sets. All carry exact distance oracles; all but the
/// sampled boundary cases carry exact projection oracles.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "kebab-case"))]
pub enum ClosedSet {
    FinitePoints { points: Vec<Point> },
    /// Round circle in the Euclidean plane.
    Circle { center: Point, radius: f64 },
    /// Piecewise linear curve in Euclidean space (closed if endpoints match).
    Polyline { points: Vec<Point> },
    /// Diagonal of a product manifold `M x M`.
    Diagonal,
    /// Complement of an open box (Euclidean): the set is everything outside.
    BoxComplement { lo: Vec<f64>, hi: Vec<f64> },
}

impl ClosedSet {
    pub fn finite(points: Vec<Point>) -> Self {
        ClosedSet::FinitePoints { points }
    }

    pub fn validate(&self, m: &ManifoldSpec) -> Result<(), LaxOleinikError> {
        match self {
            ClosedSet::FinitePoints { points } => {
                for p in points {
                    if p.dim() != m.chart_dim() {
                        return Err(LaxOleinikError::InvalidArgument(
                            "set point dimension mismatch".into(),
                        ));
                    }
                }
                Ok(())
            }
            ClosedSet::Circle { center, radius } => {
                if !matches!(m, ManifoldSpec::Euclidean { dim: 2 }) {
                    return Err(LaxOleinikError::Unsupported(
                        "circle sets live in the Euclidean plane".into(),
                    ));
                }
                if center.dim() != 2 || !(*radius > 0.0) {
                    return Err(LaxOleinikError::InvalidArgument("bad circle".into()));
                }
                Ok(())
            }
            ClosedSet::Polyline { points } => {
                if !matches!(m, ManifoldSpec::Euclidean { .. }) {
                    return Err(LaxOleinikError::Unsupported(
                        "polyline sets live in Euclidean space".into(),
                    ));
                }
                if points.len() < 2 {
                    return Err(LaxOleinikError::InvalidArgument(
                        "polyline needs at least two points".into(),
                    ));
                }
                Ok(())
            }
            ClosedSet::Diagonal => match m {
                ManifoldSpec::Product { left, right } if left == right => Ok(()),
                _ => Err(LaxOleinikError::Unsupported(
                    "diagonal sets require a product manifold M x M".into(),
                )),
            },
            ClosedSet::BoxComplement { lo, hi } => {
                if !matches!(m, ManifoldSpec::Euclidean { .. }) {
                    return Err(LaxOleinikError::Unsupported(
                        "box complements live in Euclidean space".into(),
                    ));
                }
                if lo.len() != m.chart_dim()
                    || hi.len() != m.chart_dim()
                    || lo.iter().zip(hi).any(|(a, b)| !(a < b))
                {
                    return Err(LaxOleinikError::InvalidArgument("bad box".into()));
                }
                Ok(())
            }
        }
    }

    /// `d_C(x)`; `+inf` for the empty set.
    pub fn distance(&self, m: &ManifoldSpec, x: &Point) -> f64 {
        match self {
            ClosedSet::FinitePoints { points } => points
                .iter()
                .map(|p| m.distance(p, x))
                .fold(f64::INFINITY, f64::min),
            ClosedSet::Circle { center, radius } => {
                num::abs(vecn::dist(&x.coords, &center.coords) - radius)
            }
            ClosedSet::Polyline { points } => points
                .windows(2)
                .map(|w| segment_distance(&w[0].coords, &w[1].coords, &x.coords).0)
                .fold(f64::INFINITY, f64::min),
            ClosedSet::Diagonal => {
                let factor = diagonal_factor(m);
                let k = factor.chart_dim();
                let a = Point::new(x.coords[..k].to_vec());
                let b = Point::new(x.coords[k..].to_vec());
                factor.diagonal_distance(&a, &b)
            }
            ClosedSet::BoxComplement { lo, hi } => {
                let mut inside = true;
                let mut wall = f64::INFINITY;
                for ((c, l), h) in x.coords.iter().zip(lo).zip(hi) {
                    if c <= l || c >= h {
                        inside = false;
                        break;
                    }
                    wall = wall.min((c - l).min(h - c));
                }
                if inside {
                    wall
                } else {
                    0.0
                }
            }
        }
    }

    /// All nearest set points (within exact-oracle tolerance), up to `cap`.
    pub fn projections(&self, m: &ManifoldSpec, x: &Point, cap: usize) -> ProjectionSet {
        let cap = cap.max(1);
        let scale = 1.0 + m.diameter().unwrap_or(1.0);
        let tol = 1e-12 * scale;
        match self {
            ClosedSet::FinitePoints { points } => {
                let d = self.distance(m, x);
                if !d.is_finite() {
                    return ProjectionSet { points: Vec::new(), exhaustive: true };
                }
                let mut near: Vec<Point> = points
                    .iter()
                    .filter(|p| m.distance(p, x) <= d + tol)
                    .cloned()
                    .collect();
                let exhaustive = near.len() <= cap;
                near.truncate(cap);
                ProjectionSet { points: near, exhaustive }
            }
            ClosedSet::Circle { center, radius } => {
                let rel = vecn::sub(&x.coords, &center.coords);
                let n = vecn::norm(&rel);
                if n <= tol {
                    // Continuum of projections around the center: sampled fan.
                    let pts = (0..cap)
                        .map(|k| {
                            let ang = 2.0 * core::f64::consts::PI * (k as f64) / (cap as f64);
                            Point::new(vec![
                                center.coords[0] + radius * num::cos(ang),
                                center.coords[1] + radius * num::sin(ang),
                            ])
                        })
                        .collect();
                    return ProjectionSet { points: pts, exhaustive: false };
                }
                let p = vecn::axpy(&center.coords, radius / n, &rel);
                ProjectionSet { points: vec![Point::new(p)], exhaustive: true }
            }
            ClosedSet::Polyline { points } => {
                let mut best = f64::INFINITY;
                let mut cands: Vec<(f64, Vec<f64>)> = Vec::new();
                for w in points.windows(2) {
                    let (d, p) = segment_distance(&w[0].coords, &w[1].coords, &x.coords);
                    best = best.min(d);
                    cands.push((d, p));
                }
                let mut near: Vec<Point> = Vec::new();
                for (d, p) in cands {
                    if d <= best + tol
                        && !near.iter().any(|q| vecn::dist(&q.coords, &p) <= 1e-9 * scale)
                    {
                        near.push(Point::new(p));
                    }
                }
                let exhaustive = near.len() <= cap;
                near.truncate(cap);
                ProjectionSet { points: near, exhaustive }
            }
            ClosedSet::Diagonal => {
                let factor = diagonal_factor(m);
                let k = factor.chart_dim();
                let a = Point::new(x.coords[..k].to_vec());
                let b = Point::new(x.coords[k..].to_vec());
                let family = factor
                    .minimizing_geodesics(&a, &b, cap)
                    .expect("validated diagonal factor");
                let mut pts = Vec::with_capacity(family.segments.len());
                for seg in &family.segments {
                    let mid = seg.point_at(0.5 * seg.duration);
                    let mut c = mid.coords.clone();
                    c.extend_from_slice(&mid.coords);
                    let p = Point::new(c);
                    if !pts
                        .iter()
                        .any(|q: &Point| vecn::dist(&q.coords, &p.coords) <= 1e-9 * scale)
                    {
                        pts.push(p);
                    }
                }
                let exhaustive = family.exhaustive && pts.len() <= cap;
                pts.truncate(cap);
                ProjectionSet { points: pts, exhaustive }
            }
            ClosedSet::BoxComplement { lo, hi } => {
                let d = self.distance(m, x);
                if d == 0.0 {
                    return ProjectionSet { points: vec![x.clone()], exhaustive: true };
                }
                let mut pts: Vec<Point> = Vec::new();
                for i in 0..x.coords.len() {
                    for (wall, is_lo) in [(lo[i], true), (hi[i], false)] {
                        let dist = if is_lo { x.coords[i] - wall } else { wall - x.coords[i] };
                        if num::abs(dist - d) <= tol {
                            let mut p = x.coords.clone();
                            p[i] = wall;
                            pts.push(Point::new(p));
                        }
                    }
                }
                let exhaustive = pts.len() <= cap;
                pts.truncate(cap.max(1));
                ProjectionSet { points: pts, exhaustive }
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, ClosedSet::FinitePoints { points } if points.is_empty())
    }
}

/// Factor manifold of a validated diagonal set.
pub(crate) fn diagonal_factor(m: &ManifoldSpec) -> &ManifoldSpec {
    match m {
        ManifoldSpec::Product { left, .. } => left,
        _ => panic!("diagonal set on a non-product manifold"),
    }
}

/// Distance from `x` to the segment `[a, b]` and the nearest point.
fn segment_distance(a: &[f64], b: &[f64], x: &[f64]) -> (f64, Vec<f64>) {
    let ab = vecn::sub(b, a);
    let denom = vecn::norm_sq(&ab);
    let t = if denom == 0.0 {
        0.0
    } else {
        (vecn::dot(&vecn::sub(x, a), &ab) / denom).clamp(0.0, 1.0)
    };
    let p = vecn::axpy(a, t, &ab);
    (vecn::dist(x, &p), p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finite_points_distance_and_projections() {
        let m = ManifoldSpec::euclidean(2);
        let set = ClosedSet::finite(vec![
            Point::new(vec![-1.0, 0.0]),
            Point::new(vec![1.0, 0.0]),
        ]);
        let x = Point::new(vec![0.0, 0.5]);
        let d = set.distance(&m, &x);
        assert!((d - (1.25f64).sqrt()).abs() < 1e-14);
        let projs = set.projections(&m, &x, 8);
        assert_eq!(projs.points.len(), 2);
        assert!(projs.exhaustive);
    }

    #[test]
    fn circle_distance_is_one_lipschitz_and_zero_on_set() {
        let m = ManifoldSpec::euclidean(2);
        let set = ClosedSet::Circle { center: Point::new(vec![0.0, 0.0]), radius: 1.0 };
        assert!(set.distance(&m, &Point::new(vec![1.0, 0.0])) < 1e-12);
        assert!((set.distance(&m, &Point::new(vec![0.0, 0.0])) - 1.0).abs() < 1e-12);
        assert!((set.distance(&m, &Point::new(vec![2.0, 0.0])) - 1.0).abs() < 1e-12);
        let fan = set.projections(&m, &Point::new(vec![0.0, 0.0]), 12);
        assert_eq!(fan.points.len(), 12);
        assert!(!fan.exhaustive);
    }

    #[test]
    fn diagonal_projection_is_geodesic_midpoint() {
        let f = ManifoldSpec::euclidean(2);
        let m = f.squared();
        let set = ClosedSet::Diagonal;
        set.validate(&m).unwrap();
        let x = m.point(&[0.0, 0.0, 2.0, 0.0]).unwrap();
        let d = set.distance(&m, &x);
        assert!((d - 2.0 / (2.0f64).sqrt()).abs() < 1e-14);
        let projs = set.projections(&m, &x, 4);
        assert_eq!(projs.points.len(), 1);
        assert!(vecn::dist(&projs.points[0].coords, &[1.0, 0.0, 1.0, 0.0]) < 1e-12);
    }

    #[test]
    fn torus_diagonal_antipodal_pair_has_two_projections() {
        let f = ManifoldSpec::flat_torus(&[1.0]);
        let m = f.squared();
        let set = ClosedSet::Diagonal;
        let x = m.point(&[0.0, 0.5]).unwrap();
        let projs = set.projections(&m, &x, 8);
        assert_eq!(projs.points.len(), 2);
    }

    #[test]
    fn square_polyline_center_has_four_projections() {
        let m = ManifoldSpec::euclidean(2);
        let set = ClosedSet::Polyline {
            points: vec![
                Point::new(vec![-1.0, -1.0]),
                Point::new(vec![1.0, -1.0]),
                Point::new(vec![1.0, 1.0]),
                Point::new(vec![-1.0, 1.0]),
                Point::new(vec![-1.0, -1.0]),
            ],
        };
        let center = Point::new(vec![0.0, 0.0]);
        assert!((set.distance(&m, &center) - 1.0).abs() < 1e-14);
        let projs = set.projections(&m, &center, 8);
        assert_eq!(projs.points.len(), 4);
    }

    #[test]
    fn box_complement_inside_and_outside() {
        let m = ManifoldSpec::euclidean(2);
        let set = ClosedSet::BoxComplement { lo: vec![-1.0, -1.0], hi: vec![1.0, 1.0] };
        assert_eq!(set.distance(&m, &Point::new(vec![2.0, 0.0])), 0.0);
        assert!((set.distance(&m, &Point::new(vec![0.5, 0.0])) - 0.5).abs() < 1e-14);
        let projs = set.projections(&m, &Point::new(vec![0.0, 0.0]), 8);
        assert_eq!(projs.points.len(), 4);
    }
}

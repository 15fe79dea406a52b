//! Closed-form manifolds: Euclidean space, flat tori, the round 2-sphere and
//! binary products, with exact distances, exponential/logarithm maps and
//! enumeration of minimizing geodesics.
//!
//! Every supported manifold carries a canonical chart: Euclidean and torus
//! points are coordinate vectors (torus coordinates reduced mod the periods),
//! sphere points are ambient 3-vectors of norm equal to the radius, product
//! points concatenate the factor charts. Distances and geodesics are exact in
//! these charts, which is what lets them act as oracles for everything built
//! on top.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::num;
use crate::vecn;

/// Relative tolerance for "this length equals that length" decisions inside
/// the enumeration code.
const LEN_TOL: f64 = 1e-12;

/// Separation (after normalization) below which two candidate geodesics are
/// considered the same family member.
const VELOCITY_DEDUP_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub enum GeometryError {
    DimensionMismatch { expected: usize, got: usize },
    InvalidSpec(String),
    ZeroCap,
    InvalidPoint(String),
}

impl fmt::Display for GeometryError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeometryError::DimensionMismatch { expected, got } => {
                write!(f, "chart dimension mismatch: expected {expected}, got {got}")
            }
            GeometryError::InvalidSpec(msg) => write!(f, "invalid manifold spec: {msg}"),
            GeometryError::ZeroCap => write!(f, "geodesic enumeration cap must be positive"),
            GeometryError::InvalidPoint(msg) => write!(f, "invalid point: {msg}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for GeometryError {}

/// A point in the manifold's canonical chart.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Point {
    pub coords: Vec<f64>,
}

impl Point {
    pub fn new(coords: Vec<f64>) -> Self {
        Point { coords }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

impl From<Vec<f64>> for Point {
    fn from(coords: Vec<f64>) -> Self {
        Point { coords }
    }
}

/// A tangent vector attached to a base point, expressed in chart coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Tangent {
    pub base: Point,
    pub vector: Vec<f64>,
}

impl Tangent {
    pub fn norm(&self) -> f64 {
        vecn::norm(&self.vector)
    }
}

/// Supported manifold kinds.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "kebab-case"))]
pub enum ManifoldSpec {
    Euclidean { dim: usize },
    FlatTorus { periods: Vec<f64> },
    Sphere2 { radius: f64 },
    Product { left: Box<ManifoldSpec>, right: Box<ManifoldSpec> },
}

impl ManifoldSpec {
    pub fn euclidean(dim: usize) -> Self {
        ManifoldSpec::Euclidean { dim }
    }

    pub fn flat_torus(periods: &[f64]) -> Self {
        ManifoldSpec::FlatTorus { periods: periods.to_vec() }
    }

    pub fn unit_sphere() -> Self {
        ManifoldSpec::Sphere2 { radius: 1.0 }
    }

    pub fn product(left: ManifoldSpec, right: ManifoldSpec) -> Self {
        ManifoldSpec::Product { left: Box::new(left), right: Box::new(right) }
    }

    /// Square of `self`, i.e. `M x M`.
    pub fn squared(&self) -> Self {
        ManifoldSpec::product(self.clone(), self.clone())
    }

    /// Number of chart coordinates (3 for the embedded sphere).
    pub fn chart_dim(&self) -> usize {
        match self {
            ManifoldSpec::Euclidean { dim } => *dim,
            ManifoldSpec::FlatTorus { periods } => periods.len(),
            ManifoldSpec::Sphere2 { .. } => 3,
            ManifoldSpec::Product { left, right } => left.chart_dim() + right.chart_dim(),
        }
    }

    /// Intrinsic dimension.
    pub fn dim(&self) -> usize {
        match self {
            ManifoldSpec::Euclidean { dim } => *dim,
            ManifoldSpec::FlatTorus { periods } => periods.len(),
            ManifoldSpec::Sphere2 { .. } => 2,
            ManifoldSpec::Product { left, right } => left.dim() + right.dim(),
        }
    }

    pub fn is_compact(&self) -> bool {
        match self {
            ManifoldSpec::Euclidean { .. } => false,
            ManifoldSpec::FlatTorus { .. } | ManifoldSpec::Sphere2 { .. } => true,
            ManifoldSpec::Product { left, right } => left.is_compact() && right.is_compact(),
        }
    }

    /// Diameter of a compact manifold, `None` otherwise.
    pub fn diameter(&self) -> Option<f64> {
        match self {
            ManifoldSpec::Euclidean { .. } => None,
            ManifoldSpec::FlatTorus { periods } => {
                Some(num::sqrt(periods.iter().map(|p| (p / 2.0) * (p / 2.0)).sum()))
            }
            ManifoldSpec::Sphere2 { radius } => Some(core::f64::consts::PI * radius),
            ManifoldSpec::Product { left, right } => {
                let (a, b) = (left.diameter()?, right.diameter()?);
                Some(num::hypot(a, b))
            }
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        match self {
            ManifoldSpec::Euclidean { dim } => {
                if *dim == 0 {
                    return Err(GeometryError::InvalidSpec("dimension must be >= 1".into()));
                }
            }
            ManifoldSpec::FlatTorus { periods } => {
                if periods.is_empty() {
                    return Err(GeometryError::InvalidSpec("dimension must be >= 1".into()));
                }
                if periods.iter().any(|p| !(*p > 0.0)) {
                    return Err(GeometryError::InvalidSpec(
                        "torus periods must be strictly positive".into(),
                    ));
                }
            }
            ManifoldSpec::Sphere2 { radius } => {
                if !(*radius > 0.0) {
                    return Err(GeometryError::InvalidSpec(
                        "sphere radius must be strictly positive".into(),
                    ));
                }
            }
            ManifoldSpec::Product { left, right } => {
                left.validate()?;
                right.validate()?;
            }
        }
        Ok(())
    }

    fn check_dim(&self, coords: &[f64]) -> Result<(), GeometryError> {
        if coords.len() != self.chart_dim() {
            return Err(GeometryError::DimensionMismatch {
                expected: self.chart_dim(),
                got: coords.len(),
            });
        }
        Ok(())
    }

    /// Build a canonical point from raw chart coordinates: torus coordinates
    /// are wrapped into `[0, period)`, sphere coordinates renormalized onto
    /// the radius.
    pub fn point(&self, coords: &[f64]) -> Result<Point, GeometryError> {
        self.check_dim(coords)?;
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(GeometryError::InvalidPoint("non-finite coordinate".into()));
        }
        match self {
            ManifoldSpec::Euclidean { .. } => Ok(Point::new(coords.to_vec())),
            ManifoldSpec::FlatTorus { periods } => {
                let wrapped = coords
                    .iter()
                    .zip(periods)
                    .map(|(c, p)| {
                        let mut w = c % p;
                        if w < 0.0 {
                            w += p;
                        }
                        if w >= *p {
                            w = 0.0;
                        }
                        w
                    })
                    .collect();
                Ok(Point::new(wrapped))
            }
            ManifoldSpec::Sphere2 { radius } => {
                let n = vecn::norm(coords);
                if n == 0.0 {
                    return Err(GeometryError::InvalidPoint(
                        "cannot normalize the zero vector onto the sphere".into(),
                    ));
                }
                Ok(Point::new(vecn::scale(coords, radius / n)))
            }
            ManifoldSpec::Product { left, right } => {
                let k = left.chart_dim();
                let a = left.point(&coords[..k])?;
                let b = right.point(&coords[k..])?;
                let mut v = a.coords;
                v.extend_from_slice(&b.coords);
                Ok(Point::new(v))
            }
        }
    }

    /// Build a tangent vector; on the sphere the normal component is removed
    /// (rejected if it dominates).
    pub fn tangent(&self, base: &Point, vector: &[f64]) -> Result<Tangent, GeometryError> {
        self.check_dim(&base.coords)?;
        self.check_dim(vector)?;
        match self {
            ManifoldSpec::Sphere2 { radius } => {
                let radial = vecn::dot(vector, &base.coords) / (radius * radius);
                let tangential = vecn::axpy(vector, -radial, &base.coords);
                let vn = vecn::norm(vector);
                if vn > 0.0 && num::abs(radial) * radius > 1e-10 * vn.max(1.0) + vn {
                    return Err(GeometryError::InvalidPoint(
                        "vector is not tangent to the sphere".into(),
                    ));
                }
                Ok(Tangent { base: base.clone(), vector: tangential })
            }
            ManifoldSpec::Product { left, right } => {
                let k = left.chart_dim();
                let a = left.tangent(&Point::new(base.coords[..k].to_vec()), &vector[..k])?;
                let b = right.tangent(&Point::new(base.coords[k..].to_vec()), &vector[k..])?;
                let mut v = a.vector;
                v.extend_from_slice(&b.vector);
                Ok(Tangent { base: base.clone(), vector: v })
            }
            _ => Ok(Tangent { base: base.clone(), vector: vector.to_vec() }),
        }
    }

    /// Riemannian distance. Panics on chart dimension mismatch; use
    /// [`ManifoldSpec::try_distance`] for the checked variant.
    pub fn distance(&self, x: &Point, y: &Point) -> f64 {
        self.try_distance(x, y).expect("chart dimension mismatch")
    }

    pub fn try_distance(&self, x: &Point, y: &Point) -> Result<f64, GeometryError> {
        self.check_dim(&x.coords)?;
        self.check_dim(&y.coords)?;
        Ok(match self {
            ManifoldSpec::Euclidean { .. } => vecn::dist(&x.coords, &y.coords),
            ManifoldSpec::FlatTorus { periods } => num::sqrt(
                x.coords
                    .iter()
                    .zip(&y.coords)
                    .zip(periods)
                    .map(|((a, b), p)| {
                        let d = wrap_symmetric(b - a, *p);
                        d * d
                    })
                    .sum(),
            ),
            ManifoldSpec::Sphere2 { radius } => {
                let c = vecn::dot(&x.coords, &y.coords) / (radius * radius);
                radius * num::acos(c.clamp(-1.0, 1.0))
            }
            ManifoldSpec::Product { left, right } => {
                let k = left.chart_dim();
                let dl = left.try_distance(
                    &Point::new(x.coords[..k].to_vec()),
                    &Point::new(y.coords[..k].to_vec()),
                )?;
                let dr = right.try_distance(
                    &Point::new(x.coords[k..].to_vec()),
                    &Point::new(y.coords[k..].to_vec()),
                )?;
                num::hypot(dl, dr)
            }
        })
    }

    /// Distance from `(x, y)` to the diagonal of `M x M`, i.e. `d(x, y)/sqrt(2)`.
    pub fn diagonal_distance(&self, x: &Point, y: &Point) -> f64 {
        self.distance(x, y) / num::sqrt(2.0)
    }

    /// Chart displacement from `x` to `y` realizing the distance: the minimal
    /// lift on tori, the log map on the sphere, componentwise on products.
    /// Ties (torus half-period, sphere antipode) resolve deterministically.
    pub fn log(&self, x: &Point, y: &Point) -> Vec<f64> {
        match self {
            ManifoldSpec::Euclidean { .. } => vecn::sub(&y.coords, &x.coords),
            ManifoldSpec::FlatTorus { periods } => x
                .coords
                .iter()
                .zip(&y.coords)
                .zip(periods)
                .map(|((a, b), p)| wrap_symmetric(b - a, *p))
                .collect(),
            ManifoldSpec::Sphere2 { radius } => {
                let r2 = radius * radius;
                let c = (vecn::dot(&x.coords, &y.coords) / r2).clamp(-1.0, 1.0);
                let theta = num::acos(c);
                if theta < 1e-15 {
                    return vec![0.0; 3];
                }
                let u = vecn::axpy(&y.coords, -c, &x.coords);
                let un = vecn::norm(&u);
                if un < 1e-14 * radius {
                    // Antipodal: pick a deterministic meridian direction.
                    let w = orthonormal_to(&x.coords);
                    return vecn::scale(&w, radius * theta);
                }
                vecn::scale(&u, radius * theta / un)
            }
            ManifoldSpec::Product { left, right } => {
                let k = left.chart_dim();
                let mut v = left.log(
                    &Point::new(x.coords[..k].to_vec()),
                    &Point::new(y.coords[..k].to_vec()),
                );
                v.extend(right.log(
                    &Point::new(x.coords[k..].to_vec()),
                    &Point::new(y.coords[k..].to_vec()),
                ));
                v
            }
        }
    }

    /// Exponential map: follow the geodesic from `x` with initial chart
    /// velocity `v` for time `s`.
    pub fn exp(&self, x: &Point, v: &[f64], s: f64) -> Point {
        match self {
            ManifoldSpec::Euclidean { .. } => Point::new(vecn::axpy(&x.coords, s, v)),
            ManifoldSpec::FlatTorus { .. } => {
                self.point(&vecn::axpy(&x.coords, s, v)).expect("torus exp")
            }
            ManifoldSpec::Sphere2 { radius } => {
                let speed = vecn::norm(v);
                if speed == 0.0 {
                    return x.clone();
                }
                let phi = speed * s / radius;
                let w = vecn::scale(v, radius / speed);
                Point::new(vecn::add(
                    &vecn::scale(&x.coords, num::cos(phi)),
                    &vecn::scale(&w, num::sin(phi)),
                ))
            }
            ManifoldSpec::Product { left, right } => {
                let k = left.chart_dim();
                let a = left.exp(&Point::new(x.coords[..k].to_vec()), &v[..k], s);
                let b = right.exp(&Point::new(x.coords[k..].to_vec()), &v[k..], s);
                let mut c = a.coords;
                c.extend_from_slice(&b.coords);
                Point::new(c)
            }
        }
    }

    /// Velocity at time `s` of the geodesic started at `x` with velocity `v`.
    pub fn exp_velocity(&self, x: &Point, v: &[f64], s: f64) -> Vec<f64> {
        match self {
            ManifoldSpec::Euclidean { .. } | ManifoldSpec::FlatTorus { .. } => v.to_vec(),
            ManifoldSpec::Sphere2 { radius } => {
                let speed = vecn::norm(v);
                if speed == 0.0 {
                    return v.to_vec();
                }
                let phi = speed * s / radius;
                let w = vecn::scale(v, radius / speed);
                let d = vecn::add(
                    &vecn::scale(&x.coords, -num::sin(phi)),
                    &vecn::scale(&w, num::cos(phi)),
                );
                vecn::scale(&d, speed / radius)
            }
            ManifoldSpec::Product { left, right } => {
                let k = left.chart_dim();
                let mut a = left.exp_velocity(&Point::new(x.coords[..k].to_vec()), &v[..k], s);
                a.extend(right.exp_velocity(&Point::new(x.coords[k..].to_vec()), &v[k..], s));
                a
            }
        }
    }

    /// Lift the chart coordinates of `y` so that, on flat factors, they are
    /// the representative nearest to `reference`. Sphere coordinates are
    /// returned unchanged.
    pub fn lift_near(&self, reference: &[f64], y: &Point) -> Vec<f64> {
        match self {
            ManifoldSpec::Euclidean { .. } | ManifoldSpec::Sphere2 { .. } => y.coords.clone(),
            ManifoldSpec::FlatTorus { periods } => reference
                .iter()
                .zip(&y.coords)
                .zip(periods)
                .map(|((r, c), p)| r + wrap_symmetric(c - r, *p))
                .collect(),
            ManifoldSpec::Product { left, right } => {
                let k = left.chart_dim();
                let mut v = left.lift_near(&reference[..k], &Point::new(y.coords[..k].to_vec()));
                v.extend(right.lift_near(&reference[k..], &Point::new(y.coords[k..].to_vec())));
                v
            }
        }
    }

    /// All minimizing geodesics from `x` to `y`, parametrized on `[0, 1]`
    /// proportionally to arc length, up to `cap` of them. The `exhaustive`
    /// flag drops when a continuum exists (sphere antipodes) or the cap
    /// truncated the list.
    pub fn minimizing_geodesics(
        &self,
        x: &Point,
        y: &Point,
        cap: usize,
    ) -> Result<GeodesicFamily, GeometryError> {
        if cap == 0 {
            return Err(GeometryError::ZeroCap);
        }
        self.check_dim(&x.coords)?;
        self.check_dim(&y.coords)?;
        let (velocities, exhaustive) = self.minimizing_velocities(x, y, cap)?;
        let mut segments: Vec<GeodesicSegment> = Vec::new();
        for v in velocities {
            if segments.len() == cap {
                return Ok(GeodesicFamily { segments, exhaustive: false });
            }
            segments.push(GeodesicSegment::new(self.clone(), x.clone(), v, 1.0));
        }
        Ok(GeodesicFamily { segments, exhaustive })
    }

    /// Initial chart velocities of the minimizing geodesics `x -> y` over
    /// duration 1.
    fn minimizing_velocities(
        &self,
        x: &Point,
        y: &Point,
        cap: usize,
    ) -> Result<(Vec<Vec<f64>>, bool), GeometryError> {
        Ok(match self {
            ManifoldSpec::Euclidean { .. } => (vec![vecn::sub(&y.coords, &x.coords)], true),
            ManifoldSpec::FlatTorus { periods } => {
                let mut per_axis: Vec<Vec<f64>> = Vec::with_capacity(periods.len());
                for ((a, b), p) in x.coords.iter().zip(&y.coords).zip(periods) {
                    let mut best = f64::INFINITY;
                    let mut offsets: Vec<f64> = Vec::new();
                    for k in -2i64..=2 {
                        let off = b - a + (k as f64) * p;
                        if num::abs(off) < best - LEN_TOL * p {
                            best = num::abs(off);
                            offsets.clear();
                            offsets.push(off);
                        } else if num::abs(off) <= best + LEN_TOL * p {
                            if !offsets.iter().any(|o| num::abs(o - off) < LEN_TOL * p) {
                                offsets.push(off);
                            }
                        }
                    }
                    offsets.sort_by(f64::total_cmp);
                    per_axis.push(offsets);
                }
                let mut velocities = vec![Vec::new()];
                for axis in &per_axis {
                    let mut next = Vec::with_capacity(velocities.len() * axis.len());
                    for v in &velocities {
                        for off in axis {
                            let mut w = v.clone();
                            w.push(*off);
                            next.push(w);
                        }
                    }
                    velocities = next;
                }
                (velocities, true)
            }
            ManifoldSpec::Sphere2 { radius } => {
                let d = self.try_distance(x, y)?;
                if d < 1e-14 * radius {
                    (vec![vec![0.0; 3]], true)
                } else if core::f64::consts::PI * radius - d < 1e-9 * radius {
                    // Antipodal points: a continuum of meridians. Return a fan.
                    let e1 = orthonormal_to(&x.coords);
                    let e2 = cross(&vecn::scale(&x.coords, 1.0 / radius), &e1);
                    let mut fan = Vec::with_capacity(cap);
                    for k in 0..cap {
                        let ang = 2.0 * core::f64::consts::PI * (k as f64) / (cap as f64);
                        let w = vecn::add(
                            &vecn::scale(&e1, num::cos(ang)),
                            &vecn::scale(&e2, num::sin(ang)),
                        );
                        fan.push(vecn::scale(&w, d));
                    }
                    (fan, false)
                } else {
                    (vec![self.log(x, y)], true)
                }
            }
            ManifoldSpec::Product { left, right } => {
                let k = left.chart_dim();
                let (lv, le) = left.minimizing_velocities(
                    &Point::new(x.coords[..k].to_vec()),
                    &Point::new(y.coords[..k].to_vec()),
                    cap,
                )?;
                let (rv, re) = right.minimizing_velocities(
                    &Point::new(x.coords[k..].to_vec()),
                    &Point::new(y.coords[k..].to_vec()),
                    cap,
                )?;
                let mut out = Vec::with_capacity(lv.len() * rv.len());
                for a in &lv {
                    for b in &rv {
                        let mut v = a.clone();
                        v.extend_from_slice(b);
                        out.push(v);
                    }
                }
                (out, le && re)
            }
        })
    }

    /// Number of distinct minimizing geodesics between `x` and `y` (capped),
    /// counting by normalized initial velocity separation.
    pub fn minimizing_geodesic_count(
        &self,
        x: &Point,
        y: &Point,
        cap: usize,
    ) -> Result<(usize, bool), GeometryError> {
        let family = self.minimizing_geodesics(x, y, cap)?;
        let mut reps: Vec<Vec<f64>> = Vec::new();
        for seg in &family.segments {
            let n = vecn::norm(&seg.velocity).max(1e-300);
            let unit = vecn::scale(&seg.velocity, 1.0 / n);
            if !reps.iter().any(|r| vecn::dist(r, &unit) <= VELOCITY_DEDUP_TOL) {
                reps.push(unit);
            }
        }
        Ok((reps.len(), family.exhaustive))
    }
}

/// Wrap `d` into `(-p/2, p/2]`.
pub fn wrap_symmetric(d: f64, p: f64) -> f64 {
    let mut w = d % p;
    if w > p / 2.0 {
        w -= p;
    } else if w <= -p / 2.0 {
        w += p;
    }
    w
}

fn cross(a: &[f64], b: &[f64]) -> Vec<f64> {
    vec![
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// A deterministic unit vector orthogonal to `v` (3D).
fn orthonormal_to(v: &[f64]) -> Vec<f64> {
    let axis = if num::abs(v[0]) <= num::abs(v[1]) && num::abs(v[0]) <= num::abs(v[2]) {
        vec![1.0, 0.0, 0.0]
    } else if num::abs(v[1]) <= num::abs(v[2]) {
        vec![0.0, 1.0, 0.0]
    } else {
        vec![0.0, 0.0, 1.0]
    };
    let w = cross(v, &axis);
    let n = vecn::norm(&w);
    vecn::scale(&w, 1.0 / n)
}

/// A constant-speed geodesic segment, evaluable at any parameter in
/// `[0, duration]` (and beyond, by geodesic continuation).
#[derive(Debug, Clone)]
pub struct GeodesicSegment {
    pub manifold: ManifoldSpec,
    pub start: Point,
    pub velocity: Vec<f64>,
    pub duration: f64,
}

impl GeodesicSegment {
    pub fn new(manifold: ManifoldSpec, start: Point, velocity: Vec<f64>, duration: f64) -> Self {
        GeodesicSegment { manifold, start, velocity, duration }
    }

    pub fn point_at(&self, s: f64) -> Point {
        self.manifold.exp(&self.start, &self.velocity, s)
    }

    pub fn velocity_at(&self, s: f64) -> Vec<f64> {
        self.manifold.exp_velocity(&self.start, &self.velocity, s)
    }

    pub fn end(&self) -> Point {
        self.point_at(self.duration)
    }

    pub fn speed(&self) -> f64 {
        vecn::norm(&self.velocity)
    }

    pub fn length(&self) -> f64 {
        self.speed() * self.duration
    }

    /// Re-measure the segment length as a polyline with `subdivisions` chords.
    pub fn polyline_length(&self, subdivisions: usize) -> f64 {
        let mut total = 0.0;
        let mut prev = self.point_at(0.0);
        for i in 1..=subdivisions {
            let s = self.duration * (i as f64) / (subdivisions as f64);
            let next = self.point_at(s);
            total += self.manifold.distance(&prev, &next);
            prev = next;
        }
        total
    }

    /// Reparametrize onto a new duration, preserving the traced path.
    pub fn with_duration(&self, duration: f64) -> GeodesicSegment {
        assert!(duration > 0.0, "duration must be positive");
        GeodesicSegment {
            manifold: self.manifold.clone(),
            start: self.start.clone(),
            velocity: vecn::scale(&self.velocity, self.duration / duration),
            duration,
        }
    }
}

/// The result of enumerating minimizing geodesics.
#[derive(Debug, Clone)]
pub struct GeodesicFamily {
    pub segments: Vec<GeodesicSegment>,
    pub exhaustive: bool,
}

impl GeodesicFamily {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(m: &ManifoldSpec, c: &[f64]) -> Point {
        m.point(c).unwrap()
    }

    #[test]
    fn torus_minimal_lift_distance() {
        let m = ManifoldSpec::flat_torus(&[1.0]);
        let d = m.distance(&pt(&m, &[0.1]), &pt(&m, &[0.9]));
        assert!((d - 0.2).abs() < 1e-15);
    }

    #[test]
    fn product_distance_is_root_sum_square() {
        let m = ManifoldSpec::product(ManifoldSpec::euclidean(1), ManifoldSpec::euclidean(1));
        let d = m.distance(&pt(&m, &[0.0, 0.0]), &pt(&m, &[3.0, 4.0]));
        assert!((d - 5.0).abs() < 1e-15);
    }

    #[test]
    fn sphere_antipodal_distance() {
        let m = ManifoldSpec::unit_sphere();
        let d = m.distance(&pt(&m, &[0.0, 0.0, 1.0]), &pt(&m, &[0.0, 0.0, -1.0]));
        assert!((d - core::f64::consts::PI).abs() < 1e-14);
    }

    #[test]
    fn distance_dimension_mismatch_is_an_error() {
        let m = ManifoldSpec::euclidean(2);
        let x = Point::new(vec![0.0, 0.0]);
        let y = Point::new(vec![0.0, 0.0, 0.0]);
        assert!(matches!(
            m.try_distance(&x, &y),
            Err(GeometryError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn torus_half_period_has_two_geodesics() {
        let m = ManifoldSpec::flat_torus(&[1.0, 1.0]);
        let f = m
            .minimizing_geodesics(&pt(&m, &[0.0, 0.0]), &pt(&m, &[0.5, 0.0]), 16)
            .unwrap();
        assert_eq!(f.len(), 2);
        assert!(f.exhaustive);
        for seg in &f.segments {
            assert!((seg.length() - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn torus_double_half_period_has_four_geodesics() {
        let m = ManifoldSpec::flat_torus(&[1.0, 1.0]);
        let f = m
            .minimizing_geodesics(&pt(&m, &[0.0, 0.0]), &pt(&m, &[0.5, 0.5]), 16)
            .unwrap();
        assert_eq!(f.len(), 4);
        assert!(f.exhaustive);
    }

    #[test]
    fn sphere_antipodes_yield_capped_fan() {
        let m = ManifoldSpec::unit_sphere();
        let f = m
            .minimizing_geodesics(&pt(&m, &[0.0, 0.0, 1.0]), &pt(&m, &[0.0, 0.0, -1.0]), 8)
            .unwrap();
        assert_eq!(f.len(), 8);
        assert!(!f.exhaustive);
        for seg in &f.segments {
            assert!((seg.length() - core::f64::consts::PI).abs() < 1e-12);
            let end = seg.end();
            assert!(m.distance(&end, &pt(&m, &[0.0, 0.0, -1.0])) < 1e-9);
        }
    }

    #[test]
    fn geodesic_cap_zero_is_an_error() {
        let m = ManifoldSpec::euclidean(2);
        let x = pt(&m, &[0.0, 0.0]);
        assert!(matches!(m.minimizing_geodesics(&x, &x, 0), Err(GeometryError::ZeroCap)));
    }

    #[test]
    fn diagonal_distance_euclidean() {
        let m = ManifoldSpec::euclidean(2);
        let d = m.diagonal_distance(&pt(&m, &[0.0, 0.0]), &pt(&m, &[2.0, 0.0]));
        assert!((d - core::f64::consts::SQRT_2).abs() < 1e-14);
    }

    #[test]
    fn geodesic_segment_constant_speed() {
        let m = ManifoldSpec::unit_sphere();
        let x = pt(&m, &[1.0, 0.0, 0.0]);
        let y = pt(&m, &[0.0, 1.0, 0.0]);
        let f = m.minimizing_geodesics(&x, &y, 4).unwrap();
        let seg = &f.segments[0];
        let s0 = seg.speed();
        for i in 0..=20 {
            let s = seg.duration * (i as f64) / 20.0;
            let v = vecn::norm(&seg.velocity_at(s));
            assert!((v - s0).abs() <= 1e-9 * s0.max(1.0));
        }
        assert!((seg.length() - m.distance(&x, &y)).abs() < 1e-12);
    }
}

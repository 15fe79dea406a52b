//! Tonelli Lagrangians, curve actions, minimal actions and the quantitative
//! constants used by the localization estimates.
//!
//! Two Lagrangian kinds are supported: the kinetic `L = |v|^2/2` (exact
//! minimal action `d(x,y)^2/(2t)` on every supported manifold) and mechanical
//! `L = |v|^2/2 - V(x)` with a bounded closed-form potential on flat
//! manifolds, where the minimal action is computed by the direct method on
//! discretized curves (damped Newton over interior nodes with a block
//! tridiagonal Hessian).

pub mod expr;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::geometry::{GeodesicSegment, ManifoldSpec, Point};
use crate::num;
use crate::vecn;

pub use expr::{ExprError, ScalarField};

#[derive(Debug, Clone, PartialEq)]
pub enum TonelliError {
    InvalidCurve(String),
    InvalidArgument(String),
    Unsupported(String),
    NoConvergence { value: f64, residual: f64 },
    StepUnderflow,
}

impl fmt::Display for TonelliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TonelliError::InvalidCurve(m) => write!(f, "invalid curve: {m}"),
            TonelliError::InvalidArgument(m) => write!(f, "invalid argument: {m}"),
            TonelliError::Unsupported(m) => write!(f, "unsupported: {m}"),
            TonelliError::NoConvergence { value, residual } => write!(
                f,
                "direct method did not converge (best value {value}, residual {residual})"
            ),
            TonelliError::StepUnderflow => write!(f, "integrator step size underflow"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for TonelliError {}

/// Supported Lagrangian kinds.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "kebab-case"))]
pub enum TonelliLagrangian {
    Kinetic,
    Mechanical { potential: ScalarField },
}

impl TonelliLagrangian {
    pub fn kinetic() -> Self {
        TonelliLagrangian::Kinetic
    }

    pub fn mechanical(potential_src: &str) -> Result<Self, ExprError> {
        Ok(TonelliLagrangian::Mechanical { potential: ScalarField::parse(potential_src)? })
    }

    pub fn is_kinetic(&self) -> bool {
        matches!(self, TonelliLagrangian::Kinetic)
    }

    /// Mechanical Lagrangians are only supported on flat charts.
    pub fn validate_on(&self, m: &ManifoldSpec) -> Result<(), TonelliError> {
        match self {
            TonelliLagrangian::Kinetic => Ok(()),
            TonelliLagrangian::Mechanical { potential } => {
                match m {
                    ManifoldSpec::Euclidean { .. } => {}
                    ManifoldSpec::FlatTorus { periods } => {
                        // The potential must descend to the quotient.
                        for axis in 0..periods.len() {
                            for k in 0..5 {
                                let mut x = vec![0.0; periods.len()];
                                for (i, xi) in x.iter_mut().enumerate() {
                                    *xi = 0.137 + 0.21 * ((i + k) as f64);
                                }
                                let v0 = potential.value(&x);
                                x[axis] += periods[axis];
                                let v1 = potential.value(&x);
                                if num::abs(v0 - v1) > 1e-9 * (1.0 + num::abs(v0)) {
                                    return Err(TonelliError::InvalidArgument(format!(
                                        "potential is not periodic along torus axis {axis}"
                                    )));
                                }
                            }
                        }
                    }
                    _ => {
                        return Err(TonelliError::Unsupported(
                            "mechanical Lagrangians are only supported on Euclidean and flat torus charts".into(),
                        ))
                    }
                }
                if potential.needed_dim() > m.chart_dim() {
                    return Err(TonelliError::InvalidArgument(format!(
                        "potential uses coordinate x{} but the chart has dimension {}",
                        potential.needed_dim() - 1,
                        m.chart_dim()
                    )));
                }
                Ok(())
            }
        }
    }

    /// `L(x, v)`.
    pub fn value(&self, x: &[f64], v: &[f64]) -> f64 {
        let kin = 0.5 * vecn::norm_sq(v);
        match self {
            TonelliLagrangian::Kinetic => kin,
            TonelliLagrangian::Mechanical { potential } => kin - potential.value(x),
        }
    }

    /// Fiber derivative `∂L/∂v(x, v)`.
    pub fn fiber_derivative(&self, _x: &[f64], v: &[f64]) -> Vec<f64> {
        v.to_vec()
    }

    /// Base derivative `∂L/∂x(x, v)`.
    pub fn base_derivative(&self, x: &[f64], _v: &[f64]) -> Vec<f64> {
        match self {
            TonelliLagrangian::Kinetic => vec![0.0; x.len()],
            TonelliLagrangian::Mechanical { potential } => {
                vecn::scale(&potential.gradient(x), -1.0)
            }
        }
    }

    /// Legendre-dual Hamiltonian `H(x, p)`.
    pub fn hamiltonian(&self, x: &[f64], p: &[f64]) -> f64 {
        let kin = 0.5 * vecn::norm_sq(p);
        match self {
            TonelliLagrangian::Kinetic => kin,
            TonelliLagrangian::Mechanical { potential } => kin + potential.value(x),
        }
    }

    /// Range `(min V, max V)` of the potential over the manifold, sampled on a
    /// dense grid of the fundamental domain (a fixed box for Euclidean
    /// charts). Returns `(0, 0)` for the kinetic kind.
    pub fn potential_range(&self, m: &ManifoldSpec) -> (f64, f64) {
        let potential = match self {
            TonelliLagrangian::Kinetic => return (0.0, 0.0),
            TonelliLagrangian::Mechanical { potential } => potential,
        };
        let dim = m.chart_dim();
        let (lo, hi): (Vec<f64>, Vec<f64>) = match m {
            ManifoldSpec::FlatTorus { periods } => {
                (vec![0.0; dim], periods.clone())
            }
            _ => (vec![-8.0; dim], vec![8.0; dim]),
        };
        let per_axis = match dim {
            1 => 4096,
            2 => 192,
            _ => 24,
        };
        let mut min_v = f64::INFINITY;
        let mut max_v = f64::NEG_INFINITY;
        let mut idx = vec![0usize; dim];
        loop {
            let x: Vec<f64> = (0..dim)
                .map(|i| lo[i] + (hi[i] - lo[i]) * (idx[i] as f64) / (per_axis as f64))
                .collect();
            let v = potential.value(&x);
            min_v = min_v.min(v);
            max_v = max_v.max(v);
            let mut axis = 0;
            loop {
                if axis == dim {
                    return (min_v, max_v);
                }
                idx[axis] += 1;
                if idx[axis] <= per_axis {
                    break;
                }
                idx[axis] = 0;
                axis += 1;
            }
        }
    }
}

/// Superlinearity and fiber-bound constants.
#[derive(Debug, Clone, PartialEq)]
pub struct TonelliConstants {
    /// `(K, C(K))` pairs with `C(K) = sup K|v| - L(x, v)`.
    pub c: Vec<(f64, f64)>,
    /// `(R, A(R))` pairs with `A(R) = sup { L(x, v) : |v| <= R }`.
    pub a: Vec<(f64, f64)>,
    /// `A(0)`.
    pub a0: f64,
}

/// `C(K) = sup_{x,v} K|v| - L(x,v)`; closed form for the supported kinds.
pub fn c_constant(lagrangian: &TonelliLagrangian, m: &ManifoldSpec, k: f64) -> f64 {
    let (_, max_v) = lagrangian.potential_range(m);
    0.5 * k * k + max_v
}

/// `A(R) = sup { L(x,v) : |v| <= R }`; closed form for the supported kinds.
pub fn a_constant(lagrangian: &TonelliLagrangian, m: &ManifoldSpec, r: f64) -> f64 {
    let (min_v, _) = lagrangian.potential_range(m);
    0.5 * r * r - min_v
}

/// `C(K)` by brute sup over a radial velocity grid; cross-check oracle for
/// [`c_constant`].
pub fn numeric_c_constant(lagrangian: &TonelliLagrangian, m: &ManifoldSpec, k: f64) -> f64 {
    let (_, max_v) = lagrangian.potential_range(m);
    let top = 10.0 * k.max(1.0);
    let mut best = f64::NEG_INFINITY;
    for i in 0..=10_000 {
        let s = top * (i as f64) / 10_000.0;
        best = best.max(k * s - 0.5 * s * s);
    }
    best + max_v
}

pub fn constants(
    lagrangian: &TonelliLagrangian,
    m: &ManifoldSpec,
    k_list: &[f64],
    r_list: &[f64],
) -> TonelliConstants {
    TonelliConstants {
        c: k_list.iter().map(|&k| (k, c_constant(lagrangian, m, k))).collect(),
        a: r_list.iter().map(|&r| (r, a_constant(lagrangian, m, r))).collect(),
        a0: a_constant(lagrangian, m, 0.0),
    }
}

/// `eta(A, r) = |A| / C(2|A|/r)`: curves of action at most `A` over a time
/// span at most `eta` have length at most `r`. Returns `+inf` when
/// `C(2|A|/r) = 0` (kinetic with `A = 0`).
pub fn eta(lagrangian: &TonelliLagrangian, m: &ManifoldSpec, a_abs: f64, r: f64) -> f64 {
    assert!(r > 0.0, "eta requires r > 0");
    let a = num::abs(a_abs);
    let c = c_constant(lagrangian, m, 2.0 * a / r);
    if c <= 0.0 {
        f64::INFINITY
    } else {
        a / c
    }
}

/// Step bound below which maximizers of the positive operator stay within
/// distance `r`: `s0 = min(eta(B' - A' + 1, r/2), t)` where `A' = A - |A(0)| t`
/// and `B' = B + |A(0)| t` absorb the zero-velocity action drift. `A` and `B`
/// are window bounds for the evolved solution (inf of `u`, sup of `T^+_t u`).
pub fn s0(
    lagrangian: &TonelliLagrangian,
    m: &ManifoldSpec,
    a_low: f64,
    b_high: f64,
    t: f64,
    r: f64,
) -> f64 {
    assert!(t > 0.0 && r > 0.0, "s0 requires t > 0 and r > 0");
    let a0 = num::abs(a_constant(lagrangian, m, 0.0));
    let a_bar = a_low - a0 * t;
    let b_bar = b_high + a0 * t;
    eta(lagrangian, m, b_bar - a_bar + 1.0, r / 2.0).min(t)
}

/// A time-parametrized polyline on a manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteCurve {
    times: Vec<f64>,
    points: Vec<Point>,
}

impl DiscreteCurve {
    pub fn new(times: Vec<f64>, points: Vec<Point>) -> Result<Self, TonelliError> {
        if times.len() != points.len() {
            return Err(TonelliError::InvalidCurve(format!(
                "{} times vs {} points",
                times.len(),
                points.len()
            )));
        }
        if times.len() < 2 {
            return Err(TonelliError::InvalidCurve("need at least two nodes".into()));
        }
        for w in times.windows(2) {
            if !(w[1] > w[0]) {
                return Err(TonelliError::InvalidCurve(
                    "times must be strictly increasing".into(),
                ));
            }
        }
        let dim = points[0].dim();
        if points.iter().any(|p| p.dim() != dim) {
            return Err(TonelliError::InvalidCurve("inconsistent point dimensions".into()));
        }
        Ok(DiscreteCurve { times, points })
    }

    /// Sample a geodesic segment on `n` uniform sub-intervals, with the time
    /// axis translated to start at `t0`.
    pub fn from_geodesic(seg: &GeodesicSegment, n: usize, t0: f64) -> Self {
        assert!(n >= 1);
        let mut times = Vec::with_capacity(n + 1);
        let mut points = Vec::with_capacity(n + 1);
        for i in 0..=n {
            let s = seg.duration * (i as f64) / (n as f64);
            times.push(t0 + s);
            points.push(seg.point_at(s));
        }
        DiscreteCurve { times, points }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn segments(&self) -> usize {
        self.times.len() - 1
    }

    pub fn start_time(&self) -> f64 {
        self.times[0]
    }

    pub fn end_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn duration(&self) -> f64 {
        self.end_time() - self.start_time()
    }

    pub fn start(&self) -> &Point {
        &self.points[0]
    }

    pub fn end(&self) -> &Point {
        self.points.last().unwrap()
    }

    /// Chart velocity of segment `i` (through the manifold log map).
    pub fn segment_velocity(&self, m: &ManifoldSpec, i: usize) -> Vec<f64> {
        let dt = self.times[i + 1] - self.times[i];
        vecn::scale(&m.log(&self.points[i], &self.points[i + 1]), 1.0 / dt)
    }

    /// Terminal velocity (of the last segment, transported to the endpoint).
    pub fn terminal_velocity(&self, m: &ManifoldSpec) -> Vec<f64> {
        let i = self.segments() - 1;
        let v = self.segment_velocity(m, i);
        let dt = self.times[i + 1] - self.times[i];
        m.exp_velocity(&self.points[i], &v, dt)
    }

    /// Total length measured through the manifold distance.
    pub fn length(&self, m: &ManifoldSpec) -> f64 {
        self.points
            .windows(2)
            .map(|w| m.distance(&w[0], &w[1]))
            .sum()
    }

    /// Point at time `t` by piecewise geodesic interpolation.
    pub fn point_at(&self, m: &ManifoldSpec, t: f64) -> Point {
        if t <= self.start_time() {
            return self.start().clone();
        }
        if t >= self.end_time() {
            return self.end().clone();
        }
        let i = match self.times.binary_search_by(|x| x.total_cmp(&t)) {
            Ok(i) => return self.points[i].clone(),
            Err(i) => i - 1,
        };
        let v = self.segment_velocity(m, i);
        m.exp(&self.points[i], &v, t - self.times[i])
    }

    /// Restriction to `[self.start_time(), t]`, cutting the last segment.
    pub fn truncated(&self, m: &ManifoldSpec, t: f64) -> DiscreteCurve {
        let mut times = Vec::new();
        let mut points = Vec::new();
        for (ti, pi) in self.times.iter().zip(&self.points) {
            if *ti < t - 1e-15 {
                times.push(*ti);
                points.push(pi.clone());
            }
        }
        times.push(t);
        points.push(self.point_at(m, t));
        DiscreteCurve { times, points }
    }
}

/// Midpoint-rule action of a discrete curve: segment velocities through the
/// log map, potential evaluated at geodesic midpoints.
pub fn action(lagrangian: &TonelliLagrangian, m: &ManifoldSpec, curve: &DiscreteCurve) -> f64 {
    let mut total = 0.0;
    for i in 0..curve.segments() {
        let dt = curve.times[i + 1] - curve.times[i];
        let v = curve.segment_velocity(m, i);
        let mid = m.exp(&curve.points[i], &v, dt / 2.0);
        total += dt * lagrangian.value(&mid.coords, &v);
    }
    total
}

/// Sup-norm defect of the discrete Euler-Lagrange equation at interior nodes:
/// `|Δ(∂_v L)/Δt - avg ∂_x L|`, the stationarity defect of the midpoint
/// quadrature used by [`action`]. Zero (to discretization order) on extremals.
pub fn euler_lagrange_residual(
    lagrangian: &TonelliLagrangian,
    m: &ManifoldSpec,
    curve: &DiscreteCurve,
) -> f64 {
    assert!(curve.segments() >= 2, "residual needs at least two segments");
    let mut worst: f64 = 0.0;
    for j in 1..curve.segments() {
        let dt_prev = curve.times[j] - curve.times[j - 1];
        let dt_next = curve.times[j + 1] - curve.times[j];
        let dt_bar = 0.5 * (dt_prev + dt_next);
        let v_prev = curve.segment_velocity(m, j - 1);
        let v_next = curve.segment_velocity(m, j);
        let mid_prev = m.exp(&curve.points[j - 1], &v_prev, dt_prev / 2.0);
        let mid_next = m.exp(&curve.points[j], &v_next, dt_next / 2.0);
        // Transport the previous fiber derivative to the node.
        let p_prev = lagrangian
            .fiber_derivative(&mid_prev.coords, &m.exp_velocity(&curve.points[j - 1], &v_prev, dt_prev));
        let p_next = lagrangian.fiber_derivative(&mid_next.coords, &v_next);
        let dpdt = vecn::scale(&vecn::sub(&p_next, &p_prev), 1.0 / dt_bar);
        let fx = vecn::scale(
            &vecn::add(
                &lagrangian.base_derivative(&mid_prev.coords, &v_prev),
                &lagrangian.base_derivative(&mid_next.coords, &v_next),
            ),
            0.5,
        );
        let mut defect = vecn::sub(&dpdt, &fx);
        if let ManifoldSpec::Sphere2 { radius } = m {
            // Remove the constraint (normal) component.
            let x = &curve.points[j].coords;
            let radial = vecn::dot(&defect, x) / (radius * radius);
            defect = vecn::axpy(&defect, -radial, x);
        }
        worst = worst.max(vecn::norm(&defect));
    }
    worst
}

/// Options for [`minimal_action`].
#[derive(Debug, Clone)]
pub struct MinimalActionOptions {
    /// Number of curve segments in the discretization.
    pub segments: usize,
    /// Skip the kinetic closed form and run the direct method regardless.
    pub force_direct: bool,
    pub max_iterations: usize,
    /// Convergence threshold on the sup norm of the discrete action gradient.
    pub gradient_tol: f64,
}

impl Default for MinimalActionOptions {
    fn default() -> Self {
        MinimalActionOptions {
            segments: 128,
            force_direct: false,
            max_iterations: 200,
            gradient_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MinimalAction {
    pub value: f64,
    pub curve: DiscreteCurve,
}

/// Minimal action `h_t(x, y)` together with a minimizer.
///
/// Kinetic Lagrangians use the closed form `d(x,y)^2/(2t)` with a geodesic
/// polyline; mechanical ones run the direct method from every minimizing
/// geodesic initialization.
pub fn minimal_action(
    lagrangian: &TonelliLagrangian,
    m: &ManifoldSpec,
    x: &Point,
    y: &Point,
    t: f64,
    opts: &MinimalActionOptions,
) -> Result<MinimalAction, TonelliError> {
    if !(t > 0.0) {
        return Err(TonelliError::InvalidArgument("time horizon must be positive".into()));
    }
    if opts.segments == 0 {
        return Err(TonelliError::InvalidArgument("need at least one segment".into()));
    }
    lagrangian.validate_on(m)?;
    if lagrangian.is_kinetic() && !opts.force_direct {
        let family = m
            .minimizing_geodesics(x, y, 4)
            .map_err(|e| TonelliError::InvalidArgument(format!("{e}")))?;
        let seg = family.segments[0].with_duration(t);
        let d = m.distance(x, y);
        return Ok(MinimalAction {
            value: d * d / (2.0 * t),
            curve: DiscreteCurve::from_geodesic(&seg, opts.segments, 0.0),
        });
    }
    if matches!(m, ManifoldSpec::Sphere2 { .. } | ManifoldSpec::Product { .. }) {
        return Err(TonelliError::Unsupported(
            "the direct method runs on Euclidean and flat torus charts only".into(),
        ));
    }
    direct_method(lagrangian, m, x, y, t, opts)
}

/// Damped-Newton direct method over interior nodes in the chart lift.
fn direct_method(
    lagrangian: &TonelliLagrangian,
    m: &ManifoldSpec,
    x: &Point,
    y: &Point,
    t: f64,
    opts: &MinimalActionOptions,
) -> Result<MinimalAction, TonelliError> {
    let n = opts.segments;
    let family = m
        .minimizing_geodesics(x, y, 16)
        .map_err(|e| TonelliError::InvalidArgument(format!("{e}")))?;
    let mut best: Option<(f64, Vec<Vec<f64>>, f64)> = None;
    for seg in &family.segments {
        // Straight initialization in the lift along this geodesic.
        let mut nodes: Vec<Vec<f64>> = (0..=n)
            .map(|i| {
                let s = t * (i as f64) / (n as f64);
                vecn::axpy(&x.coords, s, &vecn::scale(&seg.velocity, 1.0 / t))
            })
            .collect();
        let (value, grad_norm) =
            newton_minimize(lagrangian, &mut nodes, t, opts.max_iterations, opts.gradient_tol);
        match &best {
            Some((bv, _, _)) if *bv <= value => {}
            _ => best = Some((value, nodes, grad_norm)),
        }
    }
    let (value, nodes, grad_norm) = best.expect("at least one geodesic initialization");
    let times: Vec<f64> = (0..=n).map(|i| t * (i as f64) / (n as f64)).collect();
    let points: Vec<Point> = nodes
        .iter()
        .map(|q| m.point(q).expect("lifted node"))
        .collect();
    let curve = DiscreteCurve::new(times, points)?;
    if grad_norm > opts.gradient_tol {
        let residual = euler_lagrange_residual(lagrangian, m, &curve);
        return Err(TonelliError::NoConvergence { value, residual });
    }
    Ok(MinimalAction { value, curve })
}

/// Minimize the discretized action over interior nodes (endpoints pinned).
/// Returns the final value and gradient sup norm.
fn newton_minimize(
    lagrangian: &TonelliLagrangian,
    nodes: &mut Vec<Vec<f64>>,
    t: f64,
    max_iterations: usize,
    tol: f64,
) -> (f64, f64) {
    let n = nodes.len() - 1;
    let dim = nodes[0].len();
    let dt = t / (n as f64);
    let value = |q: &[Vec<f64>]| -> f64 {
        let mut e = 0.0;
        for i in 0..n {
            let v = vecn::scale(&vecn::sub(&q[i + 1], &q[i]), 1.0 / dt);
            let mid = vecn::scale(&vecn::add(&q[i], &q[i + 1]), 0.5);
            e += dt * lagrangian.value(&mid, &v);
        }
        e
    };
    let gradient = |q: &[Vec<f64>]| -> Vec<Vec<f64>> {
        let mut g = vec![vec![0.0; dim]; n - 1];
        for j in 1..n {
            for d in 0..dim {
                g[j - 1][d] = (2.0 * q[j][d] - q[j - 1][d] - q[j + 1][d]) / dt;
            }
            if let TonelliLagrangian::Mechanical { potential } = lagrangian {
                let mid_prev = vecn::scale(&vecn::add(&q[j - 1], &q[j]), 0.5);
                let mid_next = vecn::scale(&vecn::add(&q[j], &q[j + 1]), 0.5);
                let gp = potential.gradient(&mid_prev);
                let gn = potential.gradient(&mid_next);
                for d in 0..dim {
                    g[j - 1][d] -= dt * 0.5 * (gp[d] + gn[d]);
                }
            }
        }
        g
    };
    let mut e = value(nodes);
    for _ in 0..max_iterations {
        let g = gradient(nodes);
        let grad_norm = g.iter().map(|r| vecn::max_abs(r)).fold(0.0, f64::max);
        if grad_norm <= tol {
            break;
        }
        let step = newton_direction(lagrangian, nodes, dt).unwrap_or_else(|| {
            g.iter().map(|r| vecn::scale(r, -dt)).collect()
        });
        let descent: f64 = step
            .iter()
            .zip(&g)
            .map(|(s, gr)| vecn::dot(s, gr))
            .sum();
        let step = if descent < 0.0 {
            step
        } else {
            g.iter().map(|r| vecn::scale(r, -dt)).collect()
        };
        let descent: f64 = step.iter().zip(&g).map(|(s, gr)| vecn::dot(s, gr)).sum();
        // Armijo backtracking.
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<Vec<f64>> = nodes
                .iter()
                .enumerate()
                .map(|(i, q)| {
                    if i == 0 || i == n {
                        q.clone()
                    } else {
                        vecn::axpy(q, alpha, &step[i - 1])
                    }
                })
                .collect();
            let et = value(&trial);
            if et <= e + 1e-4 * alpha * descent {
                *nodes = trial;
                e = et;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let g = gradient(nodes);
    let grad_norm = g.iter().map(|r| vecn::max_abs(r)).fold(0.0, f64::max);
    (e, grad_norm)
}

/// Solve the block tridiagonal Newton system `H step = -g`. Returns `None`
/// when a pivot block is singular or not positive definite enough to trust.
fn newton_direction(
    lagrangian: &TonelliLagrangian,
    nodes: &[Vec<f64>],
    dt: f64,
) -> Option<Vec<Vec<f64>>> {
    let n = nodes.len() - 1;
    let dim = nodes[0].len();
    let m = n - 1;
    let zero = vec![vec![0.0; dim]; dim];
    let mut diag = vec![zero.clone(); m];
    let mut upper = vec![zero.clone(); m.saturating_sub(1)];
    for j in 1..n {
        let mut d = zero.clone();
        for k in 0..dim {
            d[k][k] = 2.0 / dt;
        }
        if let TonelliLagrangian::Mechanical { potential } = lagrangian {
            let mid_prev = vecn::scale(&vecn::add(&nodes[j - 1], &nodes[j]), 0.5);
            let mid_next = vecn::scale(&vecn::add(&nodes[j], &nodes[j + 1]), 0.5);
            let hp = potential.hessian(&mid_prev);
            let hn = potential.hessian(&mid_next);
            for a in 0..dim {
                for b in 0..dim {
                    d[a][b] -= dt * 0.25 * (hp[a][b] + hn[a][b]);
                }
            }
        }
        diag[j - 1] = d;
        if j < n - 1 {
            let mut u = zero.clone();
            for k in 0..dim {
                u[k][k] = -1.0 / dt;
            }
            if let TonelliLagrangian::Mechanical { potential } = lagrangian {
                let mid = vecn::scale(&vecn::add(&nodes[j], &nodes[j + 1]), 0.5);
                let h = potential.hessian(&mid);
                for a in 0..dim {
                    for b in 0..dim {
                        u[a][b] -= dt * 0.25 * h[a][b];
                    }
                }
            }
            upper[j - 1] = u;
        }
    }
    // Right-hand side: -gradient.
    let mut rhs: Vec<Vec<f64>> = Vec::with_capacity(m);
    for j in 1..n {
        let mut g = vec![0.0; dim];
        for d in 0..dim {
            g[d] = (2.0 * nodes[j][d] - nodes[j - 1][d] - nodes[j + 1][d]) / dt;
        }
        if let TonelliLagrangian::Mechanical { potential } = lagrangian {
            let mid_prev = vecn::scale(&vecn::add(&nodes[j - 1], &nodes[j]), 0.5);
            let mid_next = vecn::scale(&vecn::add(&nodes[j], &nodes[j + 1]), 0.5);
            let gp = potential.gradient(&mid_prev);
            let gn = potential.gradient(&mid_next);
            for d in 0..dim {
                g[d] -= dt * 0.5 * (gp[d] + gn[d]);
            }
        }
        rhs.push(vecn::scale(&g, -1.0));
    }
    // Symmetric block Thomas sweep (lower blocks are transposes of the upper).
    let mut diag_fact = diag;
    let mut rhs_fact = rhs;
    for i in 1..m {
        // factor = upper[i-1]^T * inv(diag[i-1])
        let inv = mat_inverse(&diag_fact[i - 1])?;
        let lower = mat_transpose(&upper[i - 1]);
        let factor = mat_mul(&lower, &inv);
        let corr = mat_mul(&factor, &upper[i - 1]);
        for a in 0..dim {
            for b in 0..dim {
                diag_fact[i][a][b] -= corr[a][b];
            }
        }
        let rc = mat_vec(&factor, &rhs_fact[i - 1]);
        for a in 0..dim {
            rhs_fact[i][a] -= rc[a];
        }
    }
    let mut sol = vec![vec![0.0; dim]; m];
    let inv = mat_inverse(&diag_fact[m - 1])?;
    sol[m - 1] = mat_vec(&inv, &rhs_fact[m - 1]);
    for i in (0..m - 1).rev() {
        let mut r = rhs_fact[i].clone();
        let uc = mat_vec(&upper[i], &sol[i + 1]);
        for a in 0..dim {
            r[a] -= uc[a];
        }
        let inv = mat_inverse(&diag_fact[i])?;
        sol[i] = mat_vec(&inv, &r);
    }
    Some(sol)
}

fn mat_mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut c = vec![vec![0.0; n]; n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i][k];
            if aik != 0.0 {
                for j in 0..n {
                    c[i][j] += aik * b[k][j];
                }
            }
        }
    }
    c
}

fn mat_transpose(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut t = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            t[j][i] = a[i][j];
        }
    }
    t
}

fn mat_vec(a: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    a.iter().map(|row| vecn::dot(row, v)).collect()
}

/// Dense inverse by Gauss-Jordan with partial pivoting (tiny blocks only).
fn mat_inverse(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut aug: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let mut pivot = col;
        for row in col + 1..n {
            if num::abs(aug[row][col]) > num::abs(aug[pivot][col]) {
                pivot = row;
            }
        }
        if num::abs(aug[pivot][col]) < 1e-300 {
            return None;
        }
        aug.swap(col, pivot);
        let p = aug[col][col];
        for v in aug[col].iter_mut() {
            *v /= p;
        }
        for row in 0..n {
            if row != col {
                let f = aug[row][col];
                if f != 0.0 {
                    for j in 0..2 * n {
                        let u = aug[col][j];
                        aug[row][j] -= f * u;
                    }
                }
            }
        }
    }
    Some(aug.into_iter().map(|row| row[n..].to_vec()).collect())
}

/// One `(time, position lift, velocity)` state of the extremal flow.
#[derive(Debug, Clone)]
pub struct FlowState {
    pub time: f64,
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
}

/// Integrate the Euler-Lagrange flow from a phase state with classical RK4
/// (exact geodesic flow for the kinetic kind). Positions are chart lifts.
pub fn integrate_extremal(
    lagrangian: &TonelliLagrangian,
    m: &ManifoldSpec,
    start: FlowState,
    duration: f64,
    steps: usize,
) -> Result<Vec<FlowState>, TonelliError> {
    if !(duration > 0.0) || steps == 0 {
        return Err(TonelliError::InvalidArgument(
            "extension duration and step count must be positive".into(),
        ));
    }
    let h = duration / (steps as f64);
    if h < 1e-12 {
        return Err(TonelliError::StepUnderflow);
    }
    let mut out = Vec::with_capacity(steps + 1);
    out.push(start.clone());
    match lagrangian {
        TonelliLagrangian::Kinetic => {
            let base = m.point(&start.position).expect("lifted start");
            for i in 1..=steps {
                let s = h * (i as f64);
                out.push(FlowState {
                    time: start.time + s,
                    position: m.exp(&base, &start.velocity, s).coords,
                    velocity: m.exp_velocity(&base, &start.velocity, s),
                });
            }
        }
        TonelliLagrangian::Mechanical { potential } => {
            lagrangian.validate_on(m)?;
            let accel = |x: &[f64]| vecn::scale(&potential.gradient(x), -1.0);
            let mut q = start.position.clone();
            let mut vel = start.velocity.clone();
            for i in 1..=steps {
                let k1q = vel.clone();
                let k1v = accel(&q);
                let k2q = vecn::axpy(&vel, 0.5 * h, &k1v);
                let k2v = accel(&vecn::axpy(&q, 0.5 * h, &k1q));
                let k3q = vecn::axpy(&vel, 0.5 * h, &k2v);
                let k3v = accel(&vecn::axpy(&q, 0.5 * h, &k2q));
                let k4q = vecn::axpy(&vel, h, &k3v);
                let k4v = accel(&vecn::axpy(&q, h, &k3q));
                for d in 0..q.len() {
                    q[d] += h / 6.0 * (k1q[d] + 2.0 * k2q[d] + 2.0 * k3q[d] + k4q[d]);
                    vel[d] += h / 6.0 * (k1v[d] + 2.0 * k2v[d] + 2.0 * k3v[d] + k4v[d]);
                }
                out.push(FlowState {
                    time: start.time + h * (i as f64),
                    position: q.clone(),
                    velocity: vel.clone(),
                });
            }
        }
    }
    Ok(out)
}

/// Extend an extremal past its endpoint by `extra` time.
///
/// The caller guarantees the input is an extremal (Euler-Lagrange residual at
/// the `1e-5` level). Kinetic curves continue along the exact geodesic flow;
/// mechanical ones integrate the Euler-Lagrange ODE with classical RK4 at the
/// trailing node spacing.
pub fn extend_extremal(
    lagrangian: &TonelliLagrangian,
    m: &ManifoldSpec,
    curve: &DiscreteCurve,
    extra: f64,
) -> Result<DiscreteCurve, TonelliError> {
    if !(extra > 0.0) {
        return Err(TonelliError::InvalidArgument("extension time must be positive".into()));
    }
    let dt_tail = curve.times[curve.times.len() - 1] - curve.times[curve.times.len() - 2];
    let steps = (extra / dt_tail).ceil().max(1.0) as usize;
    let start = FlowState {
        time: curve.end_time(),
        position: curve.end().coords.clone(),
        velocity: curve.terminal_velocity(m),
    };
    let flow = integrate_extremal(lagrangian, m, start, extra, steps)?;
    let mut times = curve.times.clone();
    let mut points = curve.points.clone();
    for state in flow.iter().skip(1) {
        times.push(state.time);
        points.push(m.point(&state.position).expect("lifted node"));
    }
    DiscreteCurve::new(times, points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(m: &ManifoldSpec, c: &[f64]) -> Point {
        m.point(c).unwrap()
    }

    #[test]
    fn kinetic_straight_line_action() {
        let m = ManifoldSpec::euclidean(1);
        let lagrangian = TonelliLagrangian::kinetic();
        let seg = GeodesicSegment::new(m.clone(), pt(&m, &[0.0]), vec![2.0], 1.0);
        let curve = DiscreteCurve::from_geodesic(&seg, 100, 0.0);
        let a = action(&lagrangian, &m, &curve);
        assert!((a - 2.0).abs() < 1e-8, "{a}");
    }

    #[test]
    fn constant_curve_has_zero_kinetic_action() {
        let m = ManifoldSpec::euclidean(2);
        let lagrangian = TonelliLagrangian::kinetic();
        let times = vec![0.0, 0.5, 1.0];
        let p = pt(&m, &[0.3, -0.4]);
        let curve = DiscreteCurve::new(times, vec![p.clone(), p.clone(), p]).unwrap();
        assert_eq!(action(&lagrangian, &m, &curve), 0.0);
    }

    #[test]
    fn constant_curve_mechanical_action_is_minus_potential() {
        let m = ManifoldSpec::flat_torus(&[1.0]);
        let lagrangian = TonelliLagrangian::mechanical("0.1*cos(2*pi*x0)").unwrap();
        let p = pt(&m, &[0.0]);
        let curve = DiscreteCurve::new(
            (0..=10).map(|i| i as f64 / 10.0).collect(),
            vec![p; 11],
        )
        .unwrap();
        let a = action(&lagrangian, &m, &curve);
        assert!((a + 0.1).abs() < 1e-12, "{a}");
    }

    #[test]
    fn kinetic_minimal_action_closed_form() {
        let m = ManifoldSpec::euclidean(2);
        let lagrangian = TonelliLagrangian::kinetic();
        let r = minimal_action(
            &lagrangian,
            &m,
            &pt(&m, &[0.0, 0.0]),
            &pt(&m, &[2.0, 0.0]),
            1.0,
            &MinimalActionOptions::default(),
        )
        .unwrap();
        assert!((r.value - 2.0).abs() < 1e-12);
        assert!(euler_lagrange_residual(&lagrangian, &m, &r.curve) < 1e-9);
    }

    #[test]
    fn mechanical_zero_potential_reduces_to_kinetic() {
        let m = ManifoldSpec::euclidean(2);
        let lagrangian = TonelliLagrangian::mechanical("0").unwrap();
        let r = minimal_action(
            &lagrangian,
            &m,
            &pt(&m, &[0.0, 0.0]),
            &pt(&m, &[2.0, 0.0]),
            1.0,
            &MinimalActionOptions::default(),
        )
        .unwrap();
        assert!((r.value - 2.0).abs() < 1e-8, "{}", r.value);
    }

    #[test]
    fn parabola_residual_is_acceleration() {
        let m = ManifoldSpec::euclidean(1);
        let lagrangian = TonelliLagrangian::kinetic();
        let times: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        let points: Vec<Point> = times.iter().map(|s| pt(&m, &[s * s])).collect();
        let curve = DiscreteCurve::new(times, points).unwrap();
        let r = euler_lagrange_residual(&lagrangian, &m, &curve);
        assert!((r - 2.0).abs() < 1e-9, "{r}");
    }

    #[test]
    fn kinetic_extension_continues_straight() {
        let m = ManifoldSpec::euclidean(2);
        let lagrangian = TonelliLagrangian::kinetic();
        let seg = GeodesicSegment::new(m.clone(), pt(&m, &[0.0, 0.0]), vec![1.0, 0.0], 1.0);
        let curve = DiscreteCurve::from_geodesic(&seg, 16, 0.0);
        let ext = extend_extremal(&lagrangian, &m, &curve, 1.0).unwrap();
        let end = ext.end();
        assert!(vecn::dist(&end.coords, &[2.0, 0.0]) < 1e-12);
        assert!((ext.end_time() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn sphere_quarter_circle_extends_to_half() {
        let m = ManifoldSpec::unit_sphere();
        let lagrangian = TonelliLagrangian::kinetic();
        let x = pt(&m, &[1.0, 0.0, 0.0]);
        let y = pt(&m, &[0.0, 1.0, 0.0]);
        let seg = m.minimizing_geodesics(&x, &y, 2).unwrap().segments[0].clone();
        let curve = DiscreteCurve::from_geodesic(&seg, 32, 0.0);
        let ext = extend_extremal(&lagrangian, &m, &curve, 1.0).unwrap();
        // Half great circle ends at the antipode of the start.
        assert!(m.distance(ext.end(), &pt(&m, &[-1.0, 0.0, 0.0])) < 1e-9);
    }

    #[test]
    fn mechanical_extension_conserves_energy() {
        let m = ManifoldSpec::flat_torus(&[1.0]);
        let lagrangian = TonelliLagrangian::mechanical("0.1*cos(2*pi*x0)").unwrap();
        let r = minimal_action(
            &lagrangian,
            &m,
            &pt(&m, &[0.0]),
            &pt(&m, &[0.5]),
            1.0,
            &MinimalActionOptions::default(),
        )
        .unwrap();
        let potential = match &lagrangian {
            TonelliLagrangian::Mechanical { potential } => potential.clone(),
            _ => unreachable!(),
        };
        // Energy first-integral check on the integrator states, at double
        // the resolution the extension itself would use.
        let start = FlowState {
            time: r.curve.end_time(),
            position: r.curve.end().coords.clone(),
            velocity: r.curve.terminal_velocity(&m),
        };
        let flow = integrate_extremal(&lagrangian, &m, start, 2.0, 2 * 2 * 128).unwrap();
        let energy = |s: &FlowState| 0.5 * vecn::norm_sq(&s.velocity) + potential.value(&s.position);
        let e0 = energy(&flow[0]);
        let mut drift: f64 = 0.0;
        for state in &flow {
            drift = drift.max((energy(state) - e0).abs());
        }
        assert!(drift < 1e-7, "energy drift {drift}");
    }

    #[test]
    fn kinetic_constants_closed_forms() {
        let m = ManifoldSpec::euclidean(2);
        let lagrangian = TonelliLagrangian::kinetic();
        assert!((c_constant(&lagrangian, &m, 3.0) - 4.5).abs() < 1e-15);
        assert!((a_constant(&lagrangian, &m, 2.0) - 2.0).abs() < 1e-15);
        assert_eq!(a_constant(&lagrangian, &m, 0.0), 0.0);
        // Numeric sup cross-check.
        let numeric = numeric_c_constant(&lagrangian, &m, 3.0);
        assert!((numeric - 4.5).abs() < 1e-5);
    }

    #[test]
    fn eta_kinetic_closed_form() {
        let m = ManifoldSpec::euclidean(2);
        let lagrangian = TonelliLagrangian::kinetic();
        // eta(A, r) = r^2 / (2 A) for the kinetic kind.
        assert!((eta(&lagrangian, &m, 2.0, 1.0) - 0.25).abs() < 1e-15);
        assert_eq!(eta(&lagrangian, &m, 0.0, 1.0), f64::INFINITY);
    }

    #[test]
    fn s0_kinetic_example() {
        let m = ManifoldSpec::euclidean(2);
        let lagrangian = TonelliLagrangian::kinetic();
        let s = s0(&lagrangian, &m, 0.0, 2.0, 1.0, 1.0);
        // A(0) = 0 so the shifted bounds are A and B; eta(3, 0.5) = 0.25/6.
        assert!((s - 0.25 / 6.0).abs() < 1e-15, "{s}");
    }

    #[test]
    fn zero_length_time_step_rejected() {
        let m = ManifoldSpec::euclidean(1);
        let p = pt(&m, &[0.0]);
        assert!(DiscreteCurve::new(vec![0.0, 0.0], vec![p.clone(), p]).is_err());
    }

    #[test]
    fn mechanical_constants_track_potential_range() {
        let m = ManifoldSpec::flat_torus(&[1.0]);
        let lagrangian = TonelliLagrangian::mechanical("0.1*cos(2*pi*x0)").unwrap();
        assert!((c_constant(&lagrangian, &m, 2.0) - 2.1).abs() < 1e-9);
        assert!((a_constant(&lagrangian, &m, 2.0) - 2.1).abs() < 1e-9);
        assert!((a_constant(&lagrangian, &m, 0.0) - 0.1).abs() < 1e-9);
    }

    #[test]
    fn fiber_and_base_derivatives_match_finite_differences() {
        let lagrangian = TonelliLagrangian::mechanical("0.1*cos(2*pi*x0)+0.05*sin(2*pi*x1)").unwrap();
        let x = [0.3, 0.6];
        let v = [0.7, -0.2];
        let h = 1e-6;
        let fd_v: Vec<f64> = (0..2)
            .map(|i| {
                let mut vp = v;
                let mut vm = v;
                vp[i] += h;
                vm[i] -= h;
                (lagrangian.value(&x, &vp) - lagrangian.value(&x, &vm)) / (2.0 * h)
            })
            .collect();
        let fd_x: Vec<f64> = (0..2)
            .map(|i| {
                let mut xp = x;
                let mut xm = x;
                xp[i] += h;
                xm[i] -= h;
                (lagrangian.value(&xp, &v) - lagrangian.value(&xm, &v)) / (2.0 * h)
            })
            .collect();
        let dv = lagrangian.fiber_derivative(&x, &v);
        let dx = lagrangian.base_derivative(&x, &v);
        for i in 0..2 {
            assert!((dv[i] - fd_v[i]).abs() < 1e-6);
            assert!((dx[i] - fd_x[i]).abs() < 1e-6);
        }
    }
}

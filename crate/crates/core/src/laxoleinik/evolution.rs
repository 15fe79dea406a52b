//! Evolution evaluators for the negative and positive Lax-Oleinik operators.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::geometry::{ManifoldSpec, Point};
use crate::tonelli::{
    minimal_action, MinimalActionOptions, TonelliLagrangian,
};
use crate::vecn;

use super::closed_set::ClosedSet;
use super::{finite_or_err, value_scale, InitialDatum, LaxOleinikError};

/// Tolerances shared by the evaluators and the singularity analysis.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Tolerances {
    /// Near-optimality band for argmin/argmax diagnostics (relative).
    pub eps_opt: f64,
    /// Calibration identity tolerance (relative).
    pub eps_cal: f64,
    /// Cluster separation above which a point counts as singular.
    pub delta_sep: f64,
    /// Separation below which distinct candidates are treated as one.
    pub delta_noise: f64,
    /// Tolerance for the arc-length ray identity in Aubry membership tests.
    pub eps_ray: f64,
}

impl Tolerances {
    /// Defaults tied to a grid resolution `h`.
    pub fn for_grid(h: f64) -> Self {
        Tolerances {
            eps_opt: 1e-6,
            eps_cal: 1e-6,
            delta_sep: 5.0 * h,
            delta_noise: h,
            eps_ray: 1e-4,
        }
    }

    pub fn validate(&self) -> Result<(), LaxOleinikError> {
        let all = [self.eps_opt, self.eps_cal, self.delta_sep, self.delta_noise, self.eps_ray];
        if all.iter().any(|v| !(*v > 0.0)) {
            return Err(LaxOleinikError::InvalidArgument(
                "tolerances must be strictly positive".into(),
            ));
        }
        if self.delta_noise > self.delta_sep {
            return Err(LaxOleinikError::InvalidArgument(
                "delta_noise must not exceed delta_sep".into(),
            ));
        }
        Ok(())
    }
}

/// Time interval and spatial box over which an evolution is sampled.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Window {
    pub t_min: f64,
    pub t_max: f64,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Window {
    pub fn new(t_min: f64, t_max: f64, lo: Vec<f64>, hi: Vec<f64>) -> Self {
        Window { t_min, t_max, lo, hi }
    }

    pub fn validate(&self, m: &ManifoldSpec) -> Result<(), LaxOleinikError> {
        if !(self.t_min > 0.0 && self.t_max > self.t_min) {
            return Err(LaxOleinikError::InvalidArgument(
                "window times must satisfy 0 < t_min < t_max".into(),
            ));
        }
        if self.lo.len() != m.chart_dim() || self.hi.len() != m.chart_dim() {
            return Err(LaxOleinikError::InvalidArgument(
                "window box dimension mismatch".into(),
            ));
        }
        if self.lo.iter().zip(&self.hi).any(|(a, b)| !(a < b)) {
            return Err(LaxOleinikError::InvalidArgument("empty window box".into()));
        }
        Ok(())
    }

    pub fn contains_time(&self, t: f64) -> bool {
        t >= self.t_min - 1e-12 && t <= self.t_max + 1e-12
    }

    pub fn contains_point(&self, x: &Point) -> bool {
        x.coords
            .iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(c, (l, h))| *c >= l - 1e-12 && *c <= h + 1e-12)
    }

    pub fn diameter(&self) -> f64 {
        vecn::dist(&self.lo, &self.hi)
    }
}

/// One near-optimal argmin candidate of the negative operator.
#[derive(Debug, Clone)]
pub struct MinusOptimum {
    /// Argmin location (a set/sample point or refined grid point).
    pub y: Point,
    pub value: f64,
    /// Value gap to the best candidate.
    pub gap: f64,
    /// Terminal chart velocity of the minimizer from `y` to the query point.
    pub terminal_velocity: Vec<f64>,
    /// Clustering coordinate: query chart lift minus `t` times the terminal
    /// velocity. Distinct backward characteristics have distinct reps at the
    /// scale of their separation.
    pub source_rep: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EvalMinus {
    pub value: f64,
    pub optima: Vec<MinusOptimum>,
    /// False when a continuum of minimizers exists or a cap truncated them.
    pub exhaustive: bool,
}

#[derive(Debug, Clone)]
pub struct PlusOptimum {
    pub y: Point,
    pub value: f64,
    pub gap: f64,
}

#[derive(Debug, Clone)]
pub struct EvalPlus {
    pub value: f64,
    pub optima: Vec<PlusOptimum>,
    /// Value gap between the best and the best spatially-distinct candidate
    /// cluster; `None` when a single cluster remains.
    pub uniqueness_margin: Option<f64>,
    /// `value - (w(x) - h_s(x,x))`: slack of the max over staying put.
    pub stay_margin: f64,
}

#[derive(Debug, Clone)]
pub struct DominationReport {
    pub checked: usize,
    pub max_violation: f64,
}

/// An evaluator for the Lax-Oleinik evolution of a datum over a window.
///
/// Immutable after construction; evaluations are pure, so queries can run
/// from many threads concurrently.
#[derive(Debug, Clone)]
pub struct Evolution {
    manifold: ManifoldSpec,
    lagrangian: TonelliLagrangian,
    datum: InitialDatum,
    window: Window,
    grid_h: f64,
    tolerances: Tolerances,
    direct_opts: MinimalActionOptions,
    candidates: Vec<Point>,
}

impl Evolution {
    pub fn new(
        manifold: ManifoldSpec,
        lagrangian: TonelliLagrangian,
        datum: InitialDatum,
        window: Window,
        grid_h: f64,
        tolerances: Tolerances,
    ) -> Result<Self, LaxOleinikError> {
        manifold.validate()?;
        lagrangian.validate_on(&manifold)?;
        window.validate(&manifold)?;
        tolerances.validate()?;
        if !(grid_h > 0.0) {
            return Err(LaxOleinikError::InvalidArgument("grid_h must be positive".into()));
        }
        match &datum {
            InitialDatum::Characteristic { set } => {
                set.validate(&manifold)?;
                if !lagrangian.is_kinetic() && !matches!(set, ClosedSet::FinitePoints { .. }) {
                    return Err(LaxOleinikError::Unsupported(
                        "mechanical evolutions support finite-point characteristic data only"
                            .into(),
                    ));
                }
            }
            InitialDatum::Sampled { points, values } => {
                if points.len() != values.len() {
                    return Err(LaxOleinikError::InvalidArgument(
                        "sampled datum length mismatch".into(),
                    ));
                }
                if points.iter().any(|p| p.dim() != manifold.chart_dim()) {
                    return Err(LaxOleinikError::InvalidArgument(
                        "sampled point dimension mismatch".into(),
                    ));
                }
                if values.iter().all(|v| !v.is_finite()) {
                    return Err(LaxOleinikError::InvalidArgument(
                        "sampled datum is identically +inf".into(),
                    ));
                }
            }
            InitialDatum::Expression { expr } => {
                if expr.needed_dim() > manifold.chart_dim() {
                    return Err(LaxOleinikError::InvalidArgument(
                        "expression uses more coordinates than the chart has".into(),
                    ));
                }
            }
        }
        let needs_grid = !matches!(&datum, InitialDatum::Characteristic { .. })
            || !lagrangian.is_kinetic();
        let candidates = if needs_grid {
            build_grid(&manifold, &window, grid_h)?
        } else {
            Vec::new()
        };
        Ok(Evolution {
            manifold,
            lagrangian,
            datum,
            window,
            grid_h,
            tolerances,
            direct_opts: MinimalActionOptions { segments: 64, ..Default::default() },
            candidates,
        })
    }

    pub fn manifold(&self) -> &ManifoldSpec {
        &self.manifold
    }

    pub fn lagrangian(&self) -> &TonelliLagrangian {
        &self.lagrangian
    }

    pub fn datum(&self) -> &InitialDatum {
        &self.datum
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn grid_h(&self) -> f64 {
        self.grid_h
    }

    pub fn tolerances(&self) -> &Tolerances {
        &self.tolerances
    }

    pub fn candidates(&self) -> &[Point] {
        &self.candidates
    }

    /// Minimal action `h_t(from, to)` under this evolution's Lagrangian.
    pub fn h_value(&self, from: &Point, to: &Point, t: f64) -> Result<f64, LaxOleinikError> {
        if self.lagrangian.is_kinetic() {
            let d = self.manifold.distance(from, to);
            return Ok(d * d / (2.0 * t));
        }
        Ok(minimal_action(&self.lagrangian, &self.manifold, from, to, t, &self.direct_opts)?.value)
    }

    /// Negative evolution `T^-_t u(x)` with argmin diagnostics.
    pub fn evaluate_minus(&self, t: f64, x: &Point) -> Result<EvalMinus, LaxOleinikError> {
        self.evaluate_minus_impl(t, x, true)
    }

    /// Same as [`Evolution::evaluate_minus`] with the continuous refinement
    /// stage disabled: a pure candidate-grid infimum. Used to measure grid
    /// convergence laws.
    pub fn evaluate_minus_unrefined(&self, t: f64, x: &Point) -> Result<EvalMinus, LaxOleinikError> {
        self.evaluate_minus_impl(t, x, false)
    }

    fn evaluate_minus_impl(
        &self,
        t: f64,
        x: &Point,
        refine: bool,
    ) -> Result<EvalMinus, LaxOleinikError> {
        if !(t > 0.0) {
            return Err(LaxOleinikError::InvalidArgument("t must be positive".into()));
        }
        if !self.window.contains_time(t) {
            return Err(LaxOleinikError::OutOfWindow { t });
        }
        match (&self.datum, self.lagrangian.is_kinetic()) {
            (InitialDatum::Characteristic { set }, true) => self.minus_characteristic(set, t, x),
            (InitialDatum::Characteristic { set }, false) => {
                self.minus_mechanical_finite(set, t, x)
            }
            (InitialDatum::Sampled { points, values }, _) => {
                self.minus_over_candidates(points, Some(values), t, x, false)
            }
            (InitialDatum::Expression { .. }, _) => {
                let pts = self.candidates.clone();
                self.minus_over_candidates(&pts, None, t, x, refine)
            }
        }
    }

    /// Exact oracle path: `T^-_t chi_C = d_C^2 / (2t)`, argmins at the
    /// projections, one optimum per (projection, minimizing geodesic) pair.
    fn minus_characteristic(
        &self,
        set: &ClosedSet,
        t: f64,
        x: &Point,
    ) -> Result<EvalMinus, LaxOleinikError> {
        let d = set.distance(&self.manifold, x);
        let value = finite_or_err(d * d / (2.0 * t), t)?;
        let projections = set.projections(&self.manifold, x, 16);
        let mut optima = Vec::new();
        let mut exhaustive = projections.exhaustive;
        for c in &projections.points {
            let family = self
                .manifold
                .minimizing_geodesics(c, x, 8)
                .map_err(LaxOleinikError::Geometry)?;
            exhaustive &= family.exhaustive;
            for seg in &family.segments {
                // Reparametrize the unit-interval geodesic onto [0, t].
                let v_init = vecn::scale(&seg.velocity, 1.0 / t);
                let v_term = self.manifold.exp_velocity(c, &v_init, t);
                optima.push(MinusOptimum {
                    y: c.clone(),
                    value,
                    gap: 0.0,
                    source_rep: vecn::axpy(&x.coords, -t, &v_term),
                    terminal_velocity: v_term,
                });
            }
        }
        Ok(EvalMinus { value, optima, exhaustive })
    }

    fn minus_mechanical_finite(
        &self,
        set: &ClosedSet,
        t: f64,
        x: &Point,
    ) -> Result<EvalMinus, LaxOleinikError> {
        let points = match set {
            ClosedSet::FinitePoints { points } => points,
            _ => unreachable!("validated at construction"),
        };
        if points.is_empty() {
            return Err(LaxOleinikError::InfiniteValue { t });
        }
        let mut entries: Vec<(f64, Point, Vec<f64>)> = Vec::new();
        for c in points {
            let sol = minimal_action(&self.lagrangian, &self.manifold, c, x, t, &self.direct_opts)?;
            entries.push((sol.value, c.clone(), sol.curve.terminal_velocity(&self.manifold)));
        }
        entries.sort_by(|a, b| a.0.total_cmp(&b.0));
        let best = entries[0].0;
        let band = self.tolerances.eps_opt * value_scale(best);
        let optima = entries
            .into_iter()
            .filter(|(v, _, _)| *v <= best + band)
            .map(|(v, y, v_term)| MinusOptimum {
                source_rep: vecn::axpy(&x.coords, -t, &v_term),
                y,
                value: v,
                gap: v - best,
                terminal_velocity: v_term,
            })
            .collect();
        Ok(EvalMinus { value: best, optima, exhaustive: true })
    }

    /// Grid/sample infimum with optional pattern-search refinement.
    fn minus_over_candidates(
        &self,
        candidates: &[Point],
        values: Option<&[f64]>,
        t: f64,
        x: &Point,
        refine: bool,
    ) -> Result<EvalMinus, LaxOleinikError> {
        let datum_value = |y: &Point| -> f64 {
            match (&self.datum, values) {
                (_, Some(_)) => unreachable!("sampled handled below"),
                (InitialDatum::Expression { expr }, None) => expr.value(&y.coords),
                _ => unreachable!(),
            }
        };
        let mut entries: Vec<(f64, Point)> = Vec::new();
        for (i, y) in candidates.iter().enumerate() {
            let u = match values {
                Some(vals) => vals[i],
                None => datum_value(y),
            };
            if !u.is_finite() {
                continue;
            }
            let total = u + self.h_value(y, x, t)?;
            entries.push((total, y.clone()));
        }
        if entries.is_empty() {
            return Err(LaxOleinikError::InfiniteValue { t });
        }
        entries.sort_by(|a, b| a.0.total_cmp(&b.0));
        let coarse_best = entries[0].0;
        // Refine every candidate within a generous band of the coarse best,
        // then re-rank.
        let wide_band = (self.tolerances.eps_opt * value_scale(coarse_best))
            .max(self.grid_h * self.grid_h);
        let mut refined: Vec<(f64, Point)> = Vec::new();
        let keep = entries.iter().take_while(|(v, _)| *v <= coarse_best + wide_band);
        for (v, y) in keep {
            if refine && values.is_none() {
                let objective = |q: &Point| -> f64 {
                    datum_value(q) + {
                        let d = self.manifold.distance(q, x);
                        d * d / (2.0 * t)
                    }
                };
                let (ry, rv) = pattern_search_min(&self.manifold, y, self.grid_h, &objective);
                refined.push((rv, ry));
            } else {
                refined.push((*v, y.clone()));
            }
        }
        refined.sort_by(|a, b| a.0.total_cmp(&b.0));
        let best = refined[0].0;
        let band = self.tolerances.eps_opt * value_scale(best);
        let dedup_radius = 1e-6 * (1.0 + self.window.diameter());
        let mut optima: Vec<MinusOptimum> = Vec::new();
        for (v, y) in refined.into_iter().filter(|(v, _)| *v <= best + band) {
            if optima
                .iter()
                .any(|o| self.manifold.distance(&o.y, &y) <= dedup_radius)
            {
                continue;
            }
            let family = self
                .manifold
                .minimizing_geodesics(&y, x, 4)
                .map_err(LaxOleinikError::Geometry)?;
            for seg in &family.segments {
                let v_init = vecn::scale(&seg.velocity, 1.0 / t);
                let v_term = self.manifold.exp_velocity(&y, &v_init, t);
                optima.push(MinusOptimum {
                    y: y.clone(),
                    value: v,
                    gap: v - best,
                    source_rep: vecn::axpy(&x.coords, -t, &v_term),
                    terminal_velocity: v_term,
                });
            }
        }
        Ok(EvalMinus { value: best, optima, exhaustive: true })
    }

    /// Positive operator applied to the negative evolution at inner time
    /// `inner_t`: `T^{+}_s (T^-_{inner_t} u)(x)`, restricted to the ball
    /// `B(x, r)` when `restrict` is set.
    ///
    /// Exact per-branch closed forms are used for kinetic characteristic data
    /// of finite point sets and circles; everything else goes through the
    /// candidate grid with pattern-search refinement.
    pub fn evaluate_plus(
        &self,
        s: f64,
        x: &Point,
        inner_t: f64,
        restrict: Option<f64>,
    ) -> Result<EvalPlus, LaxOleinikError> {
        if !(s > 0.0) || !(inner_t > s) {
            return Err(LaxOleinikError::InvalidArgument(
                "need 0 < s < inner_t for the composed operator".into(),
            ));
        }
        if !self.window.contains_time(inner_t) {
            return Err(LaxOleinikError::OutOfWindow { t: inner_t });
        }
        if let (InitialDatum::Characteristic { set }, true) =
            (&self.datum, self.lagrangian.is_kinetic())
        {
            match set {
                ClosedSet::FinitePoints { .. } if !set.is_empty() => {
                    if matches!(
                        self.manifold,
                        ManifoldSpec::Euclidean { .. } | ManifoldSpec::FlatTorus { .. }
                    ) {
                        return self.plus_exact_branches(set, s, x, inner_t, restrict);
                    }
                }
                ClosedSet::Circle { .. } => {
                    return self.plus_exact_circle(set, s, x, inner_t, restrict);
                }
                _ => {}
            }
        }
        self.plus_over_grid(s, x, inner_t, restrict)
    }

    /// Candidate list from per-branch closed forms: for a source branch `c`
    /// (a lifted set point) the unconstrained argmax of
    /// `|z-c|^2/(2T) - |x-z|^2/(2s)` is `z = (x T - c s)/t`; for a pair of
    /// branches the constrained argmax on their equidistance ridge is its
    /// orthogonal projection onto the ridge hyperplane.
    fn plus_exact_branches(
        &self,
        set: &ClosedSet,
        s: f64,
        x: &Point,
        inner_t: f64,
        restrict: Option<f64>,
    ) -> Result<EvalPlus, LaxOleinikError> {
        let t = inner_t - s;
        let set_points = match set {
            ClosedSet::FinitePoints { points } => points,
            _ => unreachable!(),
        };
        let mut branches: Vec<Vec<f64>> = Vec::new();
        let push_unique = |branches: &mut Vec<Vec<f64>>, b: Vec<f64>| {
            if !branches.iter().any(|q| vecn::dist(q, &b) < 1e-12) {
                branches.push(b);
            }
        };
        for c in set_points {
            let base = self.manifold.lift_near(&x.coords, c);
            match &self.manifold {
                ManifoldSpec::FlatTorus { periods } => {
                    let dim = periods.len();
                    let mut shift = vec![-1i64; dim];
                    loop {
                        let lifted: Vec<f64> = base
                            .iter()
                            .zip(periods)
                            .zip(&shift)
                            .map(|((b, p), k)| b + (*k as f64) * p)
                            .collect();
                        push_unique(&mut branches, lifted);
                        let mut axis = 0;
                        loop {
                            if axis == dim {
                                break;
                            }
                            shift[axis] += 1;
                            if shift[axis] <= 1 {
                                break;
                            }
                            shift[axis] = -1;
                            axis += 1;
                        }
                        if axis == dim {
                            break;
                        }
                    }
                }
                _ => push_unique(&mut branches, base),
            }
        }
        let mut candidates: Vec<Vec<f64>> = Vec::new();
        let cap_t = inner_t;
        for b in &branches {
            // Unconstrained branch argmax.
            let z: Vec<f64> = x
                .coords
                .iter()
                .zip(b)
                .map(|(xc, bc)| (xc * cap_t - bc * s) / t)
                .collect();
            candidates.push(z);
        }
        for i in 0..branches.len() {
            for j in i + 1..branches.len() {
                let n = vecn::sub(&branches[j], &branches[i]);
                let nn = vecn::norm_sq(&n);
                if nn < 1e-24 {
                    continue;
                }
                let beta = (vecn::norm_sq(&branches[j]) - vecn::norm_sq(&branches[i])) / 2.0;
                let z = &candidates[i];
                let lambda = (vecn::dot(z, &n) - beta) / nn;
                candidates.push(vecn::axpy(z, -lambda, &n));
            }
        }
        candidates.push(x.coords.clone());
        self.rank_plus_candidates(set, s, x, inner_t, restrict, candidates)
    }

    /// Radial closed form for circle data: the argmax stays on the ray from
    /// the center through `x`, at radius `(rho_x T - R s)/t` clamped at the
    /// center.
    fn plus_exact_circle(
        &self,
        set: &ClosedSet,
        s: f64,
        x: &Point,
        inner_t: f64,
        restrict: Option<f64>,
    ) -> Result<EvalPlus, LaxOleinikError> {
        let t = inner_t - s;
        let (center, radius) = match set {
            ClosedSet::Circle { center, radius } => (center, *radius),
            _ => unreachable!(),
        };
        let rel = vecn::sub(&x.coords, &center.coords);
        let rho_x = vecn::norm(&rel);
        let mut candidates: Vec<Vec<f64>> = vec![center.coords.clone(), x.coords.clone()];
        if rho_x > 1e-14 {
            let rho = (rho_x * inner_t - radius * s) / t;
            if rho > 0.0 {
                candidates.push(vecn::axpy(&center.coords, rho / rho_x, &rel));
            }
        }
        self.rank_plus_candidates(set, s, x, inner_t, restrict, candidates)
    }

    fn rank_plus_candidates(
        &self,
        set: &ClosedSet,
        s: f64,
        x: &Point,
        inner_t: f64,
        restrict: Option<f64>,
        raw: Vec<Vec<f64>>,
    ) -> Result<EvalPlus, LaxOleinikError> {
        let phi = |z: &Point| -> f64 {
            let dc = set.distance(&self.manifold, z);
            let dx = self.manifold.distance(x, z);
            dc * dc / (2.0 * inner_t) - dx * dx / (2.0 * s)
        };
        let mut entries: Vec<(f64, Point)> = Vec::new();
        for coords in raw {
            let z = match self.manifold.point(&coords) {
                Ok(z) => z,
                Err(_) => continue,
            };
            if let Some(r) = restrict {
                if self.manifold.distance(x, &z) > r + 1e-12 {
                    continue;
                }
            }
            if entries
                .iter()
                .any(|(_, q)| self.manifold.distance(q, &z) <= 1e-12)
            {
                continue;
            }
            entries.push((phi(&z), z));
        }
        let stay = phi(x);
        self.finish_plus(entries, stay)
    }

    fn plus_over_grid(
        &self,
        s: f64,
        x: &Point,
        inner_t: f64,
        restrict: Option<f64>,
    ) -> Result<EvalPlus, LaxOleinikError> {
        let mut pool: Vec<Point> = Vec::new();
        for y in &self.candidates {
            if let Some(r) = restrict {
                if self.manifold.distance(x, y) > r + 1e-12 {
                    continue;
                }
            }
            pool.push(y.clone());
        }
        if pool.is_empty() {
            if let Some(r) = restrict {
                if r < self.grid_h {
                    return Err(LaxOleinikError::EmptyBall { radius: r });
                }
            }
        }
        pool.push(x.clone());
        let objective = |z: &Point| -> Result<f64, LaxOleinikError> {
            let w = self.evaluate_minus(inner_t, z)?.value;
            Ok(w - self.h_value(x, z, s)?)
        };
        let mut entries: Vec<(f64, Point)> = Vec::new();
        for z in &pool {
            entries.push((objective(z)?, z.clone()));
        }
        entries.sort_by(|a, b| b.0.total_cmp(&a.0));
        let coarse_best = entries[0].0;
        let band = (self.tolerances.eps_opt * value_scale(coarse_best))
            .max(self.grid_h * self.grid_h);
        let mut refined: Vec<(f64, Point)> = Vec::new();
        for (v, z) in entries.iter().take_while(|(v, _)| *v >= coarse_best - band) {
            let neg = |q: &Point| -> f64 {
                match objective(q) {
                    Ok(val) => -val,
                    Err(_) => f64::INFINITY,
                }
            };
            let (rz, rv) = pattern_search_min(&self.manifold, z, self.grid_h, &neg);
            let rv = -rv;
            let keep_restriction = match restrict {
                Some(r) => self.manifold.distance(x, &rz) <= r + 1e-9,
                None => true,
            };
            if keep_restriction && rv.is_finite() {
                refined.push((rv, rz));
            } else {
                refined.push((*v, z.clone()));
            }
        }
        self.finish_plus(refined, entries.last().map(|_| 0.0).map_or(f64::NEG_INFINITY, |_| {
            // stay value: w(x) - h(x,x)
            match self.evaluate_minus(inner_t, x) {
                Ok(e) => e.value,
                Err(_) => f64::NEG_INFINITY,
            }
        }))
    }

    fn finish_plus(
        &self,
        mut entries: Vec<(f64, Point)>,
        stay_value: f64,
    ) -> Result<EvalPlus, LaxOleinikError> {
        if entries.is_empty() {
            return Err(LaxOleinikError::InvalidArgument(
                "no candidates for the positive operator".into(),
            ));
        }
        entries.sort_by(|a, b| b.0.total_cmp(&a.0));
        let best = entries[0].0;
        let band = self.tolerances.eps_opt * value_scale(best);
        let dedup_radius = 1e-9 * (1.0 + self.window.diameter());
        let mut optima: Vec<PlusOptimum> = Vec::new();
        for (v, y) in &entries {
            if best - v <= band
                && !optima
                    .iter()
                    .any(|o| self.manifold.distance(&o.y, y) <= dedup_radius)
            {
                optima.push(PlusOptimum { y: y.clone(), value: *v, gap: best - v });
            }
        }
        // Uniqueness margin: gap to the best candidate spatially away from
        // the argmax by more than the noise threshold.
        let mut margin = None;
        for (v, y) in &entries[1..] {
            if self.manifold.distance(&optima[0].y, y) > self.tolerances.delta_noise {
                margin = Some(best - v);
                break;
            }
        }
        Ok(EvalPlus { value: best, optima, uniqueness_margin: margin, stay_margin: best - stay_value })
    }

    /// Verify the domination inequality
    /// `u_hat(t', x') - u_hat(t, x) <= h_{t'-t}(x, x')` on the given pairs.
    pub fn domination_check(
        &self,
        pairs: &[((f64, Point), (f64, Point))],
    ) -> Result<DominationReport, LaxOleinikError> {
        let mut max_violation: f64 = f64::NEG_INFINITY;
        for ((t, x), (tp, xp)) in pairs {
            if !(tp > t) {
                return Err(LaxOleinikError::InvalidArgument(
                    "domination pairs need t < t'".into(),
                ));
            }
            let a = self.evaluate_minus(*t, x)?.value;
            let b = self.evaluate_minus(*tp, xp)?.value;
            let bound = self.h_value(x, xp, tp - t)?;
            max_violation = max_violation.max(b - a - bound);
        }
        Ok(DominationReport { checked: pairs.len(), max_violation })
    }
}

/// Uniform cell-center grid over the window box (flat charts only).
fn build_grid(
    m: &ManifoldSpec,
    window: &Window,
    h: f64,
) -> Result<Vec<Point>, LaxOleinikError> {
    if !matches!(m, ManifoldSpec::Euclidean { .. } | ManifoldSpec::FlatTorus { .. }) {
        return Err(LaxOleinikError::Unsupported(
            "candidate grids are built on Euclidean and flat torus charts only".into(),
        ));
    }
    let dim = m.chart_dim();
    let mut counts = Vec::with_capacity(dim);
    let mut total: usize = 1;
    for i in 0..dim {
        let extent = window.hi[i] - window.lo[i];
        let n = ((extent / h).ceil() as usize).max(1);
        total = total.saturating_mul(n);
        if total > (1 << 22) {
            return Err(LaxOleinikError::InvalidArgument(format!(
                "candidate grid with {total}+ cells; increase grid_h"
            )));
        }
        counts.push(n);
    }
    let mut points = Vec::with_capacity(total);
    let mut idx = vec![0usize; dim];
    loop {
        let coords: Vec<f64> = (0..dim)
            .map(|i| {
                let extent = window.hi[i] - window.lo[i];
                window.lo[i] + extent * ((idx[i] as f64) + 0.5) / (counts[i] as f64)
            })
            .collect();
        points.push(m.point(&coords)?);
        let mut axis = 0;
        loop {
            if axis == dim {
                return Ok(points);
            }
            idx[axis] += 1;
            if idx[axis] < counts[axis] {
                break;
            }
            idx[axis] = 0;
            axis += 1;
        }
    }
}

/// Derivative-free local minimization: axis-aligned pattern search with step
/// halving, adequate for the smooth low-dimensional refinements here.
fn pattern_search_min(
    m: &ManifoldSpec,
    start: &Point,
    initial_step: f64,
    objective: &dyn Fn(&Point) -> f64,
) -> (Point, f64) {
    let mut best = start.clone();
    let mut best_v = objective(&best);
    let mut step = initial_step;
    let dim = m.chart_dim();
    for _ in 0..60 {
        let mut improved = false;
        for axis in 0..dim {
            for sign in [-1.0, 1.0] {
                let mut c = best.coords.clone();
                c[axis] += sign * step;
                if let Ok(p) = m.point(&c) {
                    let v = objective(&p);
                    if v < best_v - 0.0 {
                        best = p;
                        best_v = v;
                        improved = true;
                    }
                }
            }
        }
        if !improved {
            step *= 0.5;
            if step < 1e-11 {
                break;
            }
        }
    }
    (best, best_v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tolerances() -> Tolerances {
        Tolerances::for_grid(0.05)
    }

    fn two_point_evolution() -> Evolution {
        let m = ManifoldSpec::euclidean(2);
        let set = ClosedSet::finite(vec![
            m.point(&[-1.0, 0.0]).unwrap(),
            m.point(&[1.0, 0.0]).unwrap(),
        ]);
        Evolution::new(
            m,
            TonelliLagrangian::kinetic(),
            InitialDatum::Characteristic { set },
            Window::new(0.25, 16.0, vec![-3.0, -3.0], vec![3.0, 3.0]),
            0.05,
            tolerances(),
        )
        .unwrap()
    }

    #[test]
    fn chi_two_points_exact_value_and_two_optima() {
        let ev = two_point_evolution();
        let x = ev.manifold().point(&[0.0, 0.0]).unwrap();
        let e = ev.evaluate_minus(1.0, &x).unwrap();
        assert!((e.value - 0.5).abs() < 1e-12);
        assert_eq!(e.optima.len(), 2);
        assert!(e.exhaustive);
    }

    #[test]
    fn diagonal_evolution_quarter_distance_squared() {
        let f = ManifoldSpec::euclidean(2);
        let m = f.squared();
        let ev = Evolution::new(
            m.clone(),
            TonelliLagrangian::kinetic(),
            InitialDatum::Characteristic { set: ClosedSet::Diagonal },
            Window::new(0.25, 4.0, vec![-3.0; 4], vec![3.0; 4]),
            0.1,
            tolerances(),
        )
        .unwrap();
        let x = m.point(&[0.0, 0.0, 2.0, 0.0]).unwrap();
        let e = ev.evaluate_minus(1.0, &x).unwrap();
        assert!((e.value - 1.0).abs() < 1e-12, "{}", e.value);
    }

    #[test]
    fn empty_set_reports_infinite_value() {
        let m = ManifoldSpec::euclidean(2);
        let ev = Evolution::new(
            m.clone(),
            TonelliLagrangian::kinetic(),
            InitialDatum::Characteristic { set: ClosedSet::finite(vec![]) },
            Window::new(0.5, 2.0, vec![-1.0, -1.0], vec![1.0, 1.0]),
            0.1,
            tolerances(),
        )
        .unwrap();
        let x = m.point(&[0.0, 0.0]).unwrap();
        assert!(matches!(
            ev.evaluate_minus(1.0, &x),
            Err(LaxOleinikError::InfiniteValue { .. })
        ));
    }

    #[test]
    fn composed_operator_closed_form_single_point() {
        let m = ManifoldSpec::euclidean(2);
        let ev = Evolution::new(
            m.clone(),
            TonelliLagrangian::kinetic(),
            InitialDatum::Characteristic {
                set: ClosedSet::finite(vec![m.point(&[0.0, 0.0]).unwrap()]),
            },
            Window::new(0.25, 16.0, vec![-9.0, -9.0], vec![9.0, 9.0]),
            0.05,
            tolerances(),
        )
        .unwrap();
        let x = m.point(&[1.0, 0.0]).unwrap();
        // T^+_1 T^-_2 chi_{0} at x = (1,0): argmax at (2,0), value |x|^2/(2t).
        let e = ev.evaluate_plus(1.0, &x, 2.0, None).unwrap();
        assert!((e.value - 0.5).abs() < 1e-12, "{}", e.value);
        assert!(vecn::dist(&e.optima[0].y.coords, &[2.0, 0.0]) < 1e-12);
    }

    #[test]
    fn composed_on_bisector_lands_on_bisector() {
        let ev = two_point_evolution();
        let x = ev.manifold().point(&[0.0, 0.8]).unwrap();
        let (t, s) = (1.0, 0.5);
        let e = ev.evaluate_plus(s, &x, t + s, None).unwrap();
        let y = &e.optima[0].y;
        assert!(y.coords[0].abs() < 1e-12, "{:?}", y);
        assert!((y.coords[1] - 0.8 * 1.5).abs() < 1e-12, "{:?}", y);
    }

    #[test]
    fn composed_inequality_vs_minus() {
        let ev = two_point_evolution();
        for &(px, py, t, s) in &[
            (0.3, 0.4, 1.0, 0.25),
            (-0.4, 1.0, 0.8, 0.3),
            (0.0, -0.9, 1.5, 0.5),
            (1.4, 0.2, 0.9, 0.2),
        ] {
            let x = ev.manifold().point(&[px, py]).unwrap();
            let plus = ev.evaluate_plus(s, &x, t + s, None).unwrap();
            let minus = ev.evaluate_minus(t, &x).unwrap();
            assert!(plus.value <= minus.value + 1e-9, "{} vs {}", plus.value, minus.value);
        }
    }

    #[test]
    fn expression_grid_refinement_matches_closed_form() {
        // u(y) = |y|^2/2 on R^1: T^-_t u(x) = x^2/(2(1+t)) by explicit
        // minimization: inf_y y^2/2 + (x-y)^2/(2t) at y = x/(1+t).
        let m = ManifoldSpec::euclidean(1);
        let ev = Evolution::new(
            m.clone(),
            TonelliLagrangian::kinetic(),
            InitialDatum::Expression {
                expr: crate::tonelli::ScalarField::parse("x0*x0/2").unwrap(),
            },
            Window::new(0.25, 4.0, vec![-4.0], vec![4.0]),
            0.05,
            tolerances(),
        )
        .unwrap();
        let x = m.point(&[1.2]).unwrap();
        let e = ev.evaluate_minus(1.0, &x).unwrap();
        let expected = 1.2 * 1.2 / 4.0;
        assert!((e.value - expected).abs() < 1e-8, "{} vs {expected}", e.value);
        assert!((e.optima[0].y.coords[0] - 0.6).abs() < 1e-5);
    }

    #[test]
    fn domination_holds_on_circle_fixture() {
        let m = ManifoldSpec::euclidean(2);
        let ev = Evolution::new(
            m.clone(),
            TonelliLagrangian::kinetic(),
            InitialDatum::Characteristic {
                set: ClosedSet::Circle { center: m.point(&[0.0, 0.0]).unwrap(), radius: 1.0 },
            },
            Window::new(0.25, 8.0, vec![-2.0, -2.0], vec![2.0, 2.0]),
            0.05,
            tolerances(),
        )
        .unwrap();
        let pairs = vec![
            (
                (1.0, m.point(&[0.5, 0.0]).unwrap()),
                (2.0, m.point(&[0.3, 0.2]).unwrap()),
            ),
            (
                (0.5, m.point(&[1.5, 0.0]).unwrap()),
                (0.75, m.point(&[1.5, 0.3]).unwrap()),
            ),
        ];
        let report = ev.domination_check(&pairs).unwrap();
        assert!(report.max_violation <= 1e-9, "{}", report.max_violation);
    }

    #[test]
    fn degenerate_domination_pair_rejected() {
        let ev = two_point_evolution();
        let x = ev.manifold().point(&[0.0, 0.0]).unwrap();
        let pairs = vec![((1.0, x.clone()), (1.0, x))];
        assert!(ev.domination_check(&pairs).is_err());
    }

    #[test]
    fn sampled_spike_is_dropped_by_lsc() {
        let m = ManifoldSpec::euclidean(1);
        let points: Vec<Point> = (-5..=5).map(|i| m.point(&[i as f64 * 0.1]).unwrap()).collect();
        let values: Vec<f64> = points
            .iter()
            .map(|p| if p.coords[0].abs() < 1e-12 { 1.0 } else { 0.0 })
            .collect();
        let datum = InitialDatum::Sampled { points: points.clone(), values };
        let spike = m.point(&[0.0]).unwrap();
        let v = super::super::lsc_regularize(&datum, &m, &spike);
        assert_eq!(v, 0.0);
        let off = m.point(&[0.31]).unwrap();
        assert_eq!(super::super::lsc_regularize(&datum, &m, &off), 0.0);
    }
}

//! Finite-difference solvers in d = 1 for the one- and double-obstacle
//! parabolic variational inequalities, their penalized relaxations, and the
//! exponential time transform.
//!
//! The backward theta-scheme treats diffusion/advection implicitly
//! (theta = 1 by default) and the driver explicitly at the previous time
//! slice, so the logarithmic nonlinearity never needs Newton iterations.
//! Hard obstacles are enforced by projected successive over-relaxation on
//! the tridiagonal system; soft (penalty) obstacles are integrated with the
//! same sub-stepped explicit rule as the Monte Carlo schemes.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;

pub type CoefficientFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
/// Driver f(t, x, u, q) with q = sigma(t, x) du/dx.
pub type PdeDriverFn = Arc<dyn Fn(f64, f64, f64, f64) -> f64 + Send + Sync>;
pub type ObstacleFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type TerminalDataFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Uniform space grid on [x_min, x_max] with nx nodes.
#[derive(Debug, Clone, Copy)]
pub struct SpaceGrid {
    x_min: f64,
    x_max: f64,
    nx: usize,
}

impl SpaceGrid {
    pub fn new(x_min: f64, x_max: f64, nx: usize) -> Result<Self> {
        if !(x_min < x_max) || nx < 3 {
            return Err(Error::InvalidSpaceGrid { x_min, x_max, nx });
        }
        Ok(Self { x_min, x_max, nx })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.nx - 1) as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        if j == self.nx - 1 {
            self.x_max
        } else {
            self.x_min + j as f64 * self.dx()
        }
    }

    /// Index of the grid node closest to x.
    pub fn nearest(&self, x: f64) -> usize {
        let j = ((x - self.x_min) / self.dx()).round();
        (j.max(0.0) as usize).min(self.nx - 1)
    }
}

/// Coefficients, driver, obstacles and terminal data of the parabolic
/// problem. Obstacles may be identically -inf / +inf when absent.
#[derive(Clone)]
pub struct PdeSpec {
    pub drift: CoefficientFn,
    pub vol: CoefficientFn,
    pub driver: PdeDriverFn,
    pub lower: ObstacleFn,
    pub upper: ObstacleFn,
    pub terminal: TerminalDataFn,
}

impl PdeSpec {
    /// Driftless unit-volatility problem with the given driver, obstacles
    /// and terminal data.
    pub fn brownian(
        driver: PdeDriverFn,
        lower: ObstacleFn,
        upper: ObstacleFn,
        terminal: TerminalDataFn,
    ) -> Self {
        Self {
            drift: Arc::new(|_, _| 0.0),
            vol: Arc::new(|_, _| 1.0),
            driver,
            lower,
            upper,
            terminal,
        }
    }

    pub fn no_lower() -> ObstacleFn {
        Arc::new(|_, _| f64::NEG_INFINITY)
    }

    pub fn no_upper() -> ObstacleFn {
        Arc::new(|_, _| f64::INFINITY)
    }
}

/// Value function u(t_i, x_j) on the space-time grid.
#[derive(Debug, Clone)]
pub struct GridValueFunction {
    pub time: TimeGrid,
    pub space: SpaceGrid,
    /// values[i][j] = u(t_i, x_j), i = 0..=N.
    pub values: Vec<Vec<f64>>,
}

impl GridValueFunction {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i][j]
    }

    /// Linear interpolation in space at time node i.
    pub fn interpolate(&self, i: usize, x: f64) -> f64 {
        let dx = self.space.dx();
        let pos = ((x - self.space.node(0)) / dx).clamp(0.0, (self.space.nx() - 1) as f64);
        let j = (pos.floor() as usize).min(self.space.nx() - 2);
        let w = pos - j as f64;
        (1.0 - w) * self.values[i][j] + w * self.values[i][j + 1]
    }

    pub fn max_abs_diff(&self, other: &GridValueFunction) -> f64 {
        let mut gap = 0.0f64;
        for (a, b) in self.values.iter().zip(&other.values) {
            for (x, y) in a.iter().zip(b) {
                gap = gap.max((x - y).abs());
            }
        }
        gap
    }
}

/// Numerical knobs of the theta-scheme and the projected relaxation.
#[derive(Debug, Clone)]
pub struct PdeConfig {
    /// theta = 1: implicit diffusion (default); theta = 0: explicit with a
    /// CFL check.
    pub theta: f64,
    /// Over-relaxation factor of the projected sweeps.
    pub omega: f64,
    pub relax_tol: f64,
    pub max_relax_iters: usize,
}

impl Default for PdeConfig {
    fn default() -> Self {
        Self { theta: 1.0, omega: 1.5, relax_tol: 1e-12, max_relax_iters: 50_000 }
    }
}

/// Discrete rows of the generator L at one time slice: central second
/// differences for the sigma^2/2 term and upwind first differences for the
/// drift. Boundary rows are zero (Dirichlet nodes).
#[derive(Debug, Clone)]
pub struct TridiagOperator {
    pub sub: Vec<f64>,
    pub diag: Vec<f64>,
    pub sup: Vec<f64>,
}

impl TridiagOperator {
    /// Applies the operator to a slice of nodal values (interior rows).
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let nx = u.len();
        let mut out = vec![0.0; nx];
        for j in 1..nx - 1 {
            out[j] = self.sub[j] * u[j - 1] + self.diag[j] * u[j] + self.sup[j] * u[j + 1];
        }
        out
    }
}

/// Assembles the discrete generator at time t.
pub fn build_operator(spec: &PdeSpec, space: &SpaceGrid, t: f64) -> TridiagOperator {
    let nx = space.nx();
    let dx = space.dx();
    let mut sub = vec![0.0; nx];
    let mut diag = vec![0.0; nx];
    let mut sup = vec![0.0; nx];
    for j in 1..nx - 1 {
        let x = space.node(j);
        let s = (spec.vol)(t, x);
        let a = 0.5 * s * s / (dx * dx);
        let b = (spec.drift)(t, x);
        sub[j] = a - b.min(0.0) / dx;
        sup[j] = a + b.max(0.0) / dx;
        diag[j] = -2.0 * a - b.abs() / dx;
    }
    TridiagOperator { sub, diag, sup }
}

fn max_sigma_sq(spec: &PdeSpec, space: &SpaceGrid, time: &TimeGrid) -> f64 {
    let mut m = 0.0f64;
    for i in 0..=time.steps() {
        let t = time.node(i);
        for j in 0..space.nx() {
            let s = (spec.vol)(t, space.node(j));
            m = m.max(s * s);
        }
    }
    m
}

/// Thomas algorithm for the tridiagonal system with Dirichlet boundaries
/// already folded into the right-hand side (interior unknowns only).
fn thomas_solve(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &mut [f64]) {
    let n = rhs.len();
    let mut c = vec![0.0; n];
    c[0] = sup[0] / diag[0];
    rhs[0] /= diag[0];
    for j in 1..n {
        let denom = diag[j] - sub[j] * c[j - 1];
        c[j] = sup[j] / denom;
        rhs[j] = (rhs[j] - sub[j] * rhs[j - 1]) / denom;
    }
    for j in (0..n - 1).rev() {
        rhs[j] -= c[j] * rhs[j + 1];
    }
}

/// Sub-stepped explicit penalty integration, identical in spirit to the
/// Monte Carlo schemes: level * delta <= 1 per substep, so the iterate
/// approaches the obstacle monotonically without overshoot.
fn penalty_relax(u: &mut f64, level: f64, lo: f64, up: f64, dt: f64) {
    let substeps = (level * dt).ceil().max(1.0) as usize;
    let delta = dt / substeps as f64;
    for _ in 0..substeps {
        if lo.is_finite() && *u < lo {
            *u += level * (lo - *u) * delta;
        } else if up.is_finite() && *u > up {
            *u -= level * (*u - up) * delta;
        }
    }
}

struct Constraints {
    hard_lower: bool,
    hard_upper: bool,
    soft_lower: Option<f64>,
    soft_upper: Option<f64>,
}

/// Result of a variational-inequality or penalized solve.
#[derive(Debug, Clone)]
pub struct PdeSolution {
    pub u: GridValueFunction,
    /// max over interior nodes of |min(u - h, max(R_pde, u - h'))|.
    pub max_complementarity: f64,
    /// Largest relaxation sweep count used by any time step.
    pub max_relax_iters_used: usize,
}

fn backward_solve(
    spec: &PdeSpec,
    time: &TimeGrid,
    space: &SpaceGrid,
    cfg: &PdeConfig,
    cons: &Constraints,
) -> Result<PdeSolution> {
    let nx = space.nx();
    let n = time.steps();
    let dt = time.dt();
    let dx = space.dx();
    let theta = cfg.theta;
    if theta == 0.0 {
        let limit = dx * dx / max_sigma_sq(spec, space, time).max(1e-300);
        if dt > limit {
            return Err(Error::CflViolation { dt, limit });
        }
    }

    let hard = cons.hard_lower || cons.hard_upper;

    let lower_at = |t: f64, x: f64| (spec.lower)(t, x);
    let upper_at = |t: f64, x: f64| (spec.upper)(t, x);
    let clamp_bounds = |t: f64, x: f64| -> (f64, f64) {
        let lo = if cons.hard_lower { lower_at(t, x) } else { f64::NEG_INFINITY };
        let up = if cons.hard_upper { upper_at(t, x) } else { f64::INFINITY };
        (lo, up)
    };

    let mut values = vec![vec![0.0; nx]; n + 1];
    for j in 0..nx {
        values[n][j] = (spec.terminal)(space.node(j));
    }

    let mut max_relax = 0usize;
    for i in (0..n).rev() {
        let t = time.node(i);
        let t_next = time.node(i + 1);
        let (u_prev, rest) = values.split_at_mut(i + 1);
        let u_next = &rest[0];
        let u_i = &mut u_prev[i];

        let op_i = build_operator(spec, space, t);
        let op_next = build_operator(spec, space, t_next);
        let lu_next = op_next.apply(u_next);

        // Driver at the previous slice: q = sigma u_x by central differences.
        let mut fvals = vec![0.0; nx];
        for j in 0..nx {
            let x = space.node(j);
            let ux = if j == 0 {
                (u_next[1] - u_next[0]) / dx
            } else if j == nx - 1 {
                (u_next[nx - 1] - u_next[nx - 2]) / dx
            } else {
                (u_next[j + 1] - u_next[j - 1]) / (2.0 * dx)
            };
            let q = (spec.vol)(t, x) * ux;
            fvals[j] = (spec.driver)(t, x, u_next[j], q);
            if !fvals[j].is_finite() {
                return Err(Error::NonFiniteGenerator {
                    t,
                    y: u_next[j],
                    z_norm: q.abs(),
                    value: fvals[j],
                });
            }
        }

        // Boundaries: propagate the terminal datum by the driver ODE alone
        // and clamp into the obstacle band.
        for j in [0, nx - 1] {
            let x = space.node(j);
            let v = u_next[j] + dt * fvals[j];
            u_i[j] = v.max(lower_at(t, x)).min(upper_at(t, x));
        }
        let left = u_i[0];
        let right = u_i[nx - 1];

        // Interior right-hand side.
        let ni = nx - 2;
        let mut rhs = vec![0.0; ni];
        for j in 1..nx - 1 {
            rhs[j - 1] = u_next[j] + dt * (1.0 - theta) * lu_next[j] + dt * fvals[j];
        }

        if theta == 0.0 {
            let mut sol = rhs;
            for (j, v) in sol.iter_mut().enumerate() {
                let x = space.node(j + 1);
                let (lo, up) = clamp_bounds(t, x);
                *v = v.clamp(lo, up);
            }
            for (j, v) in sol.into_iter().enumerate() {
                u_i[j + 1] = v;
            }
        } else {
            // System (I - theta dt L) u = rhs with boundaries folded in.
            let mut m_sub = vec![0.0; ni];
            let mut m_diag = vec![0.0; ni];
            let mut m_sup = vec![0.0; ni];
            for j in 1..nx - 1 {
                m_sub[j - 1] = -theta * dt * op_i.sub[j];
                m_diag[j - 1] = 1.0 - theta * dt * op_i.diag[j];
                m_sup[j - 1] = -theta * dt * op_i.sup[j];
            }
            rhs[0] -= m_sub[0] * left;
            rhs[ni - 1] -= m_sup[ni - 1] * right;
            m_sub[0] = 0.0;
            m_sup[ni - 1] = 0.0;

            if !hard {
                let mut sol = rhs;
                thomas_solve(&m_sub, &m_diag, &m_sup, &mut sol);
                for (j, v) in sol.into_iter().enumerate() {
                    u_i[j + 1] = v;
                }
            } else {
                // Projected SOR, warm-started from the previous slice.
                let mut u = vec![0.0; ni];
                for j in 1..nx - 1 {
                    let x = space.node(j);
                    let (lo, up) = clamp_bounds(t, x);
                    u[j - 1] = u_next[j].clamp(lo, up);
                }
                let scale = u.iter().fold(1.0f64, |a, v| a.max(v.abs()));
                let mut iters = 0;
                loop {
                    let mut change = 0.0f64;
                    for j in 0..ni {
                        let um = if j == 0 { 0.0 } else { u[j - 1] };
                        let up_ = if j == ni - 1 { 0.0 } else { u[j + 1] };
                        let gs = (rhs[j] - m_sub[j] * um - m_sup[j] * up_) / m_diag[j];
                        let x = space.node(j + 1);
                        let (lo, hi) = clamp_bounds(t, x);
                        let cand = (u[j] + cfg.omega * (gs - u[j])).clamp(lo, hi);
                        change = change.max((cand - u[j]).abs());
                        u[j] = cand;
                    }
                    iters += 1;
                    if change <= cfg.relax_tol * scale {
                        break;
                    }
                    if iters >= cfg.max_relax_iters {
                        return Err(Error::RelaxationDiverged { iters, residual: change });
                    }
                }
                max_relax = max_relax.max(iters);
                for (j, v) in u.into_iter().enumerate() {
                    u_i[j + 1] = v;
                }
            }
        }

        // Soft obstacles: sub-stepped penalty sources.
        if cons.soft_lower.is_some() || cons.soft_upper.is_some() {
            for j in 0..nx {
                let x = space.node(j);
                if let Some(level) = cons.soft_lower {
                    let lo = lower_at(t, x);
                    if lo.is_finite() && u_i[j] < lo {
                        penalty_relax(&mut u_i[j], level, lo, f64::INFINITY, dt);
                    }
                }
                if let Some(level) = cons.soft_upper {
                    let up = upper_at(t, x);
                    if up.is_finite() && u_i[j] > up {
                        penalty_relax(&mut u_i[j], level, f64::NEG_INFINITY, up, dt);
                    }
                }
            }
            // A hard obstacle still wins over a soft push on the other side.
            if hard {
                for j in 1..nx - 1 {
                    let x = space.node(j);
                    let (lo, up) = clamp_bounds(t, x);
                    u_i[j] = u_i[j].max(lo).min(up);
                }
            }
        }
    }

    let u = GridValueFunction { time: *time, space: *space, values };
    let max_complementarity = complementarity_residual(spec, &u, cfg, cons);
    Ok(PdeSolution { u, max_complementarity, max_relax_iters_used: max_relax })
}

/// Discrete double-complementarity residual
/// min(u - h, max(-du/dt - Lu - f, u - h')) evaluated with the same
/// explicit-driver convention as the scheme. For hard-obstacle solves this
/// is zero up to the relaxation tolerance.
fn complementarity_residual(
    spec: &PdeSpec,
    u: &GridValueFunction,
    cfg: &PdeConfig,
    cons: &Constraints,
) -> f64 {
    let n = u.time.steps();
    let nx = u.space.nx();
    let dt = u.time.dt();
    let dx = u.space.dx();
    let theta = cfg.theta;
    let mut worst = 0.0f64;
    for i in 0..n {
        let t = u.time.node(i);
        let t_next = u.time.node(i + 1);
        let op_i = build_operator(spec, &u.space, t);
        let op_next = build_operator(spec, &u.space, t_next);
        let lu_i = op_i.apply(&u.values[i]);
        let lu_next = op_next.apply(&u.values[i + 1]);
        for j in 1..nx - 1 {
            let x = u.space.node(j);
            let ux = (u.values[i + 1][j + 1] - u.values[i + 1][j - 1]) / (2.0 * dx);
            let q = (spec.vol)(t, x) * ux;
            let f = (spec.driver)(t, x, u.values[i + 1][j], q);
            let r = -((u.values[i + 1][j] - u.values[i][j]) / dt
                + theta * lu_i[j]
                + (1.0 - theta) * lu_next[j]
                + f);
            let lo = if cons.hard_lower { (spec.lower)(t, x) } else { f64::NEG_INFINITY };
            let up = if cons.hard_upper { (spec.upper)(t, x) } else { f64::INFINITY };
            let upper_term = if up.is_finite() { r.max(u.values[i][j] - up) } else { r };
            let comp = if lo.is_finite() {
                (u.values[i][j] - lo).min(upper_term)
            } else {
                upper_term
            };
            worst = worst.max(comp.abs());
        }
    }
    worst
}

fn validate_obstacle_ordering(spec: &PdeSpec, time: &TimeGrid, space: &SpaceGrid) -> Result<()> {
    for i in 0..=time.steps() {
        let t = time.node(i);
        for j in 0..space.nx() {
            let x = space.node(j);
            let lo = (spec.lower)(t, x);
            let up = (spec.upper)(t, x);
            if lo.is_finite() && up.is_finite() && !(lo < up) {
                return Err(Error::ObstacleOrdering { t, x, lower: lo, upper: up });
            }
        }
    }
    let t_end = time.horizon();
    for j in 0..space.nx() {
        let x = space.node(j);
        let g = (spec.terminal)(x);
        let lo = (spec.lower)(t_end, x);
        let up = (spec.upper)(t_end, x);
        if !(g >= lo && g <= up) {
            return Err(Error::TerminalOutsideObstacles { x, g, lower: lo, upper: up });
        }
    }
    Ok(())
}

/// Unconstrained backward solve (obstacles ignored).
pub fn solve_unconstrained(
    spec: &PdeSpec,
    time: &TimeGrid,
    space: &SpaceGrid,
    cfg: &PdeConfig,
) -> Result<PdeSolution> {
    let cons =
        Constraints { hard_lower: false, hard_upper: false, soft_lower: None, soft_upper: None };
    backward_solve(spec, time, space, cfg, &cons)
}

/// One-obstacle variational inequality: u >= h enforced by projection
/// (projected relaxation when theta > 0). The upper obstacle of the spec
/// is ignored.
pub fn solve_one_obstacle_vi(
    spec: &PdeSpec,
    time: &TimeGrid,
    space: &SpaceGrid,
    cfg: &PdeConfig,
) -> Result<PdeSolution> {
    let cons =
        Constraints { hard_lower: true, hard_upper: false, soft_lower: None, soft_upper: None };
    backward_solve(spec, time, space, cfg, &cons)
}

/// Double-obstacle variational inequality h <= u <= h'.
pub fn solve_double_obstacle_vi(
    spec: &PdeSpec,
    time: &TimeGrid,
    space: &SpaceGrid,
    cfg: &PdeConfig,
) -> Result<PdeSolution> {
    validate_obstacle_ordering(spec, time, space)?;
    let cons =
        Constraints { hard_lower: true, hard_upper: true, soft_lower: None, soft_upper: None };
    backward_solve(spec, time, space, cfg, &cons)
}

/// Fully penalized problem: unconstrained backward solve with penalty
/// sources n (h - u)^+ and/or -n (u - h')^+ on whichever obstacles are
/// finite; the penalty integration sub-steps whenever n dt > 1.
pub fn solve_penalized_pde(
    spec: &PdeSpec,
    time: &TimeGrid,
    space: &SpaceGrid,
    level: f64,
    cfg: &PdeConfig,
) -> Result<PdeSolution> {
    if !(level >= 1.0) {
        return Err(Error::InvalidParam(format!("penalty level must be >= 1, got {level}")));
    }
    let cons = Constraints {
        hard_lower: false,
        hard_upper: false,
        soft_lower: Some(level),
        soft_upper: Some(level),
    };
    backward_solve(spec, time, space, cfg, &cons)
}

/// Lower obstacle enforced by reflection, upper obstacle penalized: the
/// solution approaches the double-obstacle one from above as the level
/// grows.
pub fn solve_lower_vi_upper_penalized(
    spec: &PdeSpec,
    time: &TimeGrid,
    space: &SpaceGrid,
    level: f64,
    cfg: &PdeConfig,
) -> Result<PdeSolution> {
    let cons = Constraints {
        hard_lower: true,
        hard_upper: false,
        soft_lower: None,
        soft_upper: Some(level),
    };
    backward_solve(spec, time, space, cfg, &cons)
}

/// Upper obstacle enforced by reflection, lower obstacle penalized: the
/// solution approaches the double-obstacle one from below.
pub fn solve_upper_vi_lower_penalized(
    spec: &PdeSpec,
    time: &TimeGrid,
    space: &SpaceGrid,
    level: f64,
    cfg: &PdeConfig,
) -> Result<PdeSolution> {
    let cons = Constraints {
        hard_lower: false,
        hard_upper: true,
        soft_lower: Some(level),
        soft_upper: None,
    };
    backward_solve(spec, time, space, cfg, &cons)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformDirection {
    Forward,
    Inverse,
}

/// Pointwise exponential time transform w(t, x) -> e^{t} w(t, x)
/// (forward) or e^{-t} scaling (inverse).
pub fn exp_time_transform(u: &GridValueFunction, direction: TransformDirection) -> GridValueFunction {
    let mut out = u.clone();
    for i in 0..=u.time.steps() {
        let s = match direction {
            TransformDirection::Forward => u.time.node(i).exp(),
            TransformDirection::Inverse => (-u.time.node(i)).exp(),
        };
        for v in &mut out.values[i] {
            *v *= s;
        }
    }
    out
}

/// Problem satisfied by the transform e^t w of a solution w: obstacles and
/// terminal data are scaled by e^t, and the driver becomes
/// F(t, x, v, q) = e^t f(t, x, e^{-t} v, e^{-t} q) - v, absorbing the
/// zeroth-order term created by the product rule.
pub fn time_transformed_spec(spec: &PdeSpec, horizon: f64) -> PdeSpec {
    let f = spec.driver.clone();
    let lower = spec.lower.clone();
    let upper = spec.upper.clone();
    let terminal = spec.terminal.clone();
    PdeSpec {
        drift: spec.drift.clone(),
        vol: spec.vol.clone(),
        driver: Arc::new(move |t, x, v, q| {
            let e = t.exp();
            e * f(t, x, v / e, q / e) - v
        }),
        lower: Arc::new(move |t, x| t.exp() * lower(t, x)),
        upper: Arc::new(move |t, x| t.exp() * upper(t, x)),
        terminal: Arc::new(move |x| horizon.exp() * terminal(x)),
    }
}

/// Contact classification of a node after a VI solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActiveSet {
    Lower,
    Interior,
    Upper,
}

impl ActiveSet {
    pub fn label(&self) -> &'static str {
        match self {
            ActiveSet::Lower => "lower",
            ActiveSet::Interior => "interior",
            ActiveSet::Upper => "upper",
        }
    }
}

/// Classifies every node as lower contact, interior, or upper contact
/// within the absolute tolerance `atol`.
pub fn classify_active_set(spec: &PdeSpec, u: &GridValueFunction, atol: f64) -> Vec<Vec<ActiveSet>> {
    let mut out = Vec::with_capacity(u.time.steps() + 1);
    for i in 0..=u.time.steps() {
        let t = u.time.node(i);
        let mut row = Vec::with_capacity(u.space.nx());
        for j in 0..u.space.nx() {
            let x = u.space.node(j);
            let v = u.values[i][j];
            let lo = (spec.lower)(t, x);
            let up = (spec.upper)(t, x);
            let set = if lo.is_finite() && v - lo <= atol {
                ActiveSet::Lower
            } else if up.is_finite() && up - v <= atol {
                ActiveSet::Upper
            } else {
                ActiveSet::Interior
            };
            row.push(set);
        }
        out.push(row);
    }
    out
}

/// Sandwich check h - tol <= u <= h' + tol at every node.
pub fn check_sandwich(spec: &PdeSpec, u: &GridValueFunction, tol: f64) -> bool {
    for i in 0..=u.time.steps() {
        let t = u.time.node(i);
        for j in 0..u.space.nx() {
            let x = u.space.node(j);
            let v = u.values[i][j];
            if v < (spec.lower)(t, x) - tol || v > (spec.upper)(t, x) + tol {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::safe_ylogy;

    fn zero_driver() -> PdeDriverFn {
        Arc::new(|_, _, _, _| 0.0)
    }

    #[test]
    fn operator_is_exact_on_quadratics() {
        // sigma = sqrt(2), b = 0: L u = u_xx, so L x^2 = 2 exactly.
        let spec = PdeSpec {
            drift: Arc::new(|_, _| 0.0),
            vol: Arc::new(|_, _| 2.0f64.sqrt()),
            driver: zero_driver(),
            lower: PdeSpec::no_lower(),
            upper: PdeSpec::no_upper(),
            terminal: Arc::new(|_| 0.0),
        };
        let space = SpaceGrid::new(-2.0, 2.0, 41).unwrap();
        let op = build_operator(&spec, &space, 0.3);
        let u: Vec<f64> = (0..41).map(|j| space.node(j).powi(2)).collect();
        let lu = op.apply(&u);
        for j in 1..40 {
            assert!((lu[j] - 2.0).abs() < 1e-9, "row {j}: {}", lu[j]);
        }
    }

    #[test]
    fn operator_upwinds_pure_advection() {
        // b = 1, sigma = 0: on u = x the rows give exactly 1.
        let spec = PdeSpec {
            drift: Arc::new(|_, _| 1.0),
            vol: Arc::new(|_, _| 0.0),
            driver: zero_driver(),
            lower: PdeSpec::no_lower(),
            upper: PdeSpec::no_upper(),
            terminal: Arc::new(|_| 0.0),
        };
        let space = SpaceGrid::new(0.0, 1.0, 11).unwrap();
        let op = build_operator(&spec, &space, 0.0);
        let u: Vec<f64> = (0..11).map(|j| space.node(j)).collect();
        let lu = op.apply(&u);
        for j in 1..10 {
            assert!((lu[j] - 1.0).abs() < 1e-12);
            // forward difference for positive drift
            assert_eq!(op.sub[j], 0.0);
            assert!(op.sup[j] > 0.0);
        }
    }

    #[test]
    fn operator_with_state_dependent_vol() {
        // sigma(x) = x on a positive domain: L x^2 = x^2 * 2 / 2 * 2 = x^2...
        // precisely L u = x^2/2 * u_xx = x^2 for u = x^2.
        let spec = PdeSpec {
            drift: Arc::new(|_, _| 0.0),
            vol: Arc::new(|_, x| x),
            driver: zero_driver(),
            lower: PdeSpec::no_lower(),
            upper: PdeSpec::no_upper(),
            terminal: Arc::new(|_| 0.0),
        };
        let space = SpaceGrid::new(1.0, 3.0, 21).unwrap();
        let op = build_operator(&spec, &space, 0.0);
        let u: Vec<f64> = (0..21).map(|j| space.node(j).powi(2)).collect();
        let lu = op.apply(&u);
        for j in 1..20 {
            let x = space.node(j);
            assert!((lu[j] - x * x).abs() < 1e-9);
        }
    }

    #[test]
    fn cfl_violation_is_rejected_with_suggested_dt() {
        let spec = PdeSpec::brownian(
            zero_driver(),
            PdeSpec::no_lower(),
            PdeSpec::no_upper(),
            Arc::new(|x: f64| x.clamp(-1.0, 1.0)),
        );
        let time = TimeGrid::new(1.0, 10).unwrap();
        let space = SpaceGrid::new(-3.0, 3.0, 101).unwrap();
        let cfg = PdeConfig { theta: 0.0, ..PdeConfig::default() };
        match solve_unconstrained(&spec, &time, &space, &cfg) {
            Err(Error::CflViolation { dt, limit }) => {
                assert!(dt > limit);
                assert!((limit - 0.06 * 0.06).abs() < 1e-12);
            }
            other => panic!("expected CFL rejection, got {other:?}"),
        }
    }

    #[test]
    fn far_obstacle_matches_unconstrained_solve() {
        let spec = PdeSpec::brownian(
            zero_driver(),
            Arc::new(|_, _| -1e10),
            PdeSpec::no_upper(),
            Arc::new(|x: f64| x.clamp(-1.0, 1.0)),
        );
        let time = TimeGrid::new(1.0, 40).unwrap();
        let space = SpaceGrid::new(-5.0, 5.0, 101).unwrap();
        let cfg = PdeConfig::default();
        let vi = solve_one_obstacle_vi(&spec, &time, &space, &cfg).unwrap();
        let plain = solve_unconstrained(&spec, &time, &space, &cfg).unwrap();
        assert!(vi.u.max_abs_diff(&plain.u) < 1e-10);
    }

    #[test]
    fn obstacle_dominates_zero_terminal() {
        // h = 0.5 strictly before T, absent at T: the projection lifts the
        // whole solution to at least 0.5 at t = 0.
        let horizon = 1.0;
        let spec = PdeSpec::brownian(
            zero_driver(),
            Arc::new(move |t: f64, _| if t < horizon { 0.5 } else { f64::NEG_INFINITY }),
            PdeSpec::no_upper(),
            Arc::new(|_| 0.0),
        );
        let time = TimeGrid::new(horizon, 20).unwrap();
        let space = SpaceGrid::new(-4.0, 4.0, 41).unwrap();
        let sol = solve_one_obstacle_vi(&spec, &time, &space, &PdeConfig::default()).unwrap();
        for j in 0..41 {
            assert!(sol.u.values[0][j] >= 0.5 - 1e-12);
        }
    }

    #[test]
    fn american_put_complementarity() {
        // Linear pricing form: b = r x, sigma = s x, f = -r u, payoff
        // (K - x)^+ as lower obstacle. The value dominates the payoff and
        // a continuation region exists where it is strictly larger.
        let (r, s, strike) = (0.05, 0.3, 1.0);
        let payoff = move |x: f64| (strike - x).max(0.0);
        let spec = PdeSpec {
            drift: Arc::new(move |_, x| r * x),
            vol: Arc::new(move |_, x| s * x),
            driver: Arc::new(move |_, _, u, _| -r * u),
            lower: Arc::new(move |_, x| payoff(x)),
            upper: PdeSpec::no_upper(),
            terminal: Arc::new(move |x| payoff(x)),
        };
        let time = TimeGrid::new(1.0, 100).unwrap();
        let space = SpaceGrid::new(0.0, 3.0, 301).unwrap();
        let sol = solve_one_obstacle_vi(&spec, &time, &space, &PdeConfig::default()).unwrap();
        for i in 0..=100 {
            for j in 0..301 {
                assert!(sol.u.values[i][j] >= payoff(space.node(j)) - 1e-10);
            }
        }
        // At the money the option is worth strictly more than intrinsic.
        let atm = space.nearest(1.0);
        assert!(sol.u.values[0][atm] > payoff(1.0) + 1e-3);
        assert!(sol.max_complementarity < 1e-6, "comp {}", sol.max_complementarity);
    }

    #[test]
    fn log_driver_with_slack_obstacles_matches_ode() {
        // x-independent data: u(0, .) = exp(e^{-1}) +- 2e-3 at N = 500.
        let spec = PdeSpec::brownian(
            Arc::new(|_, _, u, _| -safe_ylogy(u)),
            Arc::new(|_, _| -10.0),
            Arc::new(|_, _| 10.0),
            Arc::new(|_| std::f64::consts::E),
        );
        let time = TimeGrid::new(1.0, 500).unwrap();
        let space = SpaceGrid::new(-3.0, 3.0, 21).unwrap();
        let sol = solve_double_obstacle_vi(&spec, &time, &space, &PdeConfig::default()).unwrap();
        let oracle = (1.0f64 / std::f64::consts::E).exp();
        for j in 0..21 {
            assert!(
                (sol.u.values[0][j] - oracle).abs() <= 2e-3,
                "node {j}: {} vs {oracle}",
                sol.u.values[0][j]
            );
        }
    }

    #[test]
    fn touching_obstacles_are_rejected() {
        let spec = PdeSpec::brownian(
            zero_driver(),
            Arc::new(|_, _| 0.5),
            Arc::new(|_, _| 0.5),
            Arc::new(|_| 0.5),
        );
        let time = TimeGrid::new(1.0, 5).unwrap();
        let space = SpaceGrid::new(-1.0, 1.0, 11).unwrap();
        assert!(matches!(
            solve_double_obstacle_vi(&spec, &time, &space, &PdeConfig::default()),
            Err(Error::ObstacleOrdering { .. })
        ));
    }

    #[test]
    fn terminal_outside_obstacles_is_rejected() {
        let spec = PdeSpec::brownian(
            zero_driver(),
            Arc::new(|_, _| -1.0),
            Arc::new(|_, _| 1.0),
            Arc::new(|_| 2.0),
        );
        let time = TimeGrid::new(1.0, 5).unwrap();
        let space = SpaceGrid::new(-1.0, 1.0, 11).unwrap();
        assert!(matches!(
            solve_double_obstacle_vi(&spec, &time, &space, &PdeConfig::default()),
            Err(Error::TerminalOutsideObstacles { .. })
        ));
    }

    #[test]
    fn inactive_penalty_equals_unconstrained() {
        let spec = PdeSpec::brownian(
            zero_driver(),
            Arc::new(|_, _| -50.0),
            Arc::new(|_, _| 50.0),
            Arc::new(|x: f64| x.clamp(-1.0, 1.0)),
        );
        let time = TimeGrid::new(1.0, 25).unwrap();
        let space = SpaceGrid::new(-5.0, 5.0, 101).unwrap();
        let cfg = PdeConfig::default();
        let pen = solve_penalized_pde(&spec, &time, &space, 100.0, &cfg).unwrap();
        let plain = solve_unconstrained(&spec, &time, &space, &cfg).unwrap();
        assert_eq!(pen.u.max_abs_diff(&plain.u), 0.0);
    }

    #[test]
    fn penalized_squeeze_around_the_vi_solution() {
        // f = 2 drives the solution into the upper obstacle.
        let spec = PdeSpec::brownian(
            Arc::new(|_, _, _, _| 2.0),
            Arc::new(|_, _| -5.0),
            Arc::new(|_, _| 0.5),
            Arc::new(|_| 0.0),
        );
        let time = TimeGrid::new(1.0, 50).unwrap();
        let space = SpaceGrid::new(-5.0, 5.0, 101).unwrap();
        let cfg = PdeConfig::default();
        let vi = solve_double_obstacle_vi(&spec, &time, &space, &cfg).unwrap();
        assert!(check_sandwich(&spec, &vi.u, 1e-12));

        let mut prev_gap = f64::INFINITY;
        for level in [10.0, 100.0, 1000.0, 10_000.0] {
            let pen = solve_penalized_pde(&spec, &time, &space, level, &cfg).unwrap();
            let gap = pen.u.max_abs_diff(&vi.u);
            assert!(gap <= prev_gap + 1e-12, "level {level}: {gap} > {prev_gap}");
            prev_gap = gap;

            // Mixed forms bracket the VI solution.
            let from_above =
                solve_lower_vi_upper_penalized(&spec, &time, &space, level, &cfg).unwrap();
            let from_below =
                solve_upper_vi_lower_penalized(&spec, &time, &space, level, &cfg).unwrap();
            for i in 0..=time.steps() {
                for j in 0..space.nx() {
                    assert!(from_above.u.values[i][j] >= vi.u.values[i][j] - 1e-8);
                    assert!(from_below.u.values[i][j] <= vi.u.values[i][j] + 1e-8);
                }
            }
        }
        assert!(prev_gap <= 1e-2, "final gap {prev_gap}");
    }

    #[test]
    fn penalty_mass_stays_bounded() {
        // Discrete analogue of bounded K: n * mean((h - u_n)^+) does not
        // blow up along the schedule.
        let horizon = 1.0;
        let spec = PdeSpec::brownian(
            zero_driver(),
            Arc::new(move |t: f64, _| if t < horizon { 0.5 } else { f64::NEG_INFINITY }),
            PdeSpec::no_upper(),
            Arc::new(|_| 0.0),
        );
        let time = TimeGrid::new(horizon, 50).unwrap();
        let space = SpaceGrid::new(-4.0, 4.0, 81).unwrap();
        let cfg = PdeConfig::default();
        let mut masses = Vec::new();
        for level in [10.0, 100.0, 1000.0, 10_000.0] {
            let pen = solve_penalized_pde(&spec, &time, &space, level, &cfg).unwrap();
            let mut total = 0.0;
            let mut count = 0usize;
            for i in 0..=time.steps() {
                let t = time.node(i);
                for j in 0..space.nx() {
                    let h = (spec.lower)(t, space.node(j));
                    if h.is_finite() {
                        total += (h - pen.u.values[i][j]).max(0.0);
                        count += 1;
                    }
                }
            }
            masses.push(level * total / count as f64);
        }
        let cap = 2.0 * masses[0].max(1.0);
        for m in &masses {
            assert!(*m <= cap, "penalty masses {masses:?}");
        }
    }

    #[test]
    fn transform_is_pointwise_exponential() {
        let time = TimeGrid::new(1.0, 10).unwrap();
        let space = SpaceGrid::new(-1.0, 1.0, 5).unwrap();
        let zero = GridValueFunction {
            time,
            space,
            values: vec![vec![0.0; 5]; 11],
        };
        let fwd = exp_time_transform(&zero, TransformDirection::Forward);
        assert_eq!(fwd.max_abs_diff(&zero), 0.0);

        let ones = GridValueFunction {
            time,
            space,
            values: vec![vec![1.0; 5]; 11],
        };
        let fwd = exp_time_transform(&ones, TransformDirection::Forward);
        assert!((fwd.values[10][0] - std::f64::consts::E).abs() < 1e-15);

        let back = exp_time_transform(&fwd, TransformDirection::Inverse);
        assert!(back.max_abs_diff(&ones) <= 1e-12);
    }

    #[test]
    fn grid_refinement_is_self_consistent() {
        let spec = PdeSpec::brownian(
            Arc::new(|_, _, u, _| -0.5 * safe_ylogy(u) + 0.3),
            Arc::new(|_, _| -0.6),
            Arc::new(|_, _| 0.9),
            Arc::new(|x: f64| x.clamp(-0.6, 0.9)),
        );
        let space_c = SpaceGrid::new(-6.0, 6.0, 201).unwrap();
        let space_f = SpaceGrid::new(-6.0, 6.0, 401).unwrap();
        let cfg = PdeConfig::default();
        let coarse = solve_double_obstacle_vi(
            &spec,
            &TimeGrid::new(1.0, 50).unwrap(),
            &space_c,
            &cfg,
        )
        .unwrap();
        let fine = solve_double_obstacle_vi(
            &spec,
            &TimeGrid::new(1.0, 100).unwrap(),
            &space_f,
            &cfg,
        )
        .unwrap();
        let j0c = space_c.nearest(0.0);
        let j0f = space_f.nearest(0.0);
        let delta = (coarse.u.values[0][j0c] - fine.u.values[0][j0f]).abs();
        assert!(delta <= 5e-3, "delta {delta}");
    }
}

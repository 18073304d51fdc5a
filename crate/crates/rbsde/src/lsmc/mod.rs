//! Backward least-squares Monte Carlo solvers: unconstrained BSDE,
//! one-barrier penalization, double-barrier penalization in both
//! directions, and the direct projection scheme for the doubly-reflected
//! equation.
//!
//! All schemes share one backward engine. At node i the conditional
//! expectations are projected onto the regression basis:
//!
//! ```text
//! Z_i    = E[Y_{i+1} dB_i | X_i] / dt
//! Ybar_i = E[Y_{i+1} | X_i]                  (explicit predictor)
//! Yhat_i = Ybar_i + f(t_i, X_i, Ybar_i, Z_i) dt
//! ```
//!
//! and the barrier handling (penalty integration or projection) maps
//! `Yhat_i` to `Y_i`, logging any push into K+/K-. The driver is always
//! evaluated at the predictor, so no root-finding through the logarithmic
//! nonlinearity is ever needed.

pub mod basis;

pub use basis::{regress_conditional_expectation, BasisFamily, FittedFn, RegressionBasis};

use crate::barrier::{Barrier, BarrierPair, TerminalCondition};
use crate::error::{Error, Result};
use crate::forward::PathEnsemble;
use crate::generator::{eval_generator, GeneratorSpec, GrowthSample};
use crate::solution::SolutionQuadruple;

/// Strictly increasing penalty weights, all >= 1. Default 2^0 .. 2^10.
#[derive(Debug, Clone)]
pub struct PenalizationSchedule {
    levels: Vec<f64>,
}

impl PenalizationSchedule {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidSchedule);
        }
        for w in levels.windows(2) {
            if !(w[0] < w[1]) {
                return Err(Error::InvalidSchedule);
            }
        }
        if !(levels[0] >= 1.0) {
            return Err(Error::InvalidSchedule);
        }
        Ok(Self { levels })
    }

    pub fn powers_of_two(max_exponent: u32) -> Self {
        Self { levels: (0..=max_exponent).map(|e| (1u64 << e) as f64).collect() }
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }
}

impl Default for PenalizationSchedule {
    fn default() -> Self {
        Self::powers_of_two(10)
    }
}

/// Penalization direction for the double-barrier schemes: the increasing
/// scheme penalizes the lower barrier and projects onto the upper one, the
/// decreasing scheme penalizes the upper barrier and projects onto the
/// lower one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Increasing,
    Decreasing,
}

/// Solver knobs shared by all schemes.
#[derive(Debug, Clone)]
pub struct LsmcConfig {
    /// Abort when |Y| exceeds this cap.
    pub y_cap: f64,
    /// Probe the generator against its declared growth envelope before
    /// solving.
    pub growth_probe: bool,
}

impl Default for LsmcConfig {
    fn default() -> Self {
        Self { y_cap: 1e8, growth_probe: true }
    }
}

/// Output of one backward solve.
#[derive(Debug, Clone)]
pub struct BsdeSolution {
    pub quad: SolutionQuadruple,
    /// Value at the root node t = 0.
    pub y0: f64,
    /// Standard-error proxy for y0: the sampling error of the final
    /// conditional expectation.
    pub y0_se: f64,
    /// Number of regression solves that needed the ridge fallback.
    pub ridge_events: usize,
}

/// One entry of a penalization run.
#[derive(Debug, Clone)]
pub struct PenalizedLevel {
    pub level: f64,
    pub solution: BsdeSolution,
    /// sup over paths and nodes of (L - Y)^+.
    pub sup_residual_lower: f64,
    /// sup over paths and nodes of (Y - U)^+.
    pub sup_residual_upper: f64,
    pub kplus_t_mean: f64,
    pub kminus_t_mean: f64,
}

enum Mode<'a> {
    Plain,
    OneBarrierPenalized { lower: &'a Barrier, level: f64 },
    DoublePenalized { barriers: &'a BarrierPair, level: f64, direction: Direction },
    Direct { barriers: &'a BarrierPair },
}

/// Integrates dy/ds = level (lo - y)^+ over one step of length dt with
/// explicit substeps chosen so that level * delta <= 1: the iterate
/// approaches the barrier monotonically and can never overshoot it.
fn penalty_push_up(y: f64, level: f64, lo: f64, dt: f64) -> (f64, f64) {
    if !lo.is_finite() || y >= lo {
        return (y, 0.0);
    }
    let substeps = (level * dt).ceil().max(1.0) as usize;
    let delta = dt / substeps as f64;
    let mut y = y;
    let mut pushed = 0.0;
    for _ in 0..substeps {
        let push = level * (lo - y).max(0.0) * delta;
        y += push;
        pushed += push;
    }
    (y, pushed)
}

/// Mirror image: dy/ds = -level (y - up)^+.
fn penalty_push_down(y: f64, level: f64, up: f64, dt: f64) -> (f64, f64) {
    if !up.is_finite() || y <= up {
        return (y, 0.0);
    }
    let substeps = (level * dt).ceil().max(1.0) as usize;
    let delta = dt / substeps as f64;
    let mut y = y;
    let mut pushed = 0.0;
    for _ in 0..substeps {
        let push = level * (y - up).max(0.0) * delta;
        y -= push;
        pushed += push;
    }
    (y, pushed)
}

fn growth_probe(gen: &GeneratorSpec, ens: &PathEnsemble) -> Result<()> {
    let n = ens.grid().steps();
    let d = ens.dim();
    let path_stride = (ens.num_paths() / 4).max(1);
    let time_stride = (n / 4).max(1);
    let mut samples = Vec::new();
    let ys = [0.0, 1.0, -1.0, std::f64::consts::E, -std::f64::consts::E];
    let mut z_unit = vec![0.0; d];
    z_unit[0] = 0.5;
    for m in (0..ens.num_paths()).step_by(path_stride).take(4) {
        for i in (0..=n).step_by(time_stride) {
            for &y in &ys {
                for z in [vec![0.0; d], z_unit.clone()] {
                    samples.push(GrowthSample {
                        t: ens.grid().node(i),
                        x: ens.state(m, i).to_vec(),
                        y,
                        z,
                    });
                }
            }
        }
    }
    let report = crate::generator::check_log_growth(gen, &samples);
    if let Some(v) = report.violations.first() {
        return Err(Error::GrowthEnvelope {
            index: v.index,
            value: v.value,
            envelope: v.envelope,
            y: v.y,
            z_norm: v.z_norm,
        });
    }
    Ok(())
}

fn std_error(values: &[f64]) -> f64 {
    let m = values.len();
    if m < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / m as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
    (var / m as f64).sqrt()
}

fn backward_engine(
    gen: &GeneratorSpec,
    xi: &TerminalCondition,
    ens: &PathEnsemble,
    basis: &RegressionBasis,
    mode: &Mode,
    cfg: &LsmcConfig,
) -> Result<BsdeSolution> {
    if cfg.growth_probe {
        growth_probe(gen, ens)?;
    }
    let m_paths = ens.num_paths();
    let n = ens.grid().steps();
    let d = ens.dim();
    let dt = ens.grid().dt();

    let mut quad = SolutionQuadruple::zeros(m_paths, n, d);
    let mut kp_inc = vec![vec![0.0; n]; m_paths];
    let mut km_inc = vec![vec![0.0; n]; m_paths];
    let mut ridge_events = 0usize;

    // Terminal slice.
    let mut y_next: Vec<f64> = (0..m_paths).map(|m| xi.eval(ens.terminal_state(m))).collect();
    for (m, y) in y_next.iter().enumerate() {
        if !y.is_finite() {
            return Err(Error::NonFiniteState { path: m, step: n });
        }
        quad.y[m][n] = *y;
    }

    let mut y0_se = 0.0;
    let mut z_values = vec![0.0; m_paths];

    for i in (0..n).rev() {
        let t = ens.grid().node(i);
        let states: Vec<&[f64]> = (0..m_paths).map(|m| ens.state(m, i)).collect();

        // Conditional expectations. A single path is the degenerate
        // deterministic mode: the expectation is the value itself and the
        // martingale term vanishes.
        let (ybar, z_slice): (Vec<f64>, Vec<Vec<f64>>) = if m_paths == 1 {
            (vec![y_next[0]], vec![vec![0.0; d]])
        } else {
            let mut z_slice = vec![vec![0.0; d]; m_paths];
            for k in 0..d {
                for m in 0..m_paths {
                    z_values[m] = y_next[m] * ens.increment(m, i)[k] / dt;
                }
                let fit = regress_conditional_expectation(&z_values, &states, basis)?;
                if fit.ridge_used {
                    ridge_events += 1;
                }
                for m in 0..m_paths {
                    z_slice[m][k] = fit.eval(states[m]);
                }
            }
            let fit = regress_conditional_expectation(&y_next, &states, basis)?;
            if fit.ridge_used {
                ridge_events += 1;
            }
            let ybar = (0..m_paths).map(|m| fit.eval(states[m])).collect();
            (ybar, z_slice)
        };

        if i == 0 {
            y0_se = std_error(&y_next);
        }

        for m in 0..m_paths {
            let x = states[m];
            let f_val = eval_generator(gen, t, x, ybar[m], &z_slice[m])?;
            let mut y = ybar[m] + f_val * dt;
            if !y.is_finite() || y.abs() > cfg.y_cap {
                return Err(Error::Diverged { step: i, value: y, cap: cfg.y_cap });
            }
            match mode {
                Mode::Plain => {}
                Mode::OneBarrierPenalized { lower, level } => {
                    let lo = lower.eval(t, x);
                    let (y_new, dk) = penalty_push_up(y, *level, lo, dt);
                    y = y_new;
                    kp_inc[m][i] = dk;
                }
                Mode::DoublePenalized { barriers, level, direction } => {
                    let lo = barriers.lower.eval(t, x);
                    let up = barriers.upper.eval(t, x);
                    match direction {
                        Direction::Increasing => {
                            let (y1, dk) = penalty_push_up(y, *level, lo, dt);
                            kp_inc[m][i] = dk;
                            let over = (y1 - up).max(0.0);
                            km_inc[m][i] = over;
                            y = y1 - over;
                        }
                        Direction::Decreasing => {
                            let (y1, dk) = penalty_push_down(y, *level, up, dt);
                            km_inc[m][i] = dk;
                            let under = (lo - y1).max(0.0);
                            kp_inc[m][i] = if under.is_finite() { under } else { 0.0 };
                            y = y1 + kp_inc[m][i];
                        }
                    }
                }
                Mode::Direct { barriers } => {
                    let lo = barriers.lower.eval(t, x);
                    let up = barriers.upper.eval(t, x);
                    let under = (lo - y).max(0.0);
                    let over = (y - up).max(0.0);
                    kp_inc[m][i] = if under.is_finite() { under } else { 0.0 };
                    km_inc[m][i] = if over.is_finite() { over } else { 0.0 };
                    // exactly L on an upward push, exactly U on a downward one
                    y = y.max(lo).min(up);
                }
            }
            quad.y[m][i] = y;
            quad.z[m][i].copy_from_slice(&z_slice[m]);
        }
        y_next = (0..m_paths).map(|m| quad.y[m][i]).collect();
    }

    for m in 0..m_paths {
        for i in 0..n {
            quad.k_plus[m][i + 1] = quad.k_plus[m][i] + kp_inc[m][i];
            quad.k_minus[m][i + 1] = quad.k_minus[m][i] + km_inc[m][i];
        }
    }

    let y0 = quad.y[0][0];
    Ok(BsdeSolution { quad, y0, y0_se, ridge_events })
}

/// Unconstrained BSDE solve; the returned quadruple has K+ = K- = 0.
pub fn solve_bsde(
    gen: &GeneratorSpec,
    xi: &TerminalCondition,
    ens: &PathEnsemble,
    basis: &RegressionBasis,
    cfg: &LsmcConfig,
) -> Result<BsdeSolution> {
    backward_engine(gen, xi, ens, basis, &Mode::Plain, cfg)
}

fn level_summary(level: f64, solution: BsdeSolution, barriers: &BarrierPair, ens: &PathEnsemble) -> PenalizedLevel {
    let n = solution.quad.num_steps();
    let m_paths = solution.quad.num_paths();
    let mut sup_lo = 0.0f64;
    let mut sup_up = 0.0f64;
    for m in 0..m_paths {
        for i in 0..=n {
            let t = ens.grid().node(i);
            let x = ens.state(m, i);
            let lo = barriers.lower.eval(t, x);
            let up = barriers.upper.eval(t, x);
            if lo.is_finite() {
                sup_lo = sup_lo.max(lo - solution.quad.y[m][i]);
            }
            if up.is_finite() {
                sup_up = sup_up.max(solution.quad.y[m][i] - up);
            }
        }
    }
    let kplus_t_mean =
        (0..m_paths).map(|m| solution.quad.k_plus[m][n]).sum::<f64>() / m_paths as f64;
    let kminus_t_mean =
        (0..m_paths).map(|m| solution.quad.k_minus[m][n]).sum::<f64>() / m_paths as f64;
    PenalizedLevel {
        level,
        solution,
        sup_residual_lower: sup_lo.max(0.0),
        sup_residual_upper: sup_up.max(0.0),
        kplus_t_mean,
        kminus_t_mean,
    }
}

/// One-barrier penalization: for each weight n in the schedule, solves the
/// unconstrained BSDE with driver f + n (L - y)^+ and logs the accumulated
/// penalty mass into K+.
pub fn solve_one_barrier_penalized(
    gen: &GeneratorSpec,
    xi: &TerminalCondition,
    lower: &Barrier,
    ens: &PathEnsemble,
    basis: &RegressionBasis,
    sched: &PenalizationSchedule,
    cfg: &LsmcConfig,
) -> Result<Vec<PenalizedLevel>> {
    let pair = BarrierPair::lower_only(lower.clone());
    xi.validate_sandwich(&pair, ens)?;
    let mut out = Vec::with_capacity(sched.levels().len());
    for &level in sched.levels() {
        let mode = Mode::OneBarrierPenalized { lower, level };
        let solution = backward_engine(gen, xi, ens, basis, &mode, cfg)?;
        out.push(level_summary(level, solution, &pair, ens));
    }
    Ok(out)
}

/// Double-barrier penalization. Increasing mode penalizes the lower barrier
/// and projects onto the upper one (the projection decrement goes to K-);
/// decreasing mode penalizes the upper barrier and projects onto the lower.
pub fn solve_double_barrier_penalized(
    gen: &GeneratorSpec,
    xi: &TerminalCondition,
    barriers: &BarrierPair,
    ens: &PathEnsemble,
    basis: &RegressionBasis,
    sched: &PenalizationSchedule,
    direction: Direction,
    cfg: &LsmcConfig,
) -> Result<Vec<PenalizedLevel>> {
    barriers.validate_on(ens)?;
    xi.validate_sandwich(barriers, ens)?;
    let mut out = Vec::with_capacity(sched.levels().len());
    for &level in sched.levels() {
        let mode = Mode::DoublePenalized { barriers, level, direction };
        let solution = backward_engine(gen, xi, ens, basis, &mode, cfg)?;
        out.push(level_summary(level, solution, barriers, ens));
    }
    Ok(out)
}

/// Direct projection scheme: the unconstrained update is clamped into
/// [L, U] at every node and the clamp amounts define dK+/dK-, so the
/// discrete flat-off conditions hold by construction.
pub fn solve_double_barrier_direct(
    gen: &GeneratorSpec,
    xi: &TerminalCondition,
    barriers: &BarrierPair,
    ens: &PathEnsemble,
    basis: &RegressionBasis,
    cfg: &LsmcConfig,
) -> Result<BsdeSolution> {
    barriers.validate_on(ens)?;
    xi.validate_sandwich(barriers, ens)?;
    backward_engine(gen, xi, ens, basis, &Mode::Direct { barriers }, cfg)
}

#[derive(Debug, Clone)]
pub struct PathSkorokhod {
    pub lower_residual: f64,
    pub upper_residual: f64,
    pub k_total: f64,
    pub pass: bool,
}

/// Report of [`check_skorokhod`]: one entry per path plus the indices of
/// failing paths.
#[derive(Debug, Clone)]
pub struct SkorokhodReport {
    pub per_path: Vec<PathSkorokhod>,
    pub failures: Vec<usize>,
}

impl SkorokhodReport {
    pub fn is_pass(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn max_residual(&self) -> f64 {
        self.per_path
            .iter()
            .map(|p| p.lower_residual.max(p.upper_residual))
            .fold(0.0, f64::max)
    }
}

/// Discrete Skorokhod residuals sum_i (Y_i - L_i) dK+_i and
/// sum_i (U_i - Y_i) dK-_i per path; a path passes iff both residuals are
/// at most tol (1 + K_T).
pub fn check_skorokhod(
    sol: &SolutionQuadruple,
    barriers: &BarrierPair,
    ens: &PathEnsemble,
    tol: f64,
) -> SkorokhodReport {
    assert!(sol.matches_ensemble(ens), "solution dimensions must match the ensemble");
    let n = sol.num_steps();
    let mut per_path = Vec::with_capacity(sol.num_paths());
    let mut failures = Vec::new();
    for m in 0..sol.num_paths() {
        let mut lower_residual = 0.0;
        let mut upper_residual = 0.0;
        for i in 0..n {
            let dkp = sol.k_plus[m][i + 1] - sol.k_plus[m][i];
            let dkm = sol.k_minus[m][i + 1] - sol.k_minus[m][i];
            let t = ens.grid().node(i);
            let x = ens.state(m, i);
            if dkp > 0.0 {
                lower_residual += (sol.y[m][i] - barriers.lower.eval(t, x)) * dkp;
            }
            if dkm > 0.0 {
                upper_residual += (barriers.upper.eval(t, x) - sol.y[m][i]) * dkm;
            }
        }
        let k_total = sol.k_total(m);
        let bound = tol * (1.0 + k_total);
        let pass = lower_residual.abs() <= bound && upper_residual.abs() <= bound;
        if !pass {
            failures.push(m);
        }
        per_path.push(PathSkorokhod { lower_residual, upper_residual, k_total, pass });
    }
    SkorokhodReport { per_path, failures }
}

//! Mixed zero-sum stochastic differential game engine.
//!
//! Player one picks a control process u and a stopping time tau and
//! minimizes; player two picks (v, sigma) and maximizes. Controlled drift
//! enters through a Girsanov reweighting of the driftless reference paths,
//! so the game value solves the doubly-reflected BSDE whose driver is the
//! Isaacs Hamiltonian
//!
//! ```text
//! H(t, x, z, u, v) = z . sigma^{-1}(t, x) phi(t, x, u, v) + h(t, x, u, v)
//! H*(t, x, z)      = inf_u sup_v H(t, x, z, u, v)
//! ```
//!
//! evaluated by brute force over finite control grids.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::barrier::{BarrierPair, TerminalCondition};
use crate::error::{Error, Result};
use crate::forward::{PathEnsemble, SdeSpec};
use crate::generator::GeneratorSpec;
use crate::lsmc::{solve_double_barrier_direct, BsdeSolution, LsmcConfig, RegressionBasis};
use crate::seedstream::rng_for;
use crate::solution::SolutionQuadruple;

use rand::Rng;

/// Controlled drift phi(t, x, u, v) -> R^d.
pub type ControlledDriftFn = Arc<dyn Fn(f64, &[f64], f64, f64) -> Vec<f64> + Send + Sync>;
/// Running reward h(t, x, u, v) -> R of the maximizing player.
pub type RunningRewardFn = Arc<dyn Fn(f64, &[f64], f64, f64) -> f64 + Send + Sync>;

/// Data of the mixed game: reference dynamics with invertible volatility,
/// controlled drift and running reward over finite control grids, barrier
/// payoffs and terminal reward.
#[derive(Clone)]
pub struct GameSpec {
    pub sde: SdeSpec,
    pub phi: ControlledDriftFn,
    pub h_run: RunningRewardFn,
    pub u_grid: Vec<f64>,
    pub v_grid: Vec<f64>,
    pub barriers: BarrierPair,
    pub terminal: TerminalCondition,
    /// Declared constant in the linear growth bound |h| + |phi| <= K(1 + ||x||).
    pub growth_k: f64,
}

impl GameSpec {
    /// Spot-checks the declared growth bound and the boundedness of
    /// sigma^{-1} along the sampled ensemble; returns the largest observed
    /// |sigma^{-1}|.
    pub fn validate_on(&self, ens: &PathEnsemble) -> Result<f64> {
        if self.u_grid.is_empty() || self.v_grid.is_empty() {
            return Err(Error::EmptyControlGrid);
        }
        let n = ens.grid().steps();
        let stride = (ens.num_paths() / 8).max(1);
        let mut max_inv = 0.0f64;
        for m in (0..ens.num_paths()).step_by(stride) {
            for i in (0..=n).step_by((n / 8).max(1)) {
                let t = ens.grid().node(i);
                let x = ens.state(m, i);
                let sup = ens.sup_norm_until(m, i);
                let inv = invert_vol(&self.sde, t, x, sup, m, i)?;
                max_inv = max_inv.max(matrix_norm(&inv));
                let bound = self.growth_k * (1.0 + sup);
                for &u in &self.u_grid {
                    for &v in &self.v_grid {
                        let phi = (self.phi)(t, x, u, v);
                        let h = (self.h_run)(t, x, u, v);
                        let value = h.abs() + norm(&phi);
                        if !(value <= bound) {
                            return Err(Error::GameGrowthBound { t, value, bound });
                        }
                    }
                }
            }
        }
        Ok(max_inv)
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn matrix_norm(m: &[f64]) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Row-major inverse of the volatility matrix at (t, x).
fn invert_vol(
    sde: &SdeSpec,
    t: f64,
    x: &[f64],
    sup: f64,
    path: usize,
    step: usize,
) -> Result<Vec<f64>> {
    let d = sde.dim;
    let s = (sde.vol)(t, x, sup);
    if d == 1 {
        if s[0] == 0.0 || !s[0].is_finite() {
            return Err(Error::SingularVolatility { t, path, step });
        }
        return Ok(vec![1.0 / s[0]]);
    }
    let m = DMatrix::from_row_slice(d, d, &s);
    match m.try_inverse() {
        Some(inv) => Ok(inv.transpose().as_slice().to_vec()),
        None => Err(Error::SingularVolatility { t, path, step }),
    }
}

fn mat_vec(d: usize, m: &[f64], v: &[f64]) -> Vec<f64> {
    (0..d)
        .map(|r| (0..d).map(|c| m[r * d + c] * v[c]).sum())
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Value and saddle selections of the Hamiltonian at one point.
#[derive(Debug, Clone, Copy)]
pub struct HamiltonianSaddle {
    /// infsup value H*.
    pub value: f64,
    pub u_star: f64,
    pub v_star: f64,
    pub u_index: usize,
    pub v_index: usize,
    /// infsup - supinf; exactly zero when the Isaacs condition holds on
    /// the grids.
    pub isaacs_gap: f64,
}

/// Brute-force infsup/supinf of H over the control grids with
/// lowest-index tie-breaks. Both sweeps read the same stored table, so a
/// separable Hamiltonian produces a gap of exactly zero.
pub fn hamiltonian_saddle(spec: &GameSpec, t: f64, x: &[f64], z: &[f64]) -> Result<HamiltonianSaddle> {
    if spec.u_grid.is_empty() || spec.v_grid.is_empty() {
        return Err(Error::EmptyControlGrid);
    }
    let d = spec.sde.dim;
    let sup = norm(x);
    let inv = invert_vol(&spec.sde, t, x, sup, 0, 0)?;
    let zsi: Vec<f64> = {
        // z^T sigma^{-1} as a row vector
        (0..d).map(|c| (0..d).map(|r| z[r] * inv[r * d + c]).sum()).collect()
    };
    let nu = spec.u_grid.len();
    let nv = spec.v_grid.len();
    let mut table = vec![0.0f64; nu * nv];
    for (iu, &u) in spec.u_grid.iter().enumerate() {
        for (iv, &v) in spec.v_grid.iter().enumerate() {
            let phi = (spec.phi)(t, x, u, v);
            let h = (spec.h_run)(t, x, u, v);
            table[iu * nv + iv] = dot(&zsi, &phi) + h;
        }
    }

    // infsup: minimize over u the row maxima.
    let mut best_u = 0;
    let mut infsup = f64::INFINITY;
    for iu in 0..nu {
        let row_max = table[iu * nv..(iu + 1) * nv]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        if row_max < infsup {
            infsup = row_max;
            best_u = iu;
        }
    }
    // supinf: maximize over v the column minima.
    let mut best_v = 0;
    let mut supinf = f64::NEG_INFINITY;
    for iv in 0..nv {
        let col_min = (0..nu)
            .map(|iu| table[iu * nv + iv])
            .fold(f64::INFINITY, f64::min);
        if col_min > supinf {
            supinf = col_min;
            best_v = iv;
        }
    }

    Ok(HamiltonianSaddle {
        value: infsup,
        u_star: spec.u_grid[best_u],
        v_star: spec.v_grid[best_v],
        u_index: best_u,
        v_index: best_v,
        isaacs_gap: infsup - supinf,
    })
}

/// Reflected-BSDE solution of the game together with the recorded saddle
/// policies along the ensemble.
#[derive(Debug, Clone)]
pub struct GameSolution {
    pub bsde: BsdeSolution,
    /// Saddle controls at (t_i, X_i, Z_i), M x N.
    pub u_ctrl: Vec<Vec<f64>>,
    pub v_ctrl: Vec<Vec<f64>>,
    pub isaacs_gap_max: f64,
}

/// Builds a generator from the Hamiltonian and the growth constants
/// observed on the ensemble, then runs the direct projection scheme and
/// records the saddle selections along the solved path.
pub fn solve_game_bsde(
    spec: &GameSpec,
    ens: &PathEnsemble,
    basis: &RegressionBasis,
    cfg: &LsmcConfig,
) -> Result<GameSolution> {
    spec.validate_on(ens)?;

    // Envelope constants for H*(t,x,z) = z sigma^{-1} phi + h over the
    // ensemble's state range: |H*| <= B + A|z| with A = max |sigma^{-1}phi|
    // and B = max |h|, and A|z| <= A e + A |z| sqrt(|ln|z||) for all z.
    let n = ens.grid().steps();
    let mut a_max = 0.0f64;
    let mut b_max = 0.0f64;
    for m in 0..ens.num_paths() {
        for i in 0..=n {
            let t = ens.grid().node(i);
            let x = ens.state(m, i);
            let sup = ens.sup_norm_until(m, i);
            let inv = invert_vol(&spec.sde, t, x, sup, m, i)?;
            for &u in &spec.u_grid {
                for &v in &spec.v_grid {
                    let phi = (spec.phi)(t, x, u, v);
                    a_max = a_max.max(norm(&mat_vec(spec.sde.dim, &inv, &phi)));
                    b_max = b_max.max((spec.h_run)(t, x, u, v).abs());
                }
            }
        }
    }
    let driver_spec = {
        let spec = spec.clone();
        GeneratorSpec::new(
            Arc::new(move |t, x, _y, z| {
                hamiltonian_saddle(&spec, t, x, z).map(|s| s.value).unwrap_or(f64::NAN)
            }),
            b_max + a_max * std::f64::consts::E,
            0.0,
            a_max,
        )?
    };

    let bsde = solve_double_barrier_direct(
        &driver_spec,
        &spec.terminal,
        &spec.barriers,
        ens,
        basis,
        cfg,
    )?;

    let m_paths = ens.num_paths();
    let mut u_ctrl = vec![vec![0.0; n]; m_paths];
    let mut v_ctrl = vec![vec![0.0; n]; m_paths];
    let mut gap_max = 0.0f64;
    for m in 0..m_paths {
        for i in 0..n {
            let t = ens.grid().node(i);
            let saddle = hamiltonian_saddle(spec, t, ens.state(m, i), &bsde.quad.z[m][i])?;
            u_ctrl[m][i] = saddle.u_star;
            v_ctrl[m][i] = saddle.v_star;
            gap_max = gap_max.max(saddle.isaacs_gap.abs());
        }
    }

    Ok(GameSolution { bsde, u_ctrl, v_ctrl, isaacs_gap_max: gap_max })
}

/// First hitting node of each barrier with a hit tolerance: sigma* for the
/// lower barrier, tau* for the upper one; N when the barrier is never
/// approached.
#[derive(Debug, Clone)]
pub struct StoppingTimes {
    pub tau: Vec<usize>,
    pub sigma: Vec<usize>,
}

pub fn saddle_stopping_times(
    sol: &SolutionQuadruple,
    barriers: &BarrierPair,
    ens: &PathEnsemble,
    tol_hit: f64,
) -> StoppingTimes {
    let n = sol.num_steps();
    let m_paths = sol.num_paths();
    let mut tau = vec![n; m_paths];
    let mut sigma = vec![n; m_paths];
    for m in 0..m_paths {
        for i in 0..=n {
            let t = ens.grid().node(i);
            let x = ens.state(m, i);
            let lo = barriers.lower.eval(t, x);
            let up = barriers.upper.eval(t, x);
            if sigma[m] == n && lo.is_finite() && sol.y[m][i] <= lo + tol_hit && i < n {
                sigma[m] = i;
            }
            if tau[m] == n && up.is_finite() && sol.y[m][i] >= up - tol_hit && i < n {
                tau[m] = i;
            }
        }
    }
    StoppingTimes { tau, sigma }
}

/// A pair of control tables with stopping nodes; the payoff functional is
/// evaluated on exactly these.
#[derive(Debug, Clone)]
pub struct StrategyProfile {
    /// M x N control values along the paths.
    pub u_ctrl: Vec<Vec<f64>>,
    pub v_ctrl: Vec<Vec<f64>>,
    /// Stopping node of the minimizer (upper-barrier clock), per path.
    pub tau: Vec<usize>,
    /// Stopping node of the maximizer (lower-barrier clock), per path.
    pub sigma: Vec<usize>,
}

impl StrategyProfile {
    pub fn from_solution(sol: &GameSolution, stops: &StoppingTimes) -> Self {
        Self {
            u_ctrl: sol.u_ctrl.clone(),
            v_ctrl: sol.v_ctrl.clone(),
            tau: stops.tau.clone(),
            sigma: stops.sigma.clone(),
        }
    }

    /// Grid membership of every control and bounds on the stopping nodes.
    pub fn validate(&self, spec: &GameSpec, n_steps: usize) -> Result<()> {
        let on_grid = |grid: &[f64], c: f64| grid.iter().any(|&g| g == c);
        for (table, grid, name) in [
            (&self.u_ctrl, &spec.u_grid, "u"),
            (&self.v_ctrl, &spec.v_grid, "v"),
        ] {
            for row in table.iter() {
                for &c in row {
                    if !on_grid(grid, c) {
                        return Err(Error::InvalidParam(format!(
                            "{name}-control {c} is not a grid element"
                        )));
                    }
                }
            }
        }
        if self.tau.iter().chain(&self.sigma).any(|&i| i > n_steps) {
            return Err(Error::InvalidParam("stopping index exceeds the grid".into()));
        }
        Ok(())
    }
}

/// Per-path Girsanov weights for the controlled measure.
#[derive(Debug, Clone)]
pub struct WeightReport {
    pub weights: Vec<f64>,
    pub mean: f64,
    /// Standard error of the mean; the mean of an exact discrete
    /// stochastic exponential is 1.
    pub se: f64,
}

/// Discrete stochastic exponential
/// exp( sum_i theta_i . dB_i - 1/2 sum_i |theta_i|^2 dt ) with
/// theta_i = sigma^{-1}(t_i, X_i) phi(t_i, X_i, u_i, v_i).
pub fn girsanov_weight(
    spec: &GameSpec,
    ens: &PathEnsemble,
    u_ctrl: &[Vec<f64>],
    v_ctrl: &[Vec<f64>],
) -> Result<WeightReport> {
    let n = ens.grid().steps();
    let dt = ens.grid().dt();
    let d = spec.sde.dim;
    let m_paths = ens.num_paths();
    let mut weights = Vec::with_capacity(m_paths);
    for m in 0..m_paths {
        let mut log_w = 0.0;
        for i in 0..n {
            let t = ens.grid().node(i);
            let x = ens.state(m, i);
            let sup = ens.sup_norm_until(m, i);
            let inv = invert_vol(&spec.sde, t, x, sup, m, i)?;
            let phi = (spec.phi)(t, x, u_ctrl[m][i], v_ctrl[m][i]);
            let theta = mat_vec(d, &inv, &phi);
            log_w += dot(&theta, ens.increment(m, i)) - 0.5 * dot(&theta, &theta) * dt;
        }
        // Positive overflow breaks the estimate, extreme underflow breaks
        // the positivity of the weights; both get flagged.
        if log_w.abs() > 700.0 {
            return Err(Error::WeightOverflow { path: m, log_weight: log_w });
        }
        weights.push(log_w.exp());
    }
    let mean = weights.iter().sum::<f64>() / m_paths as f64;
    let var = weights.iter().map(|w| (w - mean).powi(2)).sum::<f64>()
        / (m_paths.max(2) - 1) as f64;
    let se = (var / m_paths as f64).sqrt();
    Ok(WeightReport { weights, mean, se })
}

#[derive(Debug, Clone, Copy)]
pub struct PayoffEstimate {
    pub j: f64,
    pub se: f64,
}

/// Girsanov-weighted Monte Carlo payoff
/// E^(u,v)[ int_0^{tau^sigma} h ds + L_sigma 1{sigma<=tau<T}
///          + U_tau 1{tau<sigma} + xi 1{tau^sigma=T} ],
/// with the indicator structure applied verbatim on grid indices and the
/// importance weights reported raw.
pub fn payoff_estimate(
    spec: &GameSpec,
    ens: &PathEnsemble,
    profile: &StrategyProfile,
) -> Result<PayoffEstimate> {
    let n = ens.grid().steps();
    let dt = ens.grid().dt();
    let weights = girsanov_weight(spec, ens, &profile.u_ctrl, &profile.v_ctrl)?;
    let m_paths = ens.num_paths();
    let mut contributions = Vec::with_capacity(m_paths);
    for m in 0..m_paths {
        let tau = profile.tau[m];
        let sigma = profile.sigma[m];
        let stop = tau.min(sigma);
        let mut running = 0.0;
        for i in 0..stop {
            let t = ens.grid().node(i);
            running +=
                (spec.h_run)(t, ens.state(m, i), profile.u_ctrl[m][i], profile.v_ctrl[m][i]) * dt;
        }
        let mut payoff = running;
        if sigma <= tau && tau < n {
            let t = ens.grid().node(sigma);
            payoff += spec.barriers.lower.eval(t, ens.state(m, sigma));
        } else if tau < sigma {
            let t = ens.grid().node(tau);
            payoff += spec.barriers.upper.eval(t, ens.state(m, tau));
        } else if stop == n {
            payoff += spec.terminal.eval(ens.terminal_state(m));
        }
        contributions.push(weights.weights[m] * payoff);
    }
    let j = contributions.iter().sum::<f64>() / m_paths as f64;
    let var = contributions.iter().map(|c| (c - j).powi(2)).sum::<f64>()
        / (m_paths.max(2) - 1) as f64;
    Ok(PayoffEstimate { j, se: (var / m_paths as f64).sqrt() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbationSide {
    /// Perturbs (v, sigma) of the maximizer; the payoff must not rise.
    Maximizer,
    /// Perturbs (u, tau) of the minimizer; the payoff must not fall.
    Minimizer,
}

#[derive(Debug, Clone)]
pub struct PerturbationTrial {
    pub side: PerturbationSide,
    pub payoff: PayoffEstimate,
    pub violation: bool,
}

/// Saddle verification report.
#[derive(Debug, Clone)]
pub struct SaddleReport {
    pub j_star: PayoffEstimate,
    /// |J* - Y*_0|.
    pub y0_gap: f64,
    pub trials: Vec<PerturbationTrial>,
    pub violations_maximizer: usize,
    pub violations_minimizer: usize,
}

impl SaddleReport {
    pub fn is_pass(&self) -> bool {
        self.violations_maximizer == 0 && self.violations_minimizer == 0
    }
}

/// Checks the saddle inequalities by random perturbation: deviations of
/// (v, sigma) must not raise the payoff beyond three combined standard
/// errors, deviations of (u, tau) must not lower it. Also reports the gap
/// between J* and the reflected-BSDE value Y*_0.
pub fn verify_saddle(
    spec: &GameSpec,
    ens: &PathEnsemble,
    sol: &GameSolution,
    star: &StrategyProfile,
    perturbations: usize,
    seed: u64,
) -> Result<SaddleReport> {
    let n = ens.grid().steps();
    let j_star = payoff_estimate(spec, ens, star)?;
    let mut rng = rng_for(seed, "saddle-perturbations");
    let mut trials = Vec::with_capacity(2 * perturbations);
    let mut violations_maximizer = 0;
    let mut violations_minimizer = 0;

    for side in [PerturbationSide::Maximizer, PerturbationSide::Minimizer] {
        for _ in 0..perturbations {
            let mut profile = star.clone();
            // Replace the control by a random grid element on a random
            // time window (a deterministic-in-time, hence adapted,
            // deviation), and randomize the stopping rule.
            let (grid, table, stops) = match side {
                PerturbationSide::Maximizer => {
                    (&spec.v_grid, &mut profile.v_ctrl, &mut profile.sigma)
                }
                PerturbationSide::Minimizer => {
                    (&spec.u_grid, &mut profile.u_ctrl, &mut profile.tau)
                }
            };
            let ctrl = grid[rng.random_range(0..grid.len())];
            let a = rng.random_range(0..n);
            let b = rng.random_range(a..=n);
            for row in table.iter_mut() {
                for i in a..b {
                    row[i] = ctrl;
                }
            }
            if rng.random_bool(0.5) {
                let node = rng.random_range(0..=n);
                for s in stops.iter_mut() {
                    *s = (*s).min(node);
                }
            }
            let payoff = payoff_estimate(spec, ens, &profile)?;
            let slack = 3.0 * (payoff.se + j_star.se);
            let violation = match side {
                PerturbationSide::Maximizer => payoff.j > j_star.j + slack,
                PerturbationSide::Minimizer => payoff.j < j_star.j - slack,
            };
            if violation {
                match side {
                    PerturbationSide::Maximizer => violations_maximizer += 1,
                    PerturbationSide::Minimizer => violations_minimizer += 1,
                }
            }
            trials.push(PerturbationTrial { side, payoff, violation });
        }
    }

    Ok(SaddleReport {
        j_star,
        y0_gap: (j_star.j - sol.bsde.y0).abs(),
        trials,
        violations_maximizer,
        violations_minimizer,
    })
}

//! Discrete solution quadruples (Y, Z, K+, K-).

use crate::barrier::{BarrierPair, TerminalCondition};
use crate::error::{Error, Result};
use crate::forward::PathEnsemble;

/// Discrete (Y, Z, K+, K-) per path.
///
/// Shapes: `y`, `k_plus`, `k_minus` are M x (N+1); `z` is M x N x d.
/// `k_plus[m][i+1] - k_plus[m][i]` is the upward push applied while
/// computing Y at node i, so K starts at zero and is nondecreasing.
#[derive(Debug, Clone)]
pub struct SolutionQuadruple {
    pub y: Vec<Vec<f64>>,
    pub z: Vec<Vec<Vec<f64>>>,
    pub k_plus: Vec<Vec<f64>>,
    pub k_minus: Vec<Vec<f64>>,
}

impl SolutionQuadruple {
    pub fn zeros(paths: usize, steps: usize, dim: usize) -> Self {
        Self {
            y: vec![vec![0.0; steps + 1]; paths],
            z: vec![vec![vec![0.0; dim]; steps]; paths],
            k_plus: vec![vec![0.0; steps + 1]; paths],
            k_minus: vec![vec![0.0; steps + 1]; paths],
        }
    }

    pub fn num_paths(&self) -> usize {
        self.y.len()
    }

    pub fn num_steps(&self) -> usize {
        self.y.first().map_or(0, |p| p.len().saturating_sub(1))
    }

    pub fn matches_ensemble(&self, ens: &PathEnsemble) -> bool {
        self.num_paths() == ens.num_paths() && self.num_steps() == ens.grid().steps()
    }

    /// Total pushing mass K+_T + K-_T on one path.
    pub fn k_total(&self, path: usize) -> f64 {
        let n = self.num_steps();
        self.k_plus[path][n] + self.k_minus[path][n]
    }

    /// Checks the quadruple invariants against barriers and ensemble:
    /// K nondecreasing from 0, L - tol <= Y <= U + tol at every node, and
    /// Y_N = xi per path.
    pub fn validate(
        &self,
        barriers: &BarrierPair,
        xi: &TerminalCondition,
        ens: &PathEnsemble,
        tol: f64,
    ) -> Result<()> {
        if !self.matches_ensemble(ens) {
            return Err(Error::DimensionMismatch(format!(
                "solution is {} x {} but ensemble is {} x {}",
                self.num_paths(),
                self.num_steps(),
                ens.num_paths(),
                ens.grid().steps()
            )));
        }
        let n = self.num_steps();
        for m in 0..self.num_paths() {
            for k in [&self.k_plus, &self.k_minus] {
                if k[m][0] != 0.0 {
                    return Err(Error::InvalidParam(format!("K_0 != 0 on path {m}")));
                }
                for i in 0..n {
                    if k[m][i + 1] < k[m][i] {
                        return Err(Error::InvalidParam(format!(
                            "K decreasing on path {m} at step {i}"
                        )));
                    }
                }
            }
            for i in 0..=n {
                let t = ens.grid().node(i);
                let x = ens.state(m, i);
                let lo = barriers.lower.eval(t, x);
                let up = barriers.upper.eval(t, x);
                let y = self.y[m][i];
                if y < lo - tol || y > up + tol {
                    return Err(Error::InvalidParam(format!(
                        "Y={y} outside [{lo}, {up}] (tol {tol}) on path {m} at step {i}"
                    )));
                }
            }
            let xi_m = xi.eval(ens.terminal_state(m));
            if (self.y[m][n] - xi_m).abs() > tol.max(1e-14) {
                return Err(Error::InvalidParam(format!(
                    "terminal mismatch on path {m}: Y_N={} vs xi={xi_m}",
                    self.y[m][n]
                )));
            }
        }
        Ok(())
    }
}

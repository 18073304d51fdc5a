//! Reflecting barriers and terminal conditions.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::forward::PathEnsemble;

pub type BarrierFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
pub type TerminalFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A single barrier map (t, x) -> R. May be identically -inf (absent lower
/// barrier) or +inf (absent upper barrier).
#[derive(Clone)]
pub struct Barrier {
    f: BarrierFn,
}

impl Barrier {
    pub fn new(f: BarrierFn) -> Self {
        Self { f }
    }

    pub fn constant(level: f64) -> Self {
        Self { f: Arc::new(move |_, _| level) }
    }

    /// Absent lower barrier: identically -inf.
    pub fn none_lower() -> Self {
        Self { f: Arc::new(|_, _| f64::NEG_INFINITY) }
    }

    /// Absent upper barrier: identically +inf.
    pub fn none_upper() -> Self {
        Self { f: Arc::new(|_, _| f64::INFINITY) }
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> f64 {
        (self.f)(t, x)
    }
}

/// Strictly separated barrier pair L < U.
#[derive(Clone)]
pub struct BarrierPair {
    pub lower: Barrier,
    pub upper: Barrier,
}

impl BarrierPair {
    pub fn new(lower: Barrier, upper: Barrier) -> Self {
        Self { lower, upper }
    }

    pub fn lower_only(lower: Barrier) -> Self {
        Self { lower, upper: Barrier::none_upper() }
    }

    pub fn upper_only(upper: Barrier) -> Self {
        Self { lower: Barrier::none_lower(), upper }
    }

    /// Checks L(t, x) < U(t, x) at every grid point of the ensemble where
    /// both barriers are finite.
    pub fn validate_on(&self, ens: &PathEnsemble) -> Result<()> {
        for m in 0..ens.num_paths() {
            for i in 0..ens.grid().num_nodes() {
                let t = ens.grid().node(i);
                let x = ens.state(m, i);
                let lo = self.lower.eval(t, x);
                let up = self.upper.eval(t, x);
                if lo.is_finite() && up.is_finite() && !(lo < up) {
                    return Err(Error::BarrierOrdering { t, lower: lo, upper: up });
                }
            }
        }
        Ok(())
    }
}

/// Terminal condition xi as a map of the terminal state.
#[derive(Clone)]
pub struct TerminalCondition {
    f: TerminalFn,
}

impl TerminalCondition {
    pub fn new(f: TerminalFn) -> Self {
        Self { f }
    }

    pub fn constant(value: f64) -> Self {
        Self { f: Arc::new(move |_| value) }
    }

    pub fn eval(&self, x_terminal: &[f64]) -> f64 {
        (self.f)(x_terminal)
    }

    /// Checks L(T, x) <= xi(x) <= U(T, x) on every sampled terminal state.
    pub fn validate_sandwich(&self, barriers: &BarrierPair, ens: &PathEnsemble) -> Result<()> {
        let t_end = ens.grid().horizon();
        let last = ens.grid().steps();
        for m in 0..ens.num_paths() {
            let x = ens.state(m, last);
            let xi = self.eval(x);
            let lo = barriers.lower.eval(t_end, x);
            let up = barriers.upper.eval(t_end, x);
            if !(xi >= lo && xi <= up) {
                return Err(Error::TerminalOutsideBand { path: m, xi, lower: lo, upper: up });
            }
        }
        Ok(())
    }
}

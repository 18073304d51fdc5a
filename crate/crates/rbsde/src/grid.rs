use crate::error::{Error, Result};

/// Uniform time grid t_i = i T / N on [0, T].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() || steps == 0 {
            return Err(Error::InvalidGrid { horizon, steps });
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Number of steps N; the grid has N + 1 nodes.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn num_nodes(&self) -> usize {
        self.steps + 1
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// Node t_i. `node(0) = 0` and `node(N) = T` exactly.
    pub fn node(&self, i: usize) -> f64 {
        debug_assert!(i <= self.steps);
        if i == self.steps {
            self.horizon
        } else {
            i as f64 * self.horizon / self.steps as f64
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.steps).map(move |i| self.node(i))
    }
}

//! Driver evaluation with safe handling of the logarithmic singularities,
//! plus the growth-envelope diagnostic.

use std::sync::Arc;

use crate::error::{Error, Result};

/// Driver map f(t, x, y, z) -> R.
pub type DriverFn = Arc<dyn Fn(f64, &[f64], f64, &[f64]) -> f64 + Send + Sync>;

/// y ln|y| extended continuously by 0 at y = 0.
pub fn safe_ylogy(y: f64) -> f64 {
    if y == 0.0 {
        0.0
    } else {
        y * y.abs().ln()
    }
}

/// r sqrt(|ln r|) for r >= 0, extended continuously by 0 at r = 0.
/// The |ln| keeps the envelope defined on (0, 1); at r = 1 the term is 0.
pub fn safe_zsqrtlog(r: f64) -> f64 {
    debug_assert!(r >= 0.0);
    if r == 0.0 {
        0.0
    } else {
        r * r.ln().abs().sqrt()
    }
}

fn norm(z: &[f64]) -> f64 {
    z.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// An evaluable driver together with its declared log-growth envelope
/// |f| <= eta_bound + c0 |y||ln|y|| + c1 |z| sqrt(|ln|z||).
#[derive(Clone)]
pub struct GeneratorSpec {
    driver: DriverFn,
    pub eta_bound: f64,
    pub c0: f64,
    pub c1: f64,
}

impl std::fmt::Debug for GeneratorSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GeneratorSpec")
            .field("eta_bound", &self.eta_bound)
            .field("c0", &self.c0)
            .field("c1", &self.c1)
            .finish_non_exhaustive()
    }
}

impl GeneratorSpec {
    pub fn new(driver: DriverFn, eta_bound: f64, c0: f64, c1: f64) -> Result<Self> {
        for (name, v) in [("eta_bound", eta_bound), ("c0", c0), ("c1", c1)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParam(format!(
                    "generator envelope constant {name} must be a finite nonnegative real, got {v}"
                )));
            }
        }
        Ok(Self { driver, eta_bound, c0, c1 })
    }

    pub fn zero() -> Self {
        Self { driver: Arc::new(|_, _, _, _| 0.0), eta_bound: 0.0, c0: 0.0, c1: 0.0 }
    }

    pub fn constant(c: f64) -> Self {
        Self { driver: Arc::new(move |_, _, _, _| c), eta_bound: c.abs(), c0: 0.0, c1: 0.0 }
    }

    /// The prototype log-growth driver f(y) = -K y ln|y|.
    pub fn neg_y_log_y(k: f64) -> Self {
        Self {
            driver: Arc::new(move |_, _, y, _| -k * safe_ylogy(y)),
            eta_bound: 0.0,
            c0: k.abs(),
            c1: 0.0,
        }
    }

    /// f(z) = c |z| sqrt(|ln|z||) on the Euclidean norm of z.
    pub fn z_sqrt_log(c: f64) -> Self {
        Self {
            driver: Arc::new(move |_, _, _, z| c * safe_zsqrtlog(norm(z))),
            eta_bound: 0.0,
            c0: 0.0,
            c1: c.abs(),
        }
    }

    /// Same driver shifted by a constant: f + c. The envelope absorbs |c|.
    pub fn with_offset(&self, c: f64) -> Self {
        let inner = self.driver.clone();
        Self {
            driver: Arc::new(move |t, x, y, z| inner(t, x, y, z) + c),
            eta_bound: self.eta_bound + c.abs(),
            c0: self.c0,
            c1: self.c1,
        }
    }

    /// Growth envelope eta + c0 |y||ln|y|| + c1 |z| sqrt(|ln|z||) at (y, z).
    pub fn envelope(&self, y: f64, z: &[f64]) -> f64 {
        self.eta_bound + self.c0 * safe_ylogy(y).abs() + self.c1 * safe_zsqrtlog(norm(z))
    }
}

/// Evaluates the driver, rejecting non-finite output with a diagnostic
/// naming the offending input.
pub fn eval_generator(spec: &GeneratorSpec, t: f64, x: &[f64], y: f64, z: &[f64]) -> Result<f64> {
    let v = (spec.driver)(t, x, y, z);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteGenerator { t, y, z_norm: norm(z), value: v })
    }
}

/// One probe point for the growth-envelope check.
#[derive(Debug, Clone)]
pub struct GrowthSample {
    pub t: f64,
    pub x: Vec<f64>,
    pub y: f64,
    pub z: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GrowthViolation {
    pub index: usize,
    pub value: f64,
    pub envelope: f64,
    pub y: f64,
    pub z_norm: f64,
}

/// Report produced by [`check_log_growth`]; empty violation list means pass.
#[derive(Debug, Clone, Default)]
pub struct GrowthReport {
    pub checked: usize,
    pub violations: Vec<GrowthViolation>,
}

impl GrowthReport {
    pub fn is_pass(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Lists every sample where |f| exceeds the declared envelope
/// eta + c0 |y||ln|y|| + c1 |z| sqrt(|ln|z||). Report-only: never fails.
/// Envelope equality passes, and a relative rounding allowance keeps
/// sub-ulp float effects in composite drivers from being flagged.
pub fn check_log_growth(spec: &GeneratorSpec, samples: &[GrowthSample]) -> GrowthReport {
    let mut report = GrowthReport { checked: samples.len(), violations: Vec::new() };
    for (index, s) in samples.iter().enumerate() {
        let value = (spec.driver)(s.t, &s.x, s.y, &s.z).abs();
        let envelope = spec.envelope(s.y, &s.z);
        if !(value <= envelope * (1.0 + 1e-12)) {
            report.violations.push(GrowthViolation {
                index,
                value,
                envelope,
                y: s.y,
                z_norm: norm(&s.z),
            });
        }
    }
    report
}

/// Integrability exponents for the terminal-moment diagnostic: the moment
/// exponent is e^{lambda T} + 1 with lambda a config knob (the theory only
/// requires it "large enough"), and p in (1, 2).
#[derive(Debug, Clone, Copy)]
pub struct DiagnosticsConfig {
    pub lambda: f64,
    pub p: f64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self { lambda: 1.0, p: 1.5 }
    }
}

impl DiagnosticsConfig {
    pub fn new(lambda: f64, p: f64) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidParam(format!("lambda must be positive, got {lambda}")));
        }
        if !(p > 1.0 && p < 2.0) {
            return Err(Error::InvalidParam(format!("p must lie in (1, 2), got {p}")));
        }
        Ok(Self { lambda, p })
    }

    /// Moment exponent e^{lambda T} + 1 used on the terminal value.
    pub fn moment_exponent(&self, horizon: f64) -> f64 {
        (self.lambda * horizon).exp() + 1.0
    }

    /// Monte Carlo estimate of E|xi|^{e^{lambda T}+1}; errors on overflow.
    pub fn terminal_moment(&self, xi_values: &[f64], horizon: f64) -> Result<f64> {
        let q = self.moment_exponent(horizon);
        let mut acc = 0.0;
        for (path, &v) in xi_values.iter().enumerate() {
            let m = v.abs().powf(q);
            if !m.is_finite() {
                return Err(Error::MomentOverflow { path, exponent: q });
            }
            acc += m;
        }
        Ok(acc / xi_values.len().max(1) as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn continuous_extensions_at_zero() {
        assert_eq!(safe_ylogy(0.0), 0.0);
        assert_eq!(safe_zsqrtlog(0.0), 0.0);
        assert_eq!(safe_zsqrtlog(1.0), 0.0); // |ln 1| = 0
    }

    #[test]
    fn prototype_values() {
        let g = GeneratorSpec::neg_y_log_y(1.0);
        // f(0) = 0 by continuous extension, f(e) = -e since ln e = 1.
        assert_eq!(eval_generator(&g, 0.0, &[], 0.0, &[]).unwrap(), 0.0);
        let v = eval_generator(&g, 0.0, &[], std::f64::consts::E, &[]).unwrap();
        assert!((v + std::f64::consts::E).abs() < 1e-14);
    }

    #[test]
    fn z_term_at_norm_e() {
        // |z| = e gives |z| sqrt(|ln|z||) = e.
        let g = GeneratorSpec::z_sqrt_log(1.0);
        let v = eval_generator(&g, 0.0, &[], 0.0, &[std::f64::consts::E, 0.0]).unwrap();
        assert!((v - std::f64::consts::E).abs() < 1e-14);
    }

    #[test]
    fn growth_check_zero_driver_passes() {
        let g = GeneratorSpec::zero();
        let samples: Vec<GrowthSample> = (0..10)
            .map(|i| GrowthSample { t: 0.1 * i as f64, x: vec![0.0], y: i as f64, z: vec![1.0] })
            .collect();
        assert!(check_log_growth(&g, &samples).is_pass());
    }

    #[test]
    fn growth_check_flags_understated_constant() {
        // f(y) = -2 y ln|y| declared with c0 = 1: at y = e^2,
        // |f| = 2 * 2 e^2 exceeds the envelope 1 * 2 e^2.
        let f = GeneratorSpec::neg_y_log_y(2.0);
        let understated = GeneratorSpec::new(
            Arc::new(move |t, x, y, z| (f.driver)(t, x, y, z)),
            0.0,
            1.0,
            0.0,
        )
        .unwrap();
        let y = std::f64::consts::E.powi(2);
        let report = check_log_growth(
            &understated,
            &[GrowthSample { t: 0.0, x: vec![], y, z: vec![] }],
        );
        assert_eq!(report.violations.len(), 1);
        assert!(report.violations[0].value > report.violations[0].envelope);
    }

    #[test]
    fn growth_check_passes_with_envelope_equality() {
        // |f| = c0 |y||ln|y|| exactly: equality is not a violation.
        let g = GeneratorSpec::neg_y_log_y(1.0);
        let mut samples = Vec::new();
        let mut v = -10.0;
        while v <= 10.0 {
            samples.push(GrowthSample { t: 0.0, x: vec![], y: v, z: vec![] });
            v += 0.2;
        }
        assert_eq!(samples.len() > 90, true);
        assert!(check_log_growth(&g, &samples).is_pass());
    }

    #[test]
    fn diagnostics_config_bounds() {
        assert!(DiagnosticsConfig::new(0.0, 1.5).is_err());
        assert!(DiagnosticsConfig::new(1.0, 2.0).is_err());
        assert!(DiagnosticsConfig::new(1.0, 1.5).is_ok());
        let d = DiagnosticsConfig::default();
        assert!((d.moment_exponent(1.0) - (1.0f64.exp() + 1.0)).abs() < 1e-15);
        assert!(d.terminal_moment(&[1.0, 2.0], 1.0).unwrap().is_finite());
        assert!(d.terminal_moment(&[f64::MAX], 1.0).is_err());
    }

    proptest! {
        // y -> f(y) is continuous at 0: sequences y_k -> 0 give f(y_k) -> f(0).
        #[test]
        fn ylogy_vanishes_near_zero(scale in 1e-12f64..1e-3) {
            let v = safe_ylogy(scale);
            prop_assert!(v.abs() <= scale * scale.abs().ln().abs() + 1e-300);
            prop_assert!(v.abs() < 1e-2);
            prop_assert!(safe_ylogy(-scale) == -v);
        }

        #[test]
        fn zsqrtlog_finite_and_small_near_zero(scale in 1e-12f64..1e-3) {
            let v = safe_zsqrtlog(scale);
            prop_assert!(v.is_finite());
            prop_assert!(v < 1e-2);
        }

        #[test]
        fn eval_is_deterministic_and_finite(y in -50.0f64..50.0, z in -50.0f64..50.0) {
            let g = GeneratorSpec::neg_y_log_y(1.3).with_offset(0.7);
            let a = eval_generator(&g, 0.5, &[0.0], y, &[z]).unwrap();
            let b = eval_generator(&g, 0.5, &[0.0], y, &[z]).unwrap();
            prop_assert_eq!(a, b);
            prop_assert!(a.is_finite());
        }
    }
}

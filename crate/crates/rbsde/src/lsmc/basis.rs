//! Regression bases for the conditional-expectation projections.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

/// Basis family: global polynomials of bounded total degree, or
/// piecewise-constant bins (d = 1 only).
#[derive(Debug, Clone, PartialEq)]
pub enum BasisFamily {
    Polynomial { degree: usize },
    Bins { count: usize },
}

/// Basis functions of the state, with domain clip bounds. States are
/// clipped to `[clip_lo, clip_hi]` per coordinate and mapped affinely to
/// [-1, 1] before powers are taken, which keeps the normal equations
/// well conditioned.
#[derive(Debug, Clone)]
pub struct RegressionBasis {
    pub family: BasisFamily,
    pub clip_lo: f64,
    pub clip_hi: f64,
}

impl RegressionBasis {
    pub fn polynomial(degree: usize, clip_lo: f64, clip_hi: f64) -> Result<Self> {
        if !(clip_lo < clip_hi) {
            return Err(Error::InvalidParam(format!(
                "clip bounds must satisfy lo < hi, got [{clip_lo}, {clip_hi}]"
            )));
        }
        Ok(Self { family: BasisFamily::Polynomial { degree }, clip_lo, clip_hi })
    }

    pub fn bins(count: usize, clip_lo: f64, clip_hi: f64) -> Result<Self> {
        if count == 0 || !(clip_lo < clip_hi) {
            return Err(Error::InvalidParam("bins need count >= 1 and lo < hi".into()));
        }
        Ok(Self { family: BasisFamily::Bins { count }, clip_lo, clip_hi })
    }

    /// Number of basis functions in dimension `dim`.
    pub fn size(&self, dim: usize) -> usize {
        match self.family {
            BasisFamily::Polynomial { degree } => {
                // multi-indices with total degree <= degree: C(dim+degree, degree)
                let mut n: usize = 1;
                for k in 1..=degree.min(usize::MAX) {
                    n = n * (dim + k) / k;
                }
                n
            }
            BasisFamily::Bins { count } => count,
        }
    }

    fn scale(&self, v: f64) -> f64 {
        let c = v.clamp(self.clip_lo, self.clip_hi);
        (2.0 * c - (self.clip_lo + self.clip_hi)) / (self.clip_hi - self.clip_lo)
    }

    fn bin_index(&self, x: &[f64], count: usize) -> usize {
        let u = 0.5 * (self.scale(x[0]) + 1.0); // in [0, 1]
        ((u * count as f64) as usize).min(count - 1)
    }

    /// Evaluates all basis functions at `x` into `out`.
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        match self.family {
            BasisFamily::Polynomial { degree } => {
                let dim = x.len();
                let scaled: Vec<f64> = x.iter().map(|&v| self.scale(v)).collect();
                let mut idx = 0;
                let mut multi = vec![0usize; dim];
                emit_monomials(&scaled, &mut multi, 0, degree, &mut |value| {
                    out[idx] = value;
                    idx += 1;
                });
                debug_assert_eq!(idx, out.len());
            }
            BasisFamily::Bins { count } => {
                out.fill(0.0);
                out[self.bin_index(x, count)] = 1.0;
            }
        }
    }
}

/// Recursively enumerates monomials prod scaled[k]^multi[k] with total
/// degree <= budget, in a fixed deterministic order.
fn emit_monomials(
    scaled: &[f64],
    multi: &mut [usize],
    coord: usize,
    budget: usize,
    emit: &mut impl FnMut(f64),
) {
    if coord == scaled.len() {
        let mut v = 1.0;
        for (k, &p) in multi.iter().enumerate() {
            for _ in 0..p {
                v *= scaled[k];
            }
        }
        emit(v);
        return;
    }
    for p in 0..=budget {
        multi[coord] = p;
        emit_monomials(scaled, multi, coord + 1, budget - p, emit);
    }
    multi[coord] = 0;
}

/// A fitted conditional-expectation surrogate, evaluable at any state.
#[derive(Debug, Clone)]
pub struct FittedFn {
    basis: RegressionBasis,
    coeffs: Vec<f64>,
    /// Fallback value for a constant fit (degenerate states) and for empty
    /// bins in the bin family.
    mean: f64,
    constant_fit: bool,
    pub ridge_used: bool,
}

impl FittedFn {
    pub fn eval(&self, x: &[f64]) -> f64 {
        if self.constant_fit {
            return self.mean;
        }
        match self.basis.family {
            BasisFamily::Bins { count } => {
                let b = self.basis.bin_index(x, count);
                let c = self.coeffs[b];
                if c.is_nan() {
                    self.mean
                } else {
                    c
                }
            }
            BasisFamily::Polynomial { .. } => {
                let mut phi = vec![0.0; self.coeffs.len()];
                self.basis.eval_into(x, &mut phi);
                phi.iter().zip(&self.coeffs).map(|(p, c)| p * c).sum()
            }
        }
    }
}

/// Least-squares projection of `values` onto basis functions of `states`.
///
/// Rank-deficient normal equations fall back to a ridge-regularized solve
/// (flagged on the result). States with no spread collapse to a constant
/// fit equal to the sample mean, which is the exact conditional expectation
/// in the degenerate case.
pub fn regress_conditional_expectation(
    values: &[f64],
    states: &[&[f64]],
    basis: &RegressionBasis,
) -> Result<FittedFn> {
    let m = values.len();
    if m == 0 || m != states.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} values vs {} states",
            m,
            states.len()
        )));
    }
    let dim = states[0].len();
    let k = basis.size(dim);
    if m < k {
        return Err(Error::TooFewSamples { samples: m, basis_size: k });
    }
    let mean = values.iter().sum::<f64>() / m as f64;

    // Degenerate spread: every state identical up to rounding.
    let mut spread = 0.0f64;
    for s in states {
        for (a, b) in s.iter().zip(states[0].iter()) {
            spread = spread.max((a - b).abs());
        }
    }
    if spread < 1e-13 {
        return Ok(FittedFn {
            basis: basis.clone(),
            coeffs: Vec::new(),
            mean,
            constant_fit: true,
            ridge_used: false,
        });
    }

    if let BasisFamily::Bins { count } = basis.family {
        // Closed form: per-bin sample means; empty bins fall back to the
        // global mean at evaluation time.
        let mut sums = vec![0.0; count];
        let mut counts = vec![0usize; count];
        for (s, &v) in states.iter().zip(values) {
            let b = basis.bin_index(s, count);
            sums[b] += v;
            counts[b] += 1;
        }
        let coeffs = sums
            .iter()
            .zip(&counts)
            .map(|(&s, &c)| if c == 0 { f64::NAN } else { s / c as f64 })
            .collect();
        return Ok(FittedFn {
            basis: basis.clone(),
            coeffs,
            mean,
            constant_fit: false,
            ridge_used: false,
        });
    }

    // Normal equations G c = r with G = A^T A. K is small, so forming G is
    // cheaper and stabler (after scaling) than QR on the tall matrix.
    let mut g = DMatrix::<f64>::zeros(k, k);
    let mut r = DVector::<f64>::zeros(k);
    let mut phi = vec![0.0; k];
    for (s, &v) in states.iter().zip(values) {
        basis.eval_into(s, &mut phi);
        for a in 0..k {
            r[a] += phi[a] * v;
            for b in a..k {
                g[(a, b)] += phi[a] * phi[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            g[(a, b)] = g[(b, a)];
        }
    }

    let mut ridge_used = false;
    let coeffs = match Cholesky::new(g.clone()) {
        Some(ch) => ch.solve(&r),
        None => {
            ridge_used = true;
            let lambda = 1e-10 * (g.trace() / k as f64).max(1e-300);
            let mut g2 = g;
            for a in 0..k {
                g2[(a, a)] += lambda;
            }
            match Cholesky::new(g2) {
                Some(ch) => ch.solve(&r),
                None => DVector::from_element(k, 0.0),
            }
        }
    };

    Ok(FittedFn {
        basis: basis.clone(),
        coeffs: coeffs.iter().copied().collect(),
        mean,
        constant_fit: false,
        ridge_used,
    })
}

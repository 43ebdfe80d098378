//! Rational filtering by direct difference-equation recursion with zero
//! presample: every signal value at `t <= 0` is treated as 0.
//!
//! With a monic denominator the recursion is
//! `y(t) = sum_k num[k] x(t-k) - sum_{k>=1} den[k] y(t-k)`,
//! which makes filter composition exact at the sample level: cascading two
//! filters equals filtering once with the product filter, and `D/C` undoes
//! `C/D` sample for sample. That exactness is what later lets the prediction
//! error at the true parameters reproduce the driving noise to near machine
//! precision.

use crate::error::{Error, Result};
use crate::poly::{max_root_magnitude, RationalFilter};

/// Filters `x` through `f`, rejecting unstable denominators.
///
/// The error carries the offending maximum root magnitude. For deliberately
/// unstable short diagnostic runs use [`apply_filter_unchecked`].
pub fn apply_filter(f: &RationalFilter, x: &[f64]) -> Result<Vec<f64>> {
    if f.den.degree() > 0 && !f.den.is_stable()? {
        let mag = max_root_magnitude(&[&f.den])?;
        return Err(Error::UnstableDenominator(mag));
    }
    Ok(apply_filter_unchecked(f, x))
}

/// Filters `x` through `f` without a stability check on the denominator.
///
/// Intended for flagged diagnostic paths (an unstable intermediate dynamics
/// estimate still needs its output-error signal); output may overflow to
/// non-finite values on long records.
pub fn apply_filter_unchecked(f: &RationalFilter, x: &[f64]) -> Vec<f64> {
    let num = f.num.coeffs();
    let den = f.den.coeffs();
    let mut y = vec![0.0; x.len()];
    for t in 0..x.len() {
        let mut acc = 0.0;
        for (k, &b) in num.iter().enumerate() {
            if k > t {
                break;
            }
            acc += b * x[t - k];
        }
        for (k, &a) in den.iter().enumerate().skip(1) {
            if k > t {
                break;
            }
            acc -= a * y[t - k];
        }
        y[t] = acc;
    }
    y
}

/// First `len` samples of the filter's impulse response (input `1, 0, 0, ...`).
pub fn impulse_response(f: &RationalFilter, len: usize) -> Result<Vec<f64>> {
    let mut delta = vec![0.0; len];
    if len > 0 {
        delta[0] = 1.0;
    }
    apply_filter(f, &delta)
}

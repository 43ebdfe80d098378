//! Dense least squares via Householder QR, with an explicit rank guard.
//!
//! The unpivoted QR factorization underlying [`ls_solve`] does not detect
//! rank deficiency on its own (a singular triangular solve silently produces
//! non-finite entries), so the solver inspects the diagonal of `R` and
//! rejects systems whose diagonal ratio betrays numerical rank collapse.

use crate::error::{Error, Result};
use faer::linalg::solvers::{Qr, SolveLstsq};
use faer::Mat;

/// Minimum allowed ratio `min |r_ii| / max |r_ii|` of the QR diagonal.
pub const RANK_TOL: f64 = 1e-10;

/// Solution of an overdetermined linear system.
#[derive(Debug, Clone)]
pub struct LsSolution {
    /// Minimizer of `||y - X theta||^2`.
    pub theta: Vec<f64>,
    /// Residual sum of squares at the minimizer, recomputed explicitly.
    pub residual_ss: f64,
}

/// Solves `min ||y - X theta||` by QR factorization.
///
/// Requires `X` to have at least as many rows as columns and full numerical
/// column rank per [`RANK_TOL`]; rank collapse yields
/// [`Error::RankDeficient`] with the observed diagonal condition ratio.
pub fn ls_solve(x: &Mat<f64>, y: &[f64]) -> Result<LsSolution> {
    let (n, p) = (x.nrows(), x.ncols());
    assert_eq!(n, y.len(), "row count must match the regressand length");
    if p == 0 {
        return Err(Error::InvalidOrder("regressor matrix has no columns".into()));
    }
    if n < p {
        return Err(Error::DataTooShort { needed: p, got: n });
    }
    let qr = Qr::new(x.as_ref());
    check_r_diagonal(&qr, p)?;
    let rhs = Mat::from_fn(n, 1, |i, _| y[i]);
    let sol = qr.solve_lstsq(rhs.as_ref());
    let theta: Vec<f64> = (0..p).map(|i| sol[(i, 0)]).collect();
    let mut residual_ss = 0.0;
    for i in 0..n {
        let mut fit = 0.0;
        for j in 0..p {
            fit += x[(i, j)] * theta[j];
        }
        let r = y[i] - fit;
        residual_ss += r * r;
    }
    Ok(LsSolution { theta, residual_ss })
}

fn check_r_diagonal(qr: &Qr<f64>, p: usize) -> Result<()> {
    let r = qr.R();
    let mut min_abs = f64::INFINITY;
    let mut max_abs = 0.0f64;
    for i in 0..p {
        let v = r[(i, i)].abs();
        min_abs = min_abs.min(v);
        max_abs = max_abs.max(v);
    }
    if !(min_abs > RANK_TOL * max_abs) || !max_abs.is_finite() {
        let condition = if min_abs > 0.0 { max_abs / min_abs } else { f64::INFINITY };
        return Err(Error::RankDeficient { condition, threshold: RANK_TOL });
    }
    Ok(())
}

/// Builds a column-major matrix from a row-index/column-index generator.
pub fn mat_from_fn(nrows: usize, ncols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Mat<f64> {
    let mut m = Mat::zeros(nrows, ncols);
    for j in 0..ncols {
        for i in 0..nrows {
            m[(i, j)] = f(i, j);
        }
    }
    m
}

//! High-order equation-error (ARX) prefitting and order selection.
//!
//! The first pipeline stage fits `V(q) y = W(q) u + residual` with `V` monic
//! and `W` strictly delayed, both of order `m`. For large `m` the pair
//! `(V, W)` approximates `(D/C, B D/(F C))`, so the residual approximates the
//! driving noise — the property the later stages rely on. Order selection
//! minimizes an information criterion over a grid using one augmented QR
//! factorization, so the full grid costs little more than the largest fit.

use crate::error::{Error, Result};
use crate::filter::impulse_response;
use crate::lsq::{ls_solve, mat_from_fn, LsSolution, RANK_TOL};
use crate::model::BjModel;
use crate::poly::{max_root_magnitude, Polynomial, RationalFilter};
use faer::linalg::solvers::Qr;
use faer::Mat;
use serde::{Deserialize, Serialize};

/// Result of an order-`m` equation-error fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArxFit {
    /// Common order of the two polynomials.
    pub m: usize,
    /// Coefficients `v_1 .. v_m` of the monic output polynomial.
    pub theta_v: Vec<f64>,
    /// Coefficients `w_1 .. w_m` of the strictly delayed input polynomial.
    pub theta_w: Vec<f64>,
    /// Residual sum of squares of the fit.
    pub residual_ss: f64,
    /// Number of samples used.
    pub n: usize,
}

impl ArxFit {
    /// The monic output polynomial `V = 1 + v_1 q^-1 + ... + v_m q^-m`.
    pub fn v_poly(&self) -> Polynomial {
        let mut c = Vec::with_capacity(self.m + 1);
        c.push(1.0);
        c.extend_from_slice(&self.theta_v);
        Polynomial::new(c)
    }

    /// The strictly delayed input polynomial `W = w_1 q^-1 + ... + w_m q^-m`.
    pub fn w_poly(&self) -> Polynomial {
        let mut c = Vec::with_capacity(self.m + 1);
        c.push(0.0);
        c.extend_from_slice(&self.theta_w);
        Polynomial::new(c)
    }
}

/// Builds the `n x 2m` equation-error regressor with zero presample.
///
/// Row `t` is `[-y(t-1), ..., -y(t-m), u(t-1), ..., u(t-m)]`; samples before
/// the record start are taken as zero, so every output sample contributes a
/// row.
pub fn build_arx_regressor(u: &[f64], y: &[f64], m: usize) -> Mat<f64> {
    assert_eq!(u.len(), y.len(), "signals must have equal length");
    assert!(m >= 1, "order must be at least 1");
    let n = y.len();
    mat_from_fn(n, 2 * m, |t, j| {
        let (lag, src) = if j < m { (j + 1, y) } else { (j + 1 - m, u) };
        if t >= lag {
            let v = src[t - lag];
            if j < m {
                -v
            } else {
                v
            }
        } else {
            0.0
        }
    })
}

/// Fits the order-`m` equation-error model by least squares.
pub fn fit_arx(u: &[f64], y: &[f64], m: usize) -> Result<ArxFit> {
    let n = y.len();
    if n <= 2 * m {
        return Err(Error::DataTooShort { needed: 2 * m + 1, got: n });
    }
    let x = build_arx_regressor(u, y, m);
    let LsSolution { theta, residual_ss } = ls_solve(&x, y)?;
    Ok(ArxFit {
        m,
        theta_v: theta[..m].to_vec(),
        theta_w: theta[m..].to_vec(),
        residual_ss,
        n,
    })
}

/// Selects the equation-error order minimizing
/// `n ln(RSS_m / n) + 4 m` over `grid`, breaking ties toward the smaller
/// order. Returns the winner together with the per-order scores
/// (`f64::INFINITY` marks orders whose regressor lost numerical rank).
///
/// All orders share one QR factorization: the columns are interleaved by lag
/// (`-y(t-1), u(t-1), -y(t-2), u(t-2), ...`) with `y` appended last, so the
/// leading `2m` columns span exactly the order-`m` regressor and the squared
/// projections of the final column yield every `RSS_m` at once.
pub fn aic_select_order(u: &[f64], y: &[f64], grid: &[usize]) -> Result<(usize, Vec<(usize, f64)>)> {
    if grid.is_empty() {
        return Err(Error::InvalidOrder("empty order grid".into()));
    }
    if grid.iter().any(|&m| m == 0) {
        return Err(Error::InvalidOrder("order grid contains zero".into()));
    }
    let n = y.len();
    assert_eq!(u.len(), n, "signals must have equal length");
    let m_max = *grid.iter().max().expect("nonempty");
    if n <= 2 * m_max {
        return Err(Error::DataTooShort { needed: 2 * m_max + 1, got: n });
    }

    let cols = 2 * m_max + 1;
    let x = mat_from_fn(n, cols, |t, j| {
        if j == cols - 1 {
            return y[t];
        }
        let lag = j / 2 + 1;
        if t < lag {
            return 0.0;
        }
        if j % 2 == 0 {
            -y[t - lag]
        } else {
            u[t - lag]
        }
    });
    let qr = Qr::new(x.as_ref());
    let r = qr.R();

    let y_ss: f64 = y.iter().map(|v| v * v).sum();
    // Cumulative squared projections of y on the leading k regressor columns.
    let mut proj = Vec::with_capacity(cols);
    let mut acc = 0.0;
    for i in 0..cols - 1 {
        let v = r[(i, cols - 1)];
        acc += v * v;
        proj.push(acc);
    }

    let mut scores = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, usize)> = None;
    let mut worst_condition = 1.0f64;
    for &m in grid {
        // Rank of the order-m prefix, judged from the R diagonal.
        let mut min_abs = f64::INFINITY;
        let mut max_abs = 0.0f64;
        for i in 0..2 * m {
            let v = r[(i, i)].abs();
            min_abs = min_abs.min(v);
            max_abs = max_abs.max(v);
        }
        if !(min_abs > RANK_TOL * max_abs) || !max_abs.is_finite() {
            let condition = if min_abs > 0.0 { max_abs / min_abs } else { f64::INFINITY };
            worst_condition = worst_condition.max(condition);
            scores.push((m, f64::INFINITY));
            continue;
        }
        let rss = (y_ss - proj[2 * m - 1]).max(0.0);
        let score = if rss > 0.0 {
            n as f64 * (rss / n as f64).ln() + 4.0 * m as f64
        } else {
            f64::NEG_INFINITY
        };
        scores.push((m, score));
        let cand = (score, m);
        if best.map_or(true, |b| cand < b) {
            best = Some(cand);
        }
    }
    match best {
        Some((_, m)) => Ok((m, scores)),
        None => Err(Error::RankDeficient { condition: worst_condition, threshold: RANK_TOL }),
    }
}

/// Rule-of-thumb equation-error order for a record of length `n` when the
/// slowest noise/dynamics mode has magnitude `rho`: the order at which the
/// neglected tail is of the same size as the estimation error, clamped to
/// `[1, floor(5 n^0.24)]`.
pub fn recommended_order(rho: f64, n: usize) -> Result<usize> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::ParameterOutOfRange(format!(
            "decay rate must lie in (0, 1), got {rho}"
        )));
    }
    if n < 2 {
        return Err(Error::ParameterOutOfRange(format!(
            "record length must be at least 2, got {n}"
        )));
    }
    let raw = (-(n as f64).ln() / (2.0 * rho.ln())).round();
    let cap = (5.0 * (n as f64).powf(0.24)).floor() as usize;
    let m = raw.max(1.0) as usize;
    Ok(m.clamp(1, cap.max(1)))
}

/// Size of the tail neglected when the exact noise-whitening pair
/// `(D/C, B D/(F C))` is truncated at lag `m`: the sum of absolute impulse
/// response coefficients of both transfer functions beyond lag `m`.
pub fn truncation_tail(model: &BjModel, m: usize) -> Result<f64> {
    model.validate()?;
    let denominators: Vec<&Polynomial> = [model.c(), model.f()]
        .into_iter()
        .filter(|p| p.degree() > 0)
        .collect();
    let extra = if denominators.is_empty() {
        let fir = model.d().degree().max(model.b().degree() + model.d().degree());
        fir + 2
    } else {
        let rho = max_root_magnitude(&denominators)?;
        if rho <= 0.0 {
            64
        } else {
            // Run until rho^extra underflows the accumulated sum.
            ((-45.0 / rho.ln()).ceil() as usize).clamp(1_000, 500_000)
        }
    };
    let len = m + 1 + extra;
    let v = impulse_response(
        &RationalFilter::new(model.d().clone(), model.c().clone())?,
        len,
    )?;
    let w = impulse_response(
        &RationalFilter::new(model.b().mul(model.d()), model.f().mul(model.c()))?,
        len,
    )?;
    Ok(v[m + 1..].iter().map(|x| x.abs()).sum::<f64>()
        + w[m + 1..].iter().map(|x| x.abs()).sum::<f64>())
}

//! Prediction-error machinery: one-step-ahead predictor, quadratic loss,
//! analytic Jacobian, Gauss–Newton step and damped iteration, and Monte
//! Carlo estimation of the asymptotic covariance bound.
//!
//! The predictor of the model `y = (B/F) u + (C/D) e` is
//! `y_hat = (D B)/(C F) u + (1 - D/C) y`, so the prediction error at the true
//! parameters reproduces the driving noise sample-for-sample under the zero
//! presample convention — an identity the tests pin down to near machine
//! precision and the refinement relies on.

use crate::error::{Error, Result};
use crate::filter::{apply_filter, apply_filter_unchecked};
use crate::lsq::{mat_from_fn, RANK_TOL};
use crate::model::{BjModel, ThetaVector};
use crate::poly::{Polynomial, RationalFilter};
use crate::sim::{gen_open_loop, InputSpec};
use faer::linalg::solvers::{Qr, SolveLstsq};
use faer::Mat;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Default iteration cap for [`gn_refine`].
pub const DEFAULT_MAX_ITER: usize = 100;
/// Default relative step-norm tolerance for [`gn_refine`].
pub const DEFAULT_STEP_TOL: f64 = 1e-4;
/// Default number of step halvings the line search may try.
pub const DEFAULT_MAX_HALVINGS: usize = 10;

fn bj_filters(theta: &ThetaVector) -> BjModel {
    theta.to_model(0.0)
}

fn require_stable(p: &Polynomial, what: &str) -> Result<()> {
    if p.degree() > 0 && !p.is_stable()? {
        return Err(Error::InvalidModel(format!(
            "{what} polynomial is unstable; the predictor needs a stable inverse"
        )));
    }
    Ok(())
}

/// One-step-ahead predictor `y_hat(t | theta)` with zero presample.
///
/// Requires stable `C` (inverse noise filtering) and stable `F`.
pub fn predictor(theta: &ThetaVector, u: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    let m = bj_filters(theta);
    require_stable(m.c(), "noise numerator")?;
    require_stable(m.f(), "dynamics denominator")?;
    Ok(predictor_unchecked(&m, u, y))
}

/// The predictor recursion without stability screening; used internally by
/// the line search where a candidate may be unstable and is then rejected by
/// its non-finite loss.
fn predictor_unchecked(m: &BjModel, u: &[f64], y: &[f64]) -> Vec<f64> {
    assert_eq!(u.len(), y.len(), "signals must have equal length");
    // y_hat = (D B)/(C F) u + ((C - D)/C) y.
    let uf = RationalFilter::new(m.d().mul(m.b()), m.c().mul(m.f())).expect("monic product");
    let yf = RationalFilter::new(m.c().sub(m.d()), m.c().clone()).expect("monic C");
    let a = apply_filter_unchecked(&uf, u);
    let b = apply_filter_unchecked(&yf, y);
    a.iter().zip(&b).map(|(x, z)| x + z).collect()
}

/// Prediction error `y - y_hat(theta)`.
pub fn prediction_error(theta: &ThetaVector, u: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    let p = predictor(theta, u, y)?;
    Ok(y.iter().zip(&p).map(|(a, b)| a - b).collect())
}

/// Mean squared prediction error `(1/n) sum eps^2`.
pub fn pem_loss(theta: &ThetaVector, u: &[f64], y: &[f64]) -> Result<f64> {
    let eps = prediction_error(theta, u, y)?;
    Ok(eps.iter().map(|v| v * v).sum::<f64>() / eps.len() as f64)
}

/// Loss without stability screening; any non-finite intermediate maps to
/// `f64::INFINITY` so a diverging candidate always loses a comparison.
fn pem_loss_unchecked(m: &BjModel, u: &[f64], y: &[f64]) -> f64 {
    let p = predictor_unchecked(m, u, y);
    let mut acc = 0.0;
    for (a, b) in y.iter().zip(&p) {
        let r = a - b;
        acc += r * r;
    }
    let loss = acc / y.len() as f64;
    if loss.is_finite() {
        loss
    } else {
        f64::INFINITY
    }
}

/// Jacobian of the predictor with respect to `theta`, columns in the block
/// order `[b | c | d | f]`; within each block column `k` is the block's base
/// signal delayed by `k`.
pub fn jacobian(theta: &ThetaVector, u: &[f64], y: &[f64]) -> Result<Mat<f64>> {
    let m = bj_filters(theta);
    require_stable(m.c(), "noise numerator")?;
    require_stable(m.f(), "dynamics denominator")?;
    let n = u.len();
    assert_eq!(n, y.len(), "signals must have equal length");
    let orders = theta.orders();

    let cf = m.c().mul(m.f());
    let c2 = m.c().mul(m.c());
    // Base signals: the lag-zero derivative carrier of each block.
    let g_b = apply_filter(&RationalFilter::new(m.d().clone(), cf.clone())?, u)?;
    let g_c = {
        let from_u =
            apply_filter(&RationalFilter::new(m.b().mul(m.d()), c2.mul(m.f()))?, u)?;
        let from_y = apply_filter(&RationalFilter::new(m.d().clone(), c2.clone())?, y)?;
        from_u.iter().zip(&from_y).map(|(a, b)| b - a).collect::<Vec<_>>()
    };
    let g_d = {
        let from_u = apply_filter(&RationalFilter::new(m.b().clone(), cf.clone())?, u)?;
        let from_y = apply_filter(&RationalFilter::new(Polynomial::one(), m.c().clone())?, y)?;
        from_u.iter().zip(&from_y).map(|(a, b)| a - b).collect::<Vec<_>>()
    };
    let g_f = {
        let sig =
            apply_filter(&RationalFilter::new(m.b().mul(m.d()), cf.mul(m.f()))?, u)?;
        sig.iter().map(|v| -v).collect::<Vec<_>>()
    };

    let blocks = [
        (&g_b, orders.p_b),
        (&g_c, orders.p_c),
        (&g_d, orders.p_d),
        (&g_f, orders.p_f),
    ];
    let p = theta.len();
    let mut offsets = Vec::new();
    let mut acc = 0usize;
    for (_, width) in &blocks {
        offsets.push(acc);
        acc += width;
    }
    debug_assert_eq!(acc, p);

    Ok(mat_from_fn(n, p, |t, j| {
        let (bi, base) = match blocks.iter().enumerate().find(|(i, (_, w))| {
            j >= offsets[*i] && j < offsets[*i] + w
        }) {
            Some((i, (g, _))) => (i, *g),
            None => unreachable!(),
        };
        let lag = j - offsets[bi] + 1;
        if t >= lag {
            base[t - lag]
        } else {
            0.0
        }
    }))
}

/// One undamped Gauss–Newton step `theta + (J^T J)^{-1} J^T eps`, solved by
/// QR on `J` (the normal matrix is never formed).
pub fn gn_step(theta: &ThetaVector, u: &[f64], y: &[f64]) -> Result<ThetaVector> {
    let j = jacobian(theta, u, y)?;
    let eps = prediction_error(theta, u, y)?;
    let delta = solve_step(&j, &eps)?;
    let flat: Vec<f64> =
        theta.to_flat().iter().zip(&delta).map(|(a, b)| a + b).collect();
    ThetaVector::from_flat(&flat, theta.orders())
}

fn solve_step(j: &Mat<f64>, eps: &[f64]) -> Result<Vec<f64>> {
    let p = j.ncols();
    let qr = Qr::new(j.as_ref());
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
    let rhs = Mat::from_fn(eps.len(), 1, |i, _| eps[i]);
    let sol = qr.solve_lstsq(rhs.as_ref());
    Ok((0..p).map(|i| sol[(i, 0)]).collect())
}

/// Outcome of a damped Gauss–Newton run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnReport {
    /// Final parameter estimate.
    pub theta: ThetaVector,
    /// Number of accepted (applied) steps.
    pub iterations: usize,
    /// Loss at the final estimate.
    pub final_loss: f64,
    /// Whether the run stopped by meeting the step tolerance (true) rather
    /// than exhausting iterations or the line search (false).
    pub converged: bool,
    /// Relative norm of the full step proposed at each iteration, including
    /// the final sub-tolerance proposal that stopped the run.
    pub step_norms: Vec<f64>,
    /// Loss after each accepted step, preceded by the starting loss.
    pub losses: Vec<f64>,
    /// Whether the starting point needed root reflection to stabilize its
    /// `C` or `F` polynomial.
    pub repaired: bool,
}

/// Settings for [`gn_refine_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GnSettings {
    pub max_iter: usize,
    pub step_tol: f64,
    pub max_halvings: usize,
}

impl Default for GnSettings {
    fn default() -> Self {
        Self {
            max_iter: DEFAULT_MAX_ITER,
            step_tol: DEFAULT_STEP_TOL,
            max_halvings: DEFAULT_MAX_HALVINGS,
        }
    }
}

/// Damped Gauss–Newton refinement with the default settings (at most 100
/// accepted steps, relative step tolerance `1e-4`, 10 halvings).
pub fn gn_refine(theta0: &ThetaVector, u: &[f64], y: &[f64]) -> Result<GnReport> {
    gn_refine_with(theta0, u, y, GnSettings::default())
}

/// Damped Gauss–Newton refinement.
///
/// Each iteration solves the full step from the Jacobian QR; if its relative
/// norm `||step|| / (1 + ||theta||)` is below the tolerance the run stops as
/// converged without applying it. Otherwise the step is applied at the first
/// scaling (full, then successive halvings) that strictly decreases the
/// loss; a candidate with non-finite loss simply loses that comparison. If
/// no scaling decreases the loss the run stops with `converged = false` and
/// the best estimate so far. A starting point with unstable `C` or `F` is
/// first repaired by reflecting the offending roots inside the unit circle.
pub fn gn_refine_with(
    theta0: &ThetaVector,
    u: &[f64],
    y: &[f64],
    settings: GnSettings,
) -> Result<GnReport> {
    let (mut theta, repaired) = stabilize_theta(theta0)?;
    let mut loss = {
        let m = bj_filters(&theta);
        pem_loss_unchecked(&m, u, y)
    };
    let mut losses = vec![loss];
    let mut step_norms = Vec::new();
    let mut iterations = 0usize;
    let mut converged = false;

    while iterations < settings.max_iter {
        let j = match jacobian(&theta, u, y) {
            Ok(j) => j,
            Err(_) => break,
        };
        let eps = match prediction_error(&theta, u, y) {
            Ok(e) => e,
            Err(_) => break,
        };
        if eps.iter().any(|v| !v.is_finite()) {
            break;
        }
        let delta = match solve_step(&j, &eps) {
            Ok(d) => d,
            Err(_) => break,
        };
        if delta.iter().any(|v| !v.is_finite()) {
            break;
        }

        let flat = theta.to_flat();
        let theta_norm = flat.iter().map(|v| v * v).sum::<f64>().sqrt();
        let step_norm = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
        let rel = step_norm / (1.0 + theta_norm);
        step_norms.push(rel);
        if rel < settings.step_tol {
            converged = true;
            break;
        }

        let mut accepted = false;
        let mut scale = 1.0;
        for _ in 0..=settings.max_halvings {
            let cand: Vec<f64> =
                flat.iter().zip(&delta).map(|(a, d)| a + scale * d).collect();
            let cand_theta = ThetaVector::from_flat(&cand, theta.orders())?;
            let cand_loss = pem_loss_unchecked(&bj_filters(&cand_theta), u, y);
            if cand_loss < loss {
                theta = cand_theta;
                loss = cand_loss;
                losses.push(loss);
                iterations += 1;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }

    Ok(GnReport {
        theta,
        iterations,
        final_loss: loss,
        converged,
        step_norms,
        losses,
        repaired,
    })
}

/// Reflects any root of `C` or `F` outside the unit circle to magnitude
/// `min(1/|r|, 0.99)` (same phase), returning the possibly repaired vector
/// and whether a repair happened.
pub fn stabilize_theta(theta: &ThetaVector) -> Result<(ThetaVector, bool)> {
    let m = bj_filters(theta);
    let orders = theta.orders();
    let (c, c_fixed) = reflect_if_needed(m.c())?;
    let (f, f_fixed) = reflect_if_needed(m.f())?;
    if !c_fixed && !f_fixed {
        return Ok((theta.clone(), false));
    }
    let fixed = ThetaVector {
        b: theta.b.clone(),
        c: c.coeffs()[1..=orders.p_c].to_vec(),
        d: theta.d.clone(),
        f: f.coeffs()[1..=orders.p_f].to_vec(),
    };
    Ok((fixed, true))
}

fn reflect_if_needed(p: &Polynomial) -> Result<(Polynomial, bool)> {
    if p.degree() == 0 || p.is_stable()? {
        return Ok((p.clone(), false));
    }
    let mut roots = p.roots();
    for r in roots.iter_mut() {
        let mag = r.norm();
        if mag >= 1.0 {
            let new_mag = (1.0 / mag).min(0.99);
            *r = Complex64::from_polar(new_mag, r.arg());
        }
    }
    Ok((Polynomial::from_roots(&roots)?, true))
}

/// Specification of the data-generating process used by [`cramer_rao`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrDataSpec {
    pub input: InputSpec,
}

/// Monte Carlo estimate of the per-sample asymptotic covariance bound
/// `sigma^2 M^{-1}` with `M = E[psi psi^T]` evaluated at the true
/// parameters: averages `(1/n) J^T J` over `runs` fresh open-loop records
/// (seeds `seed, seed+1, ...`) and inverts. Divide by `n` for the covariance
/// of an estimate from `n` samples.
pub fn cramer_rao(
    model: &BjModel,
    spec: &CrDataSpec,
    n: usize,
    runs: usize,
    seed: u64,
) -> Result<nalgebra::DMatrix<f64>> {
    model.validate()?;
    if runs == 0 {
        return Err(Error::ParameterOutOfRange("need at least one run".into()));
    }
    let theta = model.theta();
    let p = theta.len();
    let mut m_acc = nalgebra::DMatrix::<f64>::zeros(p, p);
    for r in 0..runs {
        let ds = gen_open_loop(model, &spec.input, n, seed + r as u64)?;
        let j = jacobian(&theta, &ds.u, &ds.y)?;
        for a in 0..p {
            for b in a..p {
                let mut s = 0.0;
                for t in 0..n {
                    s += j[(t, a)] * j[(t, b)];
                }
                let v = s / n as f64;
                m_acc[(a, b)] += v;
                if a != b {
                    m_acc[(b, a)] += v;
                }
            }
        }
    }
    m_acc /= runs as f64;
    let inv = m_acc.clone().try_inverse().ok_or(Error::RankDeficient {
        condition: f64::INFINITY,
        threshold: RANK_TOL,
    })?;
    Ok(inv * model.sigma2())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{benchmark_model_basic, sample_random_bj, ModelOrders};
    use crate::sim::{noise_reference, reference_stream, simulate_bj};
    use approx::assert_relative_eq;

    fn benchmark_data(n: usize, seed: u64) -> (BjModel, Vec<f64>, Vec<f64>, Vec<f64>) {
        let model = benchmark_model_basic();
        let u = reference_stream(n, seed);
        let e = noise_reference(n, seed);
        let y = simulate_bj(&model, &u, &e).unwrap();
        (model, u, y, e)
    }

    #[test]
    fn prediction_error_at_truth_reproduces_the_noise() {
        let (model, u, y, e) = benchmark_data(5000, 3);
        let eps = prediction_error(&model.theta(), &u, &y).unwrap();
        let max_dev = eps
            .iter()
            .zip(&e)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_dev < 1e-9, "identity violated by {max_dev}");
    }

    #[test]
    fn prediction_error_is_linear_in_the_noise() {
        let model = benchmark_model_basic();
        let n = 400;
        let u = reference_stream(n, 9);
        let e = noise_reference(n, 9);
        let e2: Vec<f64> = e.iter().map(|v| 2.0 * v).collect();
        let y2 = simulate_bj(&model, &u, &e2).unwrap();
        let eps2 = prediction_error(&model.theta(), &u, &y2).unwrap();
        for (a, b) in eps2.iter().zip(&e) {
            assert_relative_eq!(*a, 2.0 * b, epsilon = 1e-9);
        }
    }

    #[test]
    fn output_error_model_predicts_the_dynamics_output() {
        // C = D: y_hat = (B/F) u regardless of y.
        let theta = ThetaVector {
            b: vec![1.0, 0.1],
            c: vec![0.4],
            d: vec![0.4],
            f: vec![-0.5, 0.75],
        };
        let n = 300;
        let u = reference_stream(n, 14);
        let y = noise_reference(n, 14);
        let p = predictor(&theta, &u, &y).unwrap();
        let m = theta.to_model(0.0);
        let direct = apply_filter(&m.dynamics(), &u).unwrap();
        for (a, b) in p.iter().zip(&direct) {
            assert_relative_eq!(*a, *b, epsilon = 1e-10);
        }
    }

    #[test]
    fn pure_noise_model_predicts_from_output_alone() {
        // B = 0, C = 1: y_hat = (1 - D) y.
        let theta = ThetaVector {
            b: vec![0.0],
            c: vec![],
            d: vec![-0.9],
            f: vec![],
        };
        let n = 200;
        let y = noise_reference(n, 4);
        let u = vec![0.0; n];
        let p = predictor(&theta, &u, &y).unwrap();
        assert_eq!(p[0], 0.0);
        for t in 1..n {
            assert_relative_eq!(p[t], 0.9 * y[t - 1], epsilon = 1e-12);
        }
    }

    #[test]
    fn loss_approaches_the_noise_variance_at_truth() {
        let (model, u, y, _) = benchmark_data(10_000, 6);
        let loss = pem_loss(&model.theta(), &u, &y).unwrap();
        assert!((loss - 1.0).abs() < 3.0 / (10_000f64).sqrt(), "loss {loss}");
    }

    #[test]
    fn predictor_rejects_unstable_noise_numerator() {
        let theta = ThetaVector {
            b: vec![1.0],
            c: vec![-1.5],
            d: vec![0.0],
            f: vec![0.2],
        };
        let u = vec![0.0; 10];
        let y = vec![0.0; 10];
        assert!(matches!(
            predictor(&theta, &u, &y),
            Err(Error::InvalidModel(_))
        ));
    }

    #[test]
    fn jacobian_matches_central_finite_differences() {
        let n = 2000;
        let mut checked = 0;
        for seed in 0..40u64 {
            let Ok(model) = sample_random_bj(ModelOrders::new(2, 2, 2, 2), 900 + seed) else {
                continue;
            };
            let u = reference_stream(n, seed);
            let e = noise_reference(n, seed);
            let y = simulate_bj(&model, &u, &e).unwrap();
            let theta = model.theta();
            let j = jacobian(&theta, &u, &y).unwrap();
            let flat = theta.to_flat();
            let h = 1e-6;
            for k in 0..flat.len() {
                let mut plus = flat.clone();
                plus[k] += h;
                let mut minus = flat.clone();
                minus[k] -= h;
                let p_plus = predictor(
                    &ThetaVector::from_flat(&plus, theta.orders()).unwrap(),
                    &u,
                    &y,
                )
                .unwrap();
                let p_minus = predictor(
                    &ThetaVector::from_flat(&minus, theta.orders()).unwrap(),
                    &u,
                    &y,
                )
                .unwrap();
                let mut num = 0.0f64;
                let mut den = 0.0f64;
                for t in 0..n {
                    let fd = (p_plus[t] - p_minus[t]) / (2.0 * h);
                    num += (fd - j[(t, k)]) * (fd - j[(t, k)]);
                    den += j[(t, k)] * j[(t, k)];
                }
                let rel = (num / den.max(1e-300)).sqrt();
                assert!(rel < 1e-5, "seed {seed} column {k}: relative error {rel}");
            }
            checked += 1;
            if checked >= 20 {
                break;
            }
        }
        assert!(checked >= 20, "only {checked} random models checked");
    }

    #[test]
    fn jacobian_columns_shift_within_blocks() {
        let (model, u, y, _) = benchmark_data(500, 12);
        let theta = model.theta();
        let j = jacobian(&theta, &u, &y).unwrap();
        // b block columns 0,1; f block columns 4,5 (orders 2,1,1,2).
        for (first, second) in [(0usize, 1usize), (4, 5)] {
            for t in 1..500 {
                assert_relative_eq!(j[(t, second)], j[(t - 1, first)], epsilon = 1e-12);
            }
            assert_eq!(j[(0, second)], 0.0);
        }
    }

    #[test]
    fn zero_input_numerator_kills_input_driven_columns() {
        let theta = ThetaVector {
            b: vec![0.0],
            c: vec![0.5],
            d: vec![-0.3],
            f: vec![0.2],
        };
        let n = 300;
        let u = reference_stream(n, 2);
        let y = noise_reference(n, 2);
        let j = jacobian(&theta, &u, &y).unwrap();
        // With B = 0 the f column is identically zero.
        for t in 0..n {
            assert_eq!(j[(t, 3)], 0.0);
        }
    }

    #[test]
    fn one_step_solves_the_linear_fir_case_exactly() {
        // C = D = F = 1, only b free: the model is linear, so one undamped
        // step from any start lands on the least-squares optimum.
        let n = 800;
        let u = reference_stream(n, 30);
        let e: Vec<f64> = noise_reference(n, 30).iter().map(|v| 0.1 * v).collect();
        let truth = ThetaVector { b: vec![1.0, -0.4], c: vec![], d: vec![], f: vec![] };
        let y_clean = predictor(&truth, &u, &vec![0.0; n]).unwrap();
        let y: Vec<f64> = y_clean.iter().zip(&e).map(|(a, b)| a + b).collect();

        let start = ThetaVector { b: vec![5.0, 5.0], c: vec![], d: vec![], f: vec![] };
        let stepped = gn_step(&start, &u, &y).unwrap();
        let again = gn_step(&stepped, &u, &y).unwrap();
        // Fixed point after one step: the next step is numerically zero.
        for (a, b) in stepped.to_flat().iter().zip(again.to_flat()) {
            assert_relative_eq!(*a, b, epsilon = 1e-8);
        }
        // And it is the global minimizer: close to truth at this noise level.
        assert!((stepped.b[0] - 1.0).abs() < 0.02);
        assert!((stepped.b[1] + 0.4).abs() < 0.02);
    }

    #[test]
    fn refinement_from_truth_stops_immediately_and_keeps_identity() {
        let (model, u, y, _) = benchmark_data(10_000, 44);
        let report = gn_refine(&model.theta(), &u, &y).unwrap();
        assert!(report.converged);
        assert!(report.iterations <= 3, "iterations {}", report.iterations);
        assert!(!report.repaired);
        assert_relative_eq!(
            report.final_loss,
            pem_loss(&report.theta, &u, &y).unwrap(),
            max_relative = 1e-10
        );
    }

    #[test]
    fn refinement_improves_a_perturbed_start_and_never_increases_loss() {
        let (model, u, y, _) = benchmark_data(4000, 91);
        let mut flat = model.theta().to_flat();
        for (i, v) in flat.iter_mut().enumerate() {
            *v += if i % 2 == 0 { 0.08 } else { -0.08 };
        }
        let start = ThetaVector::from_flat(&flat, model.orders()).unwrap();
        let report = gn_refine(&start, &u, &y).unwrap();
        assert!(report.converged);
        assert!(report.iterations >= 1);
        for w in report.losses.windows(2) {
            assert!(w[1] < w[0], "accepted step increased the loss");
        }
        let err: f64 = report
            .theta
            .to_flat()
            .iter()
            .zip(model.theta().to_flat())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(err < 0.1, "post-refinement error {err}");
    }

    #[test]
    fn residual_is_orthogonal_to_jacobian_after_convergence() {
        let (model, u, y, _) = benchmark_data(4000, 17);
        let report = gn_refine(&model.theta(), &u, &y).unwrap();
        let j = jacobian(&report.theta, &u, &y).unwrap();
        let eps = prediction_error(&report.theta, &u, &y).unwrap();
        let p = report.theta.len();
        for k in 0..p {
            let mut dot = 0.0;
            let mut col = 0.0;
            for t in 0..4000 {
                dot += j[(t, k)] * eps[t];
                col += j[(t, k)] * j[(t, k)];
            }
            // Gradient scaled by column norm and residual norm; the step
            // tolerance bounds how far from stationarity the stop can be.
            let scale = col.sqrt() * (eps.iter().map(|v| v * v).sum::<f64>()).sqrt();
            assert!(
                (dot / scale).abs() < 1e-3,
                "column {k}: normalized gradient {}",
                dot / scale
            );
        }
    }

    #[test]
    fn unstable_start_is_repaired_then_refined() {
        let (model, u, y, _) = benchmark_data(3000, 28);
        let mut theta = model.theta();
        theta.c = vec![1.25]; // root at -1.25: unstable inverse
        let (fixed, repaired) = stabilize_theta(&theta).unwrap();
        assert!(repaired);
        let c_fixed = Polynomial::new(
            std::iter::once(1.0).chain(fixed.c.iter().copied()).collect::<Vec<_>>(),
        );
        assert!(c_fixed.is_stable().unwrap());
        // The root reflects to magnitude 1/1.25 with its phase kept.
        assert_relative_eq!(fixed.c[0], 0.8, epsilon = 1e-9);

        let report = gn_refine(&theta, &u, &y).unwrap();
        assert!(report.repaired);
        assert!(report.final_loss < 1.2, "loss {}", report.final_loss);
    }

    #[test]
    fn covariance_bound_is_symmetric_positive_definite() {
        let model = benchmark_model_basic();
        let spec = CrDataSpec { input: InputSpec::White { variance: 1.0 } };
        let cr = cramer_rao(&model, &spec, 2000, 8, 500).unwrap();
        let p = cr.nrows();
        for a in 0..p {
            for b in 0..p {
                assert_relative_eq!(cr[(a, b)], cr[(b, a)], epsilon = 1e-10);
            }
        }
        let chol = cr.clone().cholesky();
        assert!(chol.is_some(), "bound must be positive definite");
    }

    #[test]
    fn covariance_bound_scales_with_noise_variance() {
        let model = benchmark_model_basic();
        let doubled = model.with_sigma2(2.0).unwrap();
        let spec = CrDataSpec { input: InputSpec::White { variance: 1.0 } };
        let a = cramer_rao(&model, &spec, 1500, 6, 700).unwrap();
        let b = cramer_rao(&doubled, &spec, 1500, 6, 700).unwrap();
        // Same seeds, so the input-driven blocks scale exactly by 2 while the
        // noise-driven c/d blocks keep their per-noise-unit size.
        for i in [0usize, 1, 4, 5] {
            let ratio = b[(i, i)] / a[(i, i)];
            assert!((1.98..=2.02).contains(&ratio), "diag {i} ratio {ratio}");
        }
        for i in [2usize, 3] {
            let ratio = b[(i, i)] / a[(i, i)];
            assert!((0.98..=1.02).contains(&ratio), "diag {i} ratio {ratio}");
        }
    }

    #[test]
    fn benchmark_covariance_trace_band() {
        // Input spectrum of the open-loop benchmark: r shaped by F/(F+B).
        let model = benchmark_model_basic();
        let shaping = RationalFilter::new(model.f().clone(), model.f().add(model.b())).unwrap();
        let spec = CrDataSpec {
            input: InputSpec::Filtered { filter: shaping, variance: 1.0 },
        };
        let cr = cramer_rao(&model, &spec, 2000, 40, 1000).unwrap();
        let trace: f64 = (0..cr.nrows()).map(|i| cr[(i, i)]).sum();
        assert!(
            (2.55..=2.85).contains(&trace),
            "full-parameter trace {trace} outside the frozen band"
        );
        // Dynamics sub-block ([f; b] entries) trace band.
        let dyn_trace: f64 = [0usize, 1, 4, 5].iter().map(|&i| cr[(i, i)]).sum();
        assert!(
            (1.87..=2.09).contains(&dyn_trace),
            "dynamics trace {dyn_trace} outside the frozen band"
        );
    }
}

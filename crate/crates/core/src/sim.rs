//! Seeded generation of benchmark signals: model simulation, open-loop and
//! closed-loop input generation, and signal-to-noise scaling.
//!
//! All generators draw from a counter-based RNG seeded per realization, with
//! the reference stream, the noise stream, and the model-sampler stream kept
//! separate so the same seed can drive all three without overlap. Everything
//! uses the zero-presample convention.

use crate::dataset::{Dataset, Regime};
use crate::error::{Error, Result};
use crate::filter::{apply_filter, apply_filter_unchecked};
use crate::model::BjModel;
use crate::poly::{max_root_magnitude, RationalFilter};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// RNG stream indices for the substreams derived from one realization seed.
const STREAM_REFERENCE: u64 = 1;
const STREAM_NOISE: u64 = 2;

/// How the exogenous input is produced from the reference stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSpec {
    /// `u` is the iid Gaussian reference itself.
    White { variance: f64 },
    /// `u` is the iid Gaussian reference passed through a stable shaping filter.
    Filtered { filter: RationalFilter, variance: f64 },
}

/// Which signal the noise-scaling denominator measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnrMode {
    /// Denominator is the driving noise `e` itself.
    RawNoise,
    /// Denominator is the shaped noise `(C/D) e`.
    FilteredNoise,
}

fn gaussian(n: usize, seed: u64, stream: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    (0..n).map(|_| rng.sample(rand_distr::StandardNormal)).collect()
}

/// Simulates `y = (B/F) u + (C/D) e` under zero presample.
///
/// The model must pass [`BjModel::validate`]; the noise sequence is used as
/// given (callers scale it to the model's `sigma2` themselves).
pub fn simulate_bj(model: &BjModel, u: &[f64], e: &[f64]) -> Result<Vec<f64>> {
    model.validate()?;
    assert_eq!(u.len(), e.len(), "input and noise must have equal length");
    let yu = apply_filter(&model.dynamics(), u)?;
    let ye = apply_filter(&model.noise_filter(), e)?;
    Ok(yu.iter().zip(&ye).map(|(a, b)| a + b).collect())
}

/// Generates an open-loop realization: draws the reference and noise streams
/// from `seed`, shapes the input per `spec`, and simulates the output with
/// noise standard deviation `sqrt(model.sigma2())`.
pub fn gen_open_loop(model: &BjModel, spec: &InputSpec, n: usize, seed: u64) -> Result<Dataset> {
    let r = gaussian(n, seed, STREAM_REFERENCE);
    let u = input_from_reference(spec, &r)?;
    let sigma = model.sigma2().sqrt();
    let e: Vec<f64> = gaussian(n, seed, STREAM_NOISE).iter().map(|v| sigma * v).collect();
    let y = simulate_bj(model, &u, &e)?;
    Ok(Dataset::new(u, y, seed, Regime::OpenLoop, Some(model.clone())))
}

/// Shapes a unit-variance reference sequence into the exogenous input.
pub fn input_from_reference(spec: &InputSpec, r: &[f64]) -> Result<Vec<f64>> {
    match spec {
        InputSpec::White { variance } => {
            check_variance(*variance)?;
            let s = variance.sqrt();
            Ok(r.iter().map(|v| s * v).collect())
        }
        InputSpec::Filtered { filter, variance } => {
            check_variance(*variance)?;
            let s = variance.sqrt();
            let scaled: Vec<f64> = r.iter().map(|v| s * v).collect();
            apply_filter(filter, &scaled)
        }
    }
}

fn check_variance(variance: f64) -> Result<()> {
    if !(variance > 0.0) {
        return Err(Error::ParameterOutOfRange(format!(
            "input variance must be positive, got {variance}"
        )));
    }
    Ok(())
}

/// Generates a closed-loop realization under the feedback law
/// `u(t) = -K(q) y(t) + r(t)` by per-sample recursion.
///
/// The strict delay `b_0 = 0` makes the loop well-posed: `y(t)` depends on
/// inputs up to `t-1` only, after which `u(t)` closes over `y(t)`. The
/// closed-loop characteristic polynomial `F K_den + B K_num` must be stable,
/// as must `K_den` itself.
pub fn gen_closed_loop(
    model: &BjModel,
    k: &RationalFilter,
    r_variance: f64,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    check_variance(r_variance)?;
    let rs = r_variance.sqrt();
    let r: Vec<f64> = gaussian(n, seed, STREAM_REFERENCE).iter().map(|v| rs * v).collect();
    let sigma = model.sigma2().sqrt();
    let e: Vec<f64> = gaussian(n, seed, STREAM_NOISE).iter().map(|v| sigma * v).collect();
    let (u, y) = closed_loop_response(model, k, &r, &e)?;
    Ok(Dataset::new(u, y, seed, Regime::ClosedLoop, Some(model.clone())))
}

/// Runs the closed-loop recursion on explicit reference and noise sequences,
/// returning `(u, y)`. See [`gen_closed_loop`] for the loop conventions.
pub fn closed_loop_response(
    model: &BjModel,
    k: &RationalFilter,
    r: &[f64],
    e: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    model.validate()?;
    assert_eq!(r.len(), e.len(), "reference and noise must have equal length");
    if !model.b().is_strictly_delayed() {
        return Err(Error::InvalidModel(
            "closed-loop recursion requires a strictly delayed B".into(),
        ));
    }
    if k.den.degree() > 0 && !k.den.is_stable()? {
        let mag = max_root_magnitude(&[&k.den])?;
        return Err(Error::UnstableDenominator(mag));
    }
    let characteristic = model.f().mul(&k.den).add(&model.b().mul(&k.num));
    if !characteristic.is_stable()? {
        let mag = max_root_magnitude(&[&characteristic])?;
        return Err(Error::UnstableClosedLoop(mag));
    }

    let n = r.len();
    let (b, f) = (model.b().coeffs(), model.f().coeffs());
    let (c, d) = (model.c().coeffs(), model.d().coeffs());
    let (kn, kd) = (k.num.coeffs(), k.den.coeffs());

    // States: x1 = (B/F) u, x2 = (C/D) e, v = K y; all zero presample.
    let mut u = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut x1 = vec![0.0; n];
    let mut x2 = vec![0.0; n];
    let mut v = vec![0.0; n];
    for t in 0..n {
        let mut a1 = 0.0;
        for (j, &bj) in b.iter().enumerate() {
            if j > t {
                break;
            }
            a1 += bj * u[t - j]; // b[0] = 0, so u(t) is never read here
        }
        for (j, &fj) in f.iter().enumerate().skip(1) {
            if j > t {
                break;
            }
            a1 -= fj * x1[t - j];
        }
        x1[t] = a1;

        let mut a2 = 0.0;
        for (j, &cj) in c.iter().enumerate() {
            if j > t {
                break;
            }
            a2 += cj * e[t - j];
        }
        for (j, &dj) in d.iter().enumerate().skip(1) {
            if j > t {
                break;
            }
            a2 -= dj * x2[t - j];
        }
        x2[t] = a2;

        y[t] = x1[t] + x2[t];

        let mut av = 0.0;
        for (j, &kj) in kn.iter().enumerate() {
            if j > t {
                break;
            }
            av += kj * y[t - j];
        }
        for (j, &kj) in kd.iter().enumerate().skip(1) {
            if j > t {
                break;
            }
            av -= kj * v[t - j];
        }
        v[t] = av;

        u[t] = r[t] - v[t];
    }
    Ok((u, y))
}

/// Chooses the noise standard deviation `sigma` so that
/// `sum[(B/F)u]^2 / sum[noise term]^2` equals `target`, where the noise term
/// is `sigma * e_raw` ([`SnrMode::RawNoise`]) or `(C/D)(sigma * e_raw)`
/// ([`SnrMode::FilteredNoise`]).
pub fn scale_noise_for_snr(
    model: &BjModel,
    u: &[f64],
    e_raw: &[f64],
    target: f64,
    mode: SnrMode,
) -> Result<f64> {
    if !(target > 0.0) {
        return Err(Error::ParameterOutOfRange(format!(
            "signal-to-noise target must be positive, got {target}"
        )));
    }
    let yf = apply_filter(&model.dynamics(), u)?;
    let num: f64 = yf.iter().map(|v| v * v).sum();
    if num == 0.0 {
        return Err(Error::ZeroEnergyInput);
    }
    let den_seq = match mode {
        SnrMode::RawNoise => e_raw.to_vec(),
        SnrMode::FilteredNoise => apply_filter(&model.noise_filter(), e_raw)?,
    };
    let den: f64 = den_seq.iter().map(|v| v * v).sum();
    if den == 0.0 {
        return Err(Error::ZeroEnergyInput);
    }
    Ok((num / (target * den)).sqrt())
}

/// Draws the unit-variance noise stream used by the scaled-noise generators.
pub fn noise_reference(n: usize, seed: u64) -> Vec<f64> {
    gaussian(n, seed, STREAM_NOISE)
}

/// Draws the unit-variance reference stream (pre-shaping input source).
pub fn reference_stream(n: usize, seed: u64) -> Vec<f64> {
    gaussian(n, seed, STREAM_REFERENCE)
}

/// Simulates the output with an explicit noise sequence after SNR scaling:
/// `y = (B/F) u + (C/D)(sigma * e_raw)`.
pub fn simulate_with_scaled_noise(
    model: &BjModel,
    u: &[f64],
    e_raw: &[f64],
    sigma: f64,
) -> Result<Vec<f64>> {
    let e: Vec<f64> = e_raw.iter().map(|v| sigma * v).collect();
    simulate_bj(model, u, &e)
}

/// The dynamics signal `(B/F) u` without a stability check — used for flagged
/// diagnostics on estimated models whose denominator may be unstable.
pub fn dynamics_output_unchecked(model: &BjModel, u: &[f64]) -> Vec<f64> {
    apply_filter_unchecked(&model.dynamics(), u)
}

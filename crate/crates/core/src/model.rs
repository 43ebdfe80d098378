//! The Box-Jenkins model `y = (B/F) u + (C/D) e` and its parameter vector.
//!
//! `B` is strictly delayed (`b_0 = 0`) and `C`, `D`, `F` are monic in `q^-1`,
//! so the free parameters are exactly the non-structural coefficients, stacked
//! as `theta = [b; c; d; f]`. The module also houses the random-model sampler
//! used by the randomized benchmark study: `B` coefficients uniform on
//! `[-1, 1]`, and noise/dynamics roots drawn in conjugate pairs from the
//! annulus with magnitude in `[0.6, 0.95]` and phase in `[0deg, 90deg]`.

use crate::error::{Error, Result};
use crate::poly::{coprime, max_root_magnitude, Polynomial, RationalFilter, DEFAULT_COPRIME_TOL};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Polynomial orders `(p_b, p_c, p_d, p_f)` of a Box-Jenkins model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelOrders {
    pub p_b: usize,
    pub p_c: usize,
    pub p_d: usize,
    pub p_f: usize,
}

impl ModelOrders {
    pub fn new(p_b: usize, p_c: usize, p_d: usize, p_f: usize) -> Self {
        Self { p_b, p_c, p_d, p_f }
    }

    /// Total number of free parameters.
    pub fn theta_len(&self) -> usize {
        self.p_b + self.p_c + self.p_d + self.p_f
    }
}

/// Free parameters of a Box-Jenkins model in the stacking order `[b; c; d; f]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaVector {
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
    pub f: Vec<f64>,
}

impl ThetaVector {
    pub fn orders(&self) -> ModelOrders {
        ModelOrders::new(self.b.len(), self.c.len(), self.d.len(), self.f.len())
    }

    pub fn len(&self) -> usize {
        self.orders().theta_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat layout `[b; c; d; f]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        out.extend_from_slice(&self.b);
        out.extend_from_slice(&self.c);
        out.extend_from_slice(&self.d);
        out.extend_from_slice(&self.f);
        out
    }

    /// Splits a flat `[b; c; d; f]` vector back into blocks.
    pub fn from_flat(flat: &[f64], orders: ModelOrders) -> Result<Self> {
        if flat.len() != orders.theta_len() {
            return Err(Error::InvalidOrder(format!(
                "flat parameter vector has length {}, orders require {}",
                flat.len(),
                orders.theta_len()
            )));
        }
        let (b, rest) = flat.split_at(orders.p_b);
        let (c, rest) = rest.split_at(orders.p_c);
        let (d, f) = rest.split_at(orders.p_d);
        Ok(Self { b: b.to_vec(), c: c.to_vec(), d: d.to_vec(), f: f.to_vec() })
    }

    /// Rebuilds the model polynomials (prepending the structural 0/1 terms).
    pub fn to_model(&self, sigma2: f64) -> BjModel {
        let with_leading = |lead: f64, tail: &[f64]| {
            let mut v = Vec::with_capacity(tail.len() + 1);
            v.push(lead);
            v.extend_from_slice(tail);
            Polynomial::new(v)
        };
        BjModel::new(
            with_leading(0.0, &self.b),
            with_leading(1.0, &self.c),
            with_leading(1.0, &self.d),
            with_leading(1.0, &self.f),
            sigma2,
        )
        .expect("theta blocks always satisfy the structural conventions")
    }

    /// Euclidean norm of the flat vector.
    pub fn norm(&self) -> f64 {
        self.to_flat().iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// A Box-Jenkins model with noise variance `sigma2`.
///
/// Construction enforces the structural conventions (delay and monicity);
/// [`BjModel::validate`] additionally checks stability and coprimality, the
/// standing identifiability assumptions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BjModel {
    b: Polynomial,
    c: Polynomial,
    d: Polynomial,
    f: Polynomial,
    sigma2: f64,
}

impl BjModel {
    pub fn new(
        b: Polynomial,
        c: Polynomial,
        d: Polynomial,
        f: Polynomial,
        sigma2: f64,
    ) -> Result<Self> {
        if !b.is_strictly_delayed() {
            return Err(Error::InvalidModel(format!(
                "B must be strictly delayed (constant term 0), got {}",
                b.coeffs()[0]
            )));
        }
        for (name, p) in [("C", &c), ("D", &d), ("F", &f)] {
            if !p.is_monic() {
                return Err(Error::InvalidModel(format!(
                    "{name} must be monic in q^-1, got constant term {}",
                    p.coeffs()[0]
                )));
            }
        }
        if !(sigma2 >= 0.0) {
            return Err(Error::ParameterOutOfRange(format!(
                "noise variance must be nonnegative, got {sigma2}"
            )));
        }
        Ok(Self { b, c, d, f, sigma2 })
    }

    pub fn b(&self) -> &Polynomial {
        &self.b
    }

    pub fn c(&self) -> &Polynomial {
        &self.c
    }

    pub fn d(&self) -> &Polynomial {
        &self.d
    }

    pub fn f(&self) -> &Polynomial {
        &self.f
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// Same model with a different noise variance.
    pub fn with_sigma2(&self, sigma2: f64) -> Result<Self> {
        Self::new(self.b.clone(), self.c.clone(), self.d.clone(), self.f.clone(), sigma2)
    }

    pub fn orders(&self) -> ModelOrders {
        ModelOrders::new(self.b.degree(), self.c.degree(), self.d.degree(), self.f.degree())
    }

    /// Free parameters in the `[b; c; d; f]` stacking.
    pub fn theta(&self) -> ThetaVector {
        ThetaVector {
            b: self.b.coeffs()[1..].to_vec(),
            c: self.c.coeffs()[1..].to_vec(),
            d: self.d.coeffs()[1..].to_vec(),
            f: self.f.coeffs()[1..].to_vec(),
        }
    }

    /// The input-to-output transfer function `B/F`.
    pub fn dynamics(&self) -> RationalFilter {
        RationalFilter::new(self.b.clone(), self.f.clone())
            .expect("F is monic by construction")
    }

    /// The noise-to-output transfer function `C/D`.
    pub fn noise_filter(&self) -> RationalFilter {
        RationalFilter::new(self.c.clone(), self.d.clone())
            .expect("D is monic by construction")
    }

    /// Checks the identifiability assumptions: `C`, `D`, `F` stable and the
    /// two transfer functions irreducible.
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("C", &self.c), ("D", &self.d), ("F", &self.f)] {
            if p.degree() > 0 && !p.is_stable()? {
                let mag = max_root_magnitude(&[p])?;
                return Err(Error::InvalidModel(format!(
                    "{name} is unstable (max root magnitude {mag:.6})"
                )));
            }
        }
        if !coprime(&self.b, &self.f, DEFAULT_COPRIME_TOL) {
            return Err(Error::InvalidModel("B and F share a common root".into()));
        }
        if !coprime(&self.c, &self.d, DEFAULT_COPRIME_TOL) {
            return Err(Error::InvalidModel("C and D share a common root".into()));
        }
        Ok(())
    }

    /// Maximum root modulus of the noise numerator `C` and dynamics
    /// denominator `F` — the decay rate governing the truncated ARX tail.
    ///
    /// Degree-0 components contribute no roots; at least one of the two must
    /// have positive degree.
    pub fn rho(&self) -> Result<f64> {
        let polys: Vec<&Polynomial> =
            [&self.c, &self.f].into_iter().filter(|p| p.degree() > 0).collect();
        if polys.is_empty() {
            return Err(Error::DegreeZero);
        }
        max_root_magnitude(&polys)
    }
}

/// Retry budget for [`sample_random_bj`].
const SAMPLER_RETRIES: usize = 64;

/// Draws a random Box-Jenkins model for the randomized benchmark study.
///
/// `B` coefficients are iid uniform on `[-1, 1]`. Each of `C`, `D`, `F` is
/// built from conjugate root pairs with magnitude uniform on `[0.6, 0.95]`
/// and phase uniform on `[0deg, 90deg]`, so `p_c`, `p_d`, `p_f` must be even.
/// Draws failing [`BjModel::validate`] (a coincidental near-common root) are
/// rejected and resampled; the noise variance is initialized to 1.
pub fn sample_random_bj(orders: ModelOrders, seed: u64) -> Result<BjModel> {
    for (name, p) in [("p_c", orders.p_c), ("p_d", orders.p_d), ("p_f", orders.p_f)] {
        if p % 2 != 0 {
            return Err(Error::ParameterOutOfRange(format!(
                "{name} must be even (roots are drawn in conjugate pairs), got {p}"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Keep the sampler on its own stream so data generation from the same
    // seed never replays these draws.
    rng.set_stream(3);

    for _ in 0..SAMPLER_RETRIES {
        let mut b = vec![0.0];
        for _ in 0..orders.p_b {
            b.push(rng.gen_range(-1.0..1.0));
        }
        let draw_pairs = |rng: &mut ChaCha8Rng, pairs: usize| -> Result<Polynomial> {
            let mut roots = Vec::with_capacity(2 * pairs);
            for _ in 0..pairs {
                let mag = rng.gen_range(0.6..0.95);
                let phase = rng.gen_range(0.0..90.0f64).to_radians();
                let r = Complex64::from_polar(mag, phase);
                roots.push(r);
                roots.push(r.conj());
            }
            Polynomial::from_roots(&roots)
        };
        let c = draw_pairs(&mut rng, orders.p_c / 2)?;
        let d = draw_pairs(&mut rng, orders.p_d / 2)?;
        let f = draw_pairs(&mut rng, orders.p_f / 2)?;
        let model = BjModel::new(Polynomial::new(b), c, d, f, 1.0)?;
        if model.validate().is_ok() {
            return Ok(model);
        }
    }
    Err(Error::RetryBudgetExhausted(SAMPLER_RETRIES))
}

/// The first-order-noise benchmark model with second-order dynamics
/// (`B = q^-1 + 0.1 q^-2`, `F = 1 - 0.5 q^-1 + 0.75 q^-2`,
/// `C = 1 + 0.7 q^-1`, `D = 1 - 0.9 q^-1`, unit noise variance).
pub fn benchmark_model_basic() -> BjModel {
    BjModel::new(
        Polynomial::new(vec![0.0, 1.0, 0.1]),
        Polynomial::new(vec![1.0, 0.7]),
        Polynomial::new(vec![1.0, -0.9]),
        Polynomial::new(vec![1.0, -0.5, 0.75]),
        1.0,
    )
    .expect("constants satisfy the structural conventions")
}

/// The oscillatory fourth-order benchmark model with slow noise poles
/// (`D` poles at 0.98 and 0.97).
pub fn benchmark_model_oscillatory() -> BjModel {
    BjModel::new(
        Polynomial::new(vec![0.0, 1.0, 0.5, -2.0, 1.0]),
        Polynomial::new(vec![1.0, -0.6, 0.4]),
        Polynomial::new(vec![1.0, -1.95, 0.9506]),
        Polynomial::new(vec![1.0, -1.5, 0.7, 0.3, -0.2]),
        1.0,
    )
    .expect("constants satisfy the structural conventions")
}

//! Polynomial and rational-filter algebra in the backward-shift operator `q^-1`.
//!
//! A [`Polynomial`] stores coefficients lowest power first: `coeffs[k]` multiplies
//! `q^-k`. The transfer functions of a Box-Jenkins model are ratios of such
//! polynomials; stability of a denominator means every root of its forward form
//! `z^d * p(1/z)` lies strictly inside the unit circle.
//!
//! Stability is decided by the Schur-Cohn recursion (no eigensolver on the hot
//! path), while root magnitudes for diagnostics come from companion-matrix
//! eigenvalues.

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Default root-distance tolerance for [`coprime`].
pub const DEFAULT_COPRIME_TOL: f64 = 1e-6;

/// Polynomial in `q^-1`; `coeffs[k]` is the coefficient of `q^-k`.
///
/// Coefficients are never trimmed automatically: a leading zero (as in the
/// strictly delayed `B` polynomial) is structurally meaningful.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    /// Wraps a coefficient vector; `coeffs` must be nonempty.
    pub fn new(coeffs: Vec<f64>) -> Self {
        assert!(!coeffs.is_empty(), "polynomial needs at least one coefficient");
        Self { coeffs }
    }

    /// The constant polynomial 1.
    pub fn one() -> Self {
        Self::new(vec![1.0])
    }

    /// The coefficient sequence, lowest power of `q^-1` first.
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Nominal degree: `len(coeffs) - 1` (trailing zeros included by design).
    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// Coefficient of `q^-k`, zero beyond the stored range.
    pub fn coeff(&self, k: usize) -> f64 {
        self.coeffs.get(k).copied().unwrap_or(0.0)
    }

    /// True when the constant term is exactly 1 (the `C`, `D`, `F`, `V` convention).
    pub fn is_monic(&self) -> bool {
        self.coeffs[0] == 1.0
    }

    /// True when the constant term is exactly 0 (the `B`, `W` convention).
    pub fn is_strictly_delayed(&self) -> bool {
        self.coeffs[0] == 0.0
    }

    /// Product polynomial (coefficient convolution); degree adds.
    pub fn mul(&self, other: &Self) -> Self {
        let mut out = vec![0.0; self.coeffs.len() + other.coeffs.len() - 1];
        for (i, &a) in self.coeffs.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (j, &b) in other.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Self::new(out)
    }

    /// Coefficient-wise sum, zero-padding the shorter operand.
    pub fn add(&self, other: &Self) -> Self {
        let len = self.coeffs.len().max(other.coeffs.len());
        Self::new((0..len).map(|k| self.coeff(k) + other.coeff(k)).collect())
    }

    /// Coefficient-wise difference, zero-padding the shorter operand.
    pub fn sub(&self, other: &Self) -> Self {
        let len = self.coeffs.len().max(other.coeffs.len());
        Self::new((0..len).map(|k| self.coeff(k) - other.coeff(k)).collect())
    }

    /// Roots of the forward form `z^d * p(1/z)` via companion-matrix eigenvalues.
    ///
    /// Leading zero coefficients (pure delays) are skipped first; a polynomial
    /// that is constant after the skip has no roots.
    pub fn roots(&self) -> Vec<Complex64> {
        let first = self.coeffs.iter().position(|&a| a != 0.0);
        let trimmed = match first {
            Some(i) => &self.coeffs[i..],
            None => return Vec::new(),
        };
        let d = trimmed.len() - 1;
        if d == 0 {
            return Vec::new();
        }
        let a0 = trimmed[0];
        // Companion matrix of z^d + (a1/a0) z^(d-1) + ... + (ad/a0).
        let mut comp = DMatrix::<f64>::zeros(d, d);
        for j in 0..d {
            comp[(0, j)] = -trimmed[j + 1] / a0;
        }
        for i in 1..d {
            comp[(i, i - 1)] = 1.0;
        }
        comp.complex_eigenvalues().iter().copied().collect()
    }

    /// Schur-Cohn stability test: all forward-form roots strictly inside the
    /// unit circle. Requires a monic-in-`q^-1` polynomial.
    pub fn is_stable(&self) -> Result<bool> {
        if !self.is_monic() {
            return Err(Error::NotMonic(self.coeffs[0]));
        }
        let mut a = self.coeffs.clone();
        while a.len() > 1 {
            let d = a.len() - 1;
            let k = a[d];
            if k.abs() >= 1.0 {
                return Ok(false);
            }
            let denom = 1.0 - k * k;
            let next: Vec<f64> = (0..d).map(|i| (a[i] - k * a[d - i]) / denom).collect();
            a = next;
        }
        Ok(true)
    }

    /// Builds a monic-in-`q^-1` polynomial whose forward form has exactly the
    /// given roots. The multiset must be closed under complex conjugation;
    /// residual imaginary parts below 1e-12 are discarded.
    pub fn from_roots(roots: &[Complex64]) -> Result<Self> {
        const CONJ_TOL: f64 = 1e-9;
        // Verify conjugate closure by multiset matching of the non-real roots.
        let mut unmatched: Vec<Complex64> =
            roots.iter().copied().filter(|r| r.im.abs() > CONJ_TOL).collect();
        while let Some(r) = unmatched.pop() {
            let partner = unmatched
                .iter()
                .position(|s| (s.conj() - r).norm() <= CONJ_TOL * (1.0 + r.norm()));
            match partner {
                Some(i) => {
                    unmatched.swap_remove(i);
                }
                None => {
                    return Err(Error::RootsNotConjugateClosed { re: r.re, im: r.im });
                }
            }
        }
        // Multiply out (1 - r q^-1) factors in complex arithmetic.
        let mut acc = vec![Complex64::new(1.0, 0.0)];
        for &r in roots {
            let mut next = vec![Complex64::new(0.0, 0.0); acc.len() + 1];
            for (k, &c) in acc.iter().enumerate() {
                next[k] += c;
                next[k + 1] -= c * r;
            }
            acc = next;
        }
        let mut coeffs = Vec::with_capacity(acc.len());
        for c in &acc {
            debug_assert!(c.im.abs() < 1e-12, "imaginary residue {} survived", c.im);
            coeffs.push(c.re);
        }
        Ok(Self::new(coeffs))
    }
}

/// Maximum root modulus across the forward forms of several polynomials.
///
/// This is the decay-rate diagnostic for the truncated ARX expansion: the
/// recommended truncation order grows like `-log n / (2 log rho)` with `rho`
/// the value computed here for the noise and dynamics denominators.
pub fn max_root_magnitude(polys: &[&Polynomial]) -> Result<f64> {
    let mut max = 0.0f64;
    for p in polys {
        if !p.is_monic() {
            return Err(Error::NotMonic(p.coeffs()[0]));
        }
        if p.degree() == 0 {
            return Err(Error::DegreeZero);
        }
        for r in p.roots() {
            max = max.max(r.norm());
        }
    }
    Ok(max)
}

/// True when the forward forms of `a` and `b` share no root within `tol`.
pub fn coprime(a: &Polynomial, b: &Polynomial, tol: f64) -> bool {
    let ra = a.roots();
    let rb = b.roots();
    ra.iter().all(|x| rb.iter().all(|y| (x - y).norm() > tol))
}

/// Ratio of two polynomials in `q^-1`; the denominator must be monic.
///
/// Construction never checks stability (unstable intermediates are legitimate
/// diagnostics); filtering operations enforce their own preconditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RationalFilter {
    pub num: Polynomial,
    pub den: Polynomial,
}

impl RationalFilter {
    /// Pairs numerator and denominator; the denominator must be monic in `q^-1`.
    pub fn new(num: Polynomial, den: Polynomial) -> Result<Self> {
        if !den.is_monic() {
            return Err(Error::NotMonic(den.coeffs()[0]));
        }
        Ok(Self { num, den })
    }

    /// The identity filter 1/1.
    pub fn identity() -> Self {
        Self { num: Polynomial::one(), den: Polynomial::one() }
    }
}

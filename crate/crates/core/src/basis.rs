//! Clamped-clamped eigenbasis of the fourth-derivative operator on `[0, 1]`.
//!
//! The eigenfunctions satisfy `ψ = ψ_s = 0` at both ends and the roots
//! `α_k` solve `cos α cosh α = 1`, with `λ_k = α_k⁴`. Everything here is
//! evaluated in a form with the `e^α` growth factored out, so that the
//! profiles stay accurate for high modes.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::quadrature::GaussLegendre;

/// Above this many modes the basis is still built, but the default
/// quadrature is no longer tuned for it.
pub const MAX_STABLE_MODES: usize = 40;

/// Default Gauss-Legendre node count.
pub const DEFAULT_QUAD_NODES: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BasisError {
    #[error("mode index must be at least 1")]
    ZeroMode,
    #[error("root of cos(a) - sech(a) not bracketed for k = {k} in [{lo}, {hi}]")]
    RootNotBracketed { k: usize, lo: f64, hi: f64 },
    #[error("basis needs at least one mode")]
    Empty,
}

/// One eigenpair `(α_k, λ_k)` and the normalisation of its profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenPair {
    pub k: usize,
    pub alpha: f64,
    pub lambda: f64,
    /// `‖ψ̂_k‖_{L²}` of the unnormalised profile. Grows like `e^α`.
    pub norm: f64,
    // coefficients of the scaled profile φ = ψ̂ / (cos α − cosh α)
    sigma: f64,
    ratio: f64,
    scaled_norm: f64,
}

/// `cos α − sech α`; the same roots as `cos α cosh α − 1` without overflow.
pub fn stable_residual(alpha: f64) -> f64 {
    alpha.cos() - sech(alpha)
}

/// `cos α cosh α − 1` evaluated through the stable form (relative to `cosh α`).
pub fn relative_residual(alpha: f64) -> f64 {
    stable_residual(alpha)
}

fn sech(a: f64) -> f64 {
    let e = (-a.abs()).exp();
    2.0 * e / (1.0 + e * e)
}

fn dstable_residual(alpha: f64) -> f64 {
    let e = (-alpha).exp();
    let tanh = (1.0 - e * e) / (1.0 + e * e);
    -alpha.sin() + tanh * sech(alpha)
}

/// Bracket used for the `k`-th root.
pub fn root_bracket(k: usize) -> (f64, f64) {
    if k == 1 {
        (4.0, 5.0)
    } else {
        let c = (2 * k + 1) as f64 * PI / 2.0;
        (c - 0.3, c + 0.3)
    }
}

/// k-th positive root of `cos α cosh α = 1` by safeguarded Newton.
pub fn solve_alpha(k: usize) -> Result<f64, BasisError> {
    if k == 0 {
        return Err(BasisError::ZeroMode);
    }
    let (mut lo, mut hi) = root_bracket(k);
    let (flo, fhi) = (stable_residual(lo), stable_residual(hi));
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(BasisError::RootNotBracketed { k, lo, hi });
    }
    let lo_negative = flo < 0.0;
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = stable_residual(x);
        if f == 0.0 {
            return Ok(x);
        }
        if (f < 0.0) == lo_negative {
            lo = x;
        } else {
            hi = x;
        }
        let df = dstable_residual(x);
        let newton = x - f / df;
        let next = if df != 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - x).abs() <= 4.0 * f64::EPSILON * x.abs() || hi - lo <= 4.0 * f64::EPSILON * x {
            return Ok(next);
        }
        x = next;
    }
    Ok(x)
}

impl EigenPair {
    /// Builds the `k`-th pair; the norm is computed on `rule`.
    pub fn new(k: usize, rule: &GaussLegendre) -> Result<Self, BasisError> {
        let alpha = solve_alpha(k)?;
        let e = (-alpha).exp();
        let (c, s) = (alpha.cos(), alpha.sin());
        let sigma = (2.0 * s * e + 1.0 - e * e) / (2.0 * c * e - 1.0 - e * e);
        let ratio = (s + c - e) / (1.0 + e * e - 2.0 * c * e);
        let mut pair = EigenPair {
            k,
            alpha,
            lambda: alpha.powi(4),
            norm: 1.0,
            sigma,
            ratio,
            scaled_norm: 1.0,
        };
        let sq = rule.integrate(|x| pair.scaled_profile(x).powi(2));
        pair.scaled_norm = sq.sqrt();
        // ψ̂ = (cos α − cosh α) φ
        pair.norm = (alpha.cosh() - c) * pair.scaled_norm;
        Ok(pair)
    }

    fn scaled_profile(&self, s: f64) -> f64 {
        let a = self.alpha;
        let x = a * s;
        x.cos() + self.sigma * x.sin() - (-x).exp()
            + self.ratio * ((a * (s - 1.0)).exp() - (-a * (s + 1.0)).exp())
    }

    fn scaled_profile_s(&self, s: f64) -> f64 {
        let a = self.alpha;
        let x = a * s;
        a * (-x.sin()
            + self.sigma * x.cos()
            + (-x).exp()
            + self.ratio * ((a * (s - 1.0)).exp() + (-a * (s + 1.0)).exp()))
    }

    fn scaled_profile_ss(&self, s: f64) -> f64 {
        let a = self.alpha;
        let x = a * s;
        a * a
            * (-x.cos() - self.sigma * x.sin() - (-x).exp()
                + self.ratio * ((a * (s - 1.0)).exp() - (-a * (s + 1.0)).exp()))
    }

    /// Normalised eigenfunction `ψ_k(s)`.
    pub fn psi(&self, s: f64) -> f64 {
        // cos α − cosh α < 0, so ψ = −φ/‖φ‖
        -self.scaled_profile(s) / self.scaled_norm
    }

    /// `∂_s ψ_k(s)`.
    pub fn psi_s(&self, s: f64) -> f64 {
        -self.scaled_profile_s(s) / self.scaled_norm
    }

    /// `∂_ss ψ_k(s)`.
    pub fn psi_ss(&self, s: f64) -> f64 {
        -self.scaled_profile_ss(s) / self.scaled_norm
    }
}

/// Eigenpairs `k = 1..=K` with a quadrature grid and the overlap
/// matrix `S[k][ℓ] = ∫ ψ_k (ψ_ℓ)_s ds`. Immutable once built.
#[derive(Debug, Clone)]
pub struct EigenBasis {
    pairs: Vec<EigenPair>,
    rule: GaussLegendre,
    // psi[k][q], psi_s[k][q] at the quadrature nodes
    psi: Vec<Vec<f64>>,
    psi_s: Vec<Vec<f64>>,
    overlap: DMatrix<f64>,
}

/// Node count used by [`EigenBasis::new`]: 64, raised for large `K` so that
/// `ψ_K²` stays resolved.
pub fn default_quad_nodes(modes: usize) -> usize {
    DEFAULT_QUAD_NODES.max(4 * modes)
}

impl EigenBasis {
    pub fn new(modes: usize) -> Result<Self, BasisError> {
        Self::with_nodes(modes, default_quad_nodes(modes))
    }

    pub fn with_nodes(modes: usize, nodes: usize) -> Result<Self, BasisError> {
        if modes == 0 {
            return Err(BasisError::Empty);
        }
        let rule = GaussLegendre::new(nodes);
        let pairs = (1..=modes)
            .map(|k| EigenPair::new(k, &rule))
            .collect::<Result<Vec<_>, _>>()?;
        let psi: Vec<Vec<f64>> = pairs
            .iter()
            .map(|p| rule.nodes().iter().map(|&s| p.psi(s)).collect())
            .collect();
        let psi_s: Vec<Vec<f64>> = pairs
            .iter()
            .map(|p| rule.nodes().iter().map(|&s| p.psi_s(s)).collect())
            .collect();
        let w = rule.weights();
        let overlap = DMatrix::from_fn(modes, modes, |k, l| {
            if k == l || (k + l) % 2 == 0 {
                // ψ_k² /2 is an exact derivative; same-parity products are odd about 1/2
                0.0
            } else {
                (0..w.len()).map(|q| w[q] * psi[k][q] * psi_s[l][q]).sum()
            }
        });
        Ok(Self {
            pairs,
            rule,
            psi,
            psi_s,
            overlap,
        })
    }

    pub fn modes(&self) -> usize {
        self.pairs.len()
    }

    pub fn pairs(&self) -> &[EigenPair] {
        &self.pairs
    }

    /// Pair for 1-based mode index `k`.
    pub fn pair(&self, k: usize) -> &EigenPair {
        &self.pairs[k - 1]
    }

    pub fn quadrature(&self) -> &GaussLegendre {
        &self.rule
    }

    /// `ψ_k` sampled at the quadrature nodes (0-based `k`).
    pub fn psi_at_nodes(&self, k: usize) -> &[f64] {
        &self.psi[k]
    }

    pub fn psi_s_at_nodes(&self, k: usize) -> &[f64] {
        &self.psi_s[k]
    }

    /// `S[k][ℓ] = ∫₀¹ ψ_k (ψ_ℓ)_s ds`, 0-based indices.
    pub fn overlap(&self) -> &DMatrix<f64> {
        &self.overlap
    }

    /// Overlap integrals computed by quadrature for every index pair,
    /// including those that vanish by symmetry.
    pub fn overlap_by_quadrature(&self) -> DMatrix<f64> {
        let w = self.rule.weights();
        let n = self.modes();
        DMatrix::from_fn(n, n, |k, l| {
            (0..w.len())
                .map(|q| w[q] * self.psi[k][q] * self.psi_s[l][q])
                .sum()
        })
    }

    /// Gram matrix `∫ ψ_k ψ_ℓ ds` on the basis grid.
    pub fn gram(&self) -> DMatrix<f64> {
        let w = self.rule.weights();
        let n = self.modes();
        DMatrix::from_fn(n, n, |k, l| {
            (0..w.len())
                .map(|q| w[q] * self.psi[k][q] * self.psi[l][q])
                .sum()
        })
    }

    /// Coefficients `ũ_k = ∫ f ψ_k ds` for `k = 1..=K`.
    pub fn expand<F: Fn(f64) -> f64>(&self, f: F) -> Vec<f64> {
        let samples: Vec<f64> = self.rule.nodes().iter().map(|&s| f(s)).collect();
        self.expand_samples(&samples)
    }

    /// Same as [`expand`](Self::expand) from values at the quadrature nodes.
    pub fn expand_samples(&self, samples: &[f64]) -> Vec<f64> {
        let w = self.rule.weights();
        self.psi
            .iter()
            .map(|p| (0..w.len()).map(|q| w[q] * p[q] * samples[q]).sum())
            .collect()
    }

    /// `Σ c_k ψ_k(s)` for as many coefficients as given.
    pub fn reconstruct(&self, coeffs: &[f64], s: f64) -> f64 {
        coeffs
            .iter()
            .zip(&self.pairs)
            .map(|(c, p)| c * p.psi(s))
            .sum()
    }

    /// `Σ c_k ψ_k'(s)`.
    pub fn reconstruct_s(&self, coeffs: &[f64], s: f64) -> f64 {
        coeffs
            .iter()
            .zip(&self.pairs)
            .map(|(c, p)| c * p.psi_s(s))
            .sum()
    }
}

//! Closed-form small-amplitude predictions: frequency response of each
//! beam mode, the period-averaged swimming speed as a quadratic form in
//! the forcing coefficients, decay rates of the linear dynamics, and a
//! maximiser of that quadratic form.
//!
//! Forcing coefficients enter as [`ModeCoeffs`], i.e. for
//! `κ₀ = Σ (a_k cos ωt + b_k sin ωt) ψ_k`. The speed formulas are written
//! for the expansion `Σ (a_k cos ωt − b'_k sin ωt) ψ_k`, so `b' = −b` is
//! applied internally.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::EigenBasis;
use crate::forcing::{ModeCoeffs, DEFAULT_OMEGA};

#[derive(Debug, Error)]
pub enum TheoryError {
    #[error("invalid fluid parameter {field}: {reason}")]
    InvalidParams { field: &'static str, reason: String },
    #[error("relaxation time is zero: the linear operator has a single Newtonian branch")]
    NewtonianLimit,
    #[error("a budget of {0} mode(s) cannot propel the filament; at least 2 are needed")]
    DegenerateBudget(usize),
    #[error("coefficient vectors have {got} modes but the basis has {want}")]
    ModeMismatch { got: usize, want: usize },
    #[error("power iteration did not converge after {0} iterations")]
    NoConvergence(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Physical parameters shared by the theory and the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluidParams {
    /// Drag anisotropy of resistive force theory.
    #[serde(default = "one")]
    pub gamma: f64,
    /// Polymer to solvent viscosity ratio.
    #[serde(default)]
    pub mu: f64,
    /// Polymer relaxation time.
    #[serde(default = "one")]
    pub delta: f64,
    /// Forcing frequency.
    #[serde(default = "default_omega")]
    pub omega: f64,
}

fn one() -> f64 {
    1.0
}
fn default_omega() -> f64 {
    DEFAULT_OMEGA
}

impl Default for FluidParams {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            mu: 0.0,
            delta: 1.0,
            omega: DEFAULT_OMEGA,
        }
    }
}

impl FluidParams {
    pub fn new(gamma: f64, mu: f64, delta: f64, omega: f64) -> Result<Self, TheoryError> {
        let p = Self {
            gamma,
            mu,
            delta,
            omega,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), TheoryError> {
        let check = |field: &'static str, v: f64, positive: bool| {
            let ok = v.is_finite() && if positive { v > 0.0 } else { v >= 0.0 };
            if ok {
                Ok(())
            } else {
                let need = if positive { "> 0" } else { ">= 0" };
                Err(TheoryError::InvalidParams {
                    field,
                    reason: format!("{v} is not finite and {need}"),
                })
            }
        };
        check("gamma", self.gamma, false)?;
        check("mu", self.mu, false)?;
        check("delta", self.delta, false)?;
        check("omega", self.omega, true)
    }

    pub fn period(&self) -> f64 {
        2.0 * PI / self.omega
    }

    /// True when the fluid behaves as the purely viscous solvent.
    pub fn is_newtonian(&self) -> bool {
        self.mu == 0.0 || self.delta == 0.0
    }
}

/// Which closed form of the velocity-memory coupling to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WForm {
    /// Obtained by averaging the product of the periodic linear solution
    /// with the forcing; the memory terms only modify `W₁`, `W₂`.
    #[default]
    Derived,
    /// The four-coefficient closed form as commonly quoted, kept so the
    /// two can be compared.
    Printed,
}

/// Response of mode `λ` to forcing at temporal harmonic `m`.
pub fn q_h(m: usize, lambda: f64, p: &FluidParams) -> (f64, f64) {
    let wm = p.omega * m as f64;
    if p.is_newtonian() {
        let den = lambda * lambda + wm * wm;
        return (lambda * wm / den, wm * wm / den);
    }
    let (mu, d) = (p.mu, p.delta);
    let dw2 = (d * wm).powi(2);
    let den = lambda * lambda * (1.0 + (1.0 + mu).powi(2) * dw2)
        + wm * wm * (2.0 * mu * d * lambda + 1.0 + dw2);
    let q = lambda * wm * (1.0 + (1.0 + mu) * dw2) / den;
    let h = wm * wm * (mu * d * lambda + 1.0 + dw2) / den;
    (q, h)
}

/// `(Q, H)` for 1-based mode `k` of `basis`.
pub fn q_h_mode(m: usize, k: usize, p: &FluidParams, basis: &EigenBasis) -> (f64, f64) {
    q_h(m, basis.pair(k).lambda, p)
}

/// The four coupling coefficients `W_{j, m ℓ k}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WCoeffs {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
}

/// Coefficients from precomputed `(Q, H)` of modes `ℓ` and `k`.
pub fn w_from_qh(
    (q_l, h_l): (f64, f64),
    (q_k, h_k): (f64, f64),
    m: usize,
    p: &FluidParams,
    form: WForm,
) -> WCoeffs {
    let dw = p.delta * p.omega * m as f64;
    let pre = p.mu * dw / (1.0 + dw * dw);
    match form {
        WForm::Derived => {
            let alpha = q_k - dw * h_k;
            let beta = dw * q_k + h_k;
            WCoeffs {
                w1: q_k - pre * (q_l * alpha - (1.0 - h_l) * beta),
                w2: h_k - pre * ((1.0 - h_l) * alpha + q_l * beta),
                w3: 0.0,
                w4: 0.0,
            }
        }
        WForm::Printed => WCoeffs {
            w1: q_k - pre * (-dw * (1.0 - h_l) * q_k + q_l * q_k),
            w2: h_k - pre * (dw * q_l * q_k + (1.0 - h_l) * q_k),
            w3: -pre * (dw * (1.0 - h_l) * h_k + q_l * h_k),
            w4: -pre * (dw * q_l * h_k - (1.0 - h_l) * h_k),
        },
    }
}

/// `W_{m ℓ k}` for 1-based spatial modes.
pub fn w_coeffs(
    m: usize,
    l: usize,
    k: usize,
    p: &FluidParams,
    basis: &EigenBasis,
    form: WForm,
) -> WCoeffs {
    w_from_qh(
        q_h_mode(m, l, p, basis),
        q_h_mode(m, k, p, basis),
        m,
        p,
        form,
    )
}

/// All coefficients for the single forced harmonic `m = 1`, plus the
/// assembled quadratic form.
#[derive(Debug, Clone)]
pub struct SpeedTable {
    pub params: FluidParams,
    pub form: WForm,
    pub q: Vec<f64>,
    pub h: Vec<f64>,
    /// `W[ℓ][k]` (0-based).
    pub w1: DMatrix<f64>,
    pub w2: DMatrix<f64>,
    pub w3: DMatrix<f64>,
    pub w4: DMatrix<f64>,
    /// `S[k][ℓ] = ∫ ψ_k (ψ_ℓ)_s ds`.
    pub s: DMatrix<f64>,
    /// Symmetric `2K × 2K` matrix with `⟨U⟩ = xᵀ M x`, `x = (a, b)`.
    pub m_quad: DMatrix<f64>,
}

impl SpeedTable {
    pub fn new(p: &FluidParams, basis: &EigenBasis) -> Self {
        Self::with_form(p, basis, WForm::Derived)
    }

    pub fn with_form(p: &FluidParams, basis: &EigenBasis, form: WForm) -> Self {
        let n = basis.modes();
        let qh: Vec<(f64, f64)> = basis.pairs().iter().map(|e| q_h(1, e.lambda, p)).collect();
        let w: Vec<WCoeffs> = (0..n * n)
            .map(|i| w_from_qh(qh[i / n], qh[i % n], 1, p, form))
            .collect();
        let grab = |f: fn(&WCoeffs) -> f64| DMatrix::from_fn(n, n, |l, k| f(&w[l * n + k]));
        let mut table = Self {
            params: *p,
            form,
            q: qh.iter().map(|x| x.0).collect(),
            h: qh.iter().map(|x| x.1).collect(),
            w1: grab(|c| c.w1),
            w2: grab(|c| c.w2),
            w3: grab(|c| c.w3),
            w4: grab(|c| c.w4),
            s: basis.overlap().clone(),
            m_quad: DMatrix::zeros(2 * n, 2 * n),
        };
        table.m_quad = table.assemble_quadratic_form();
        table
    }

    pub fn modes(&self) -> usize {
        self.q.len()
    }

    fn assemble_quadratic_form(&self) -> DMatrix<f64> {
        let n = self.modes();
        let mut r = DMatrix::zeros(2 * n, 2 * n);
        let half_gamma = 0.5 * self.params.gamma;
        for k in 0..n {
            for l in 0..n {
                let g = half_gamma * self.s[(k, l)];
                if g == 0.0 {
                    continue;
                }
                let (w1, w2, w3, w4) = (
                    self.w1[(l, k)],
                    self.w2[(l, k)],
                    self.w3[(l, k)],
                    self.w4[(l, k)],
                );
                // sine coefficients carry the opposite sign of the formula's b
                r[(k, n + l)] -= g * w1;
                r[(l, n + k)] += g * w1;
                r[(k, l)] += g * (w2 + w3);
                r[(n + k, n + l)] += g * (w2 - w3);
                r[(l, n + k)] -= g * w4;
                r[(k, n + l)] -= g * w4;
            }
        }
        (&r + r.transpose()) * 0.5
    }

    /// Period-averaged speed, evaluated as the double sum.
    pub fn speed(&self, c: &ModeCoeffs) -> Result<f64, TheoryError> {
        let n = self.modes();
        check_len(c, n)?;
        let a = &c.a;
        let b: Vec<f64> = c.b.iter().map(|x| -x).collect();
        let mut total = 0.0;
        for k in 0..n {
            for l in 0..n {
                let s = self.s[(k, l)];
                if s == 0.0 {
                    continue;
                }
                let term = self.w1[(l, k)] * (a[k] * b[l] - a[l] * b[k])
                    + self.w2[(l, k)] * (a[k] * a[l] + b[k] * b[l])
                    + self.w3[(l, k)] * (a[k] * a[l] - b[k] * b[l])
                    + self.w4[(l, k)] * (a[l] * b[k] + b[l] * a[k]);
                total += term * s;
            }
        }
        Ok(0.5 * self.params.gamma * total)
    }

    /// `xᵀ M x` with `x = (a, b)`.
    pub fn speed_quadratic(&self, c: &ModeCoeffs) -> Result<f64, TheoryError> {
        check_len(c, self.modes())?;
        let x = stack(c);
        Ok(x.dot(&(&self.m_quad * &x)))
    }

    /// Coefficient table as CSV: `k, l, lambda_k, Q_k, H_k, W1..W4, S_kl`
    /// with 1-based indices.
    pub fn write_csv<W: Write>(&self, basis: &EigenBasis, mut out: W) -> Result<(), TheoryError> {
        let p = &self.params;
        writeln!(
            out,
            "# gamma={} mu={} delta={} omega={} form={:?}",
            p.gamma, p.mu, p.delta, p.omega, self.form
        )?;
        writeln!(out, "k,l,lambda_k,Q_k,H_k,W1,W2,W3,W4,S_kl")?;
        let n = self.modes();
        for k in 0..n {
            for l in 0..n {
                writeln!(
                    out,
                    "{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
                    k + 1,
                    l + 1,
                    basis.pairs()[k].lambda,
                    self.q[k],
                    self.h[k],
                    self.w1[(l, k)],
                    self.w2[(l, k)],
                    self.w3[(l, k)],
                    self.w4[(l, k)],
                    self.s[(k, l)]
                )?;
            }
        }
        Ok(())
    }
}

fn check_len(c: &ModeCoeffs, want: usize) -> Result<(), TheoryError> {
    if c.a.len() != want || c.b.len() != want {
        return Err(TheoryError::ModeMismatch {
            got: c.a.len().max(c.b.len()),
            want,
        });
    }
    Ok(())
}

fn stack(c: &ModeCoeffs) -> DVector<f64> {
    DVector::from_iterator(c.a.len() * 2, c.a.iter().chain(&c.b).copied())
}

fn unstack(x: &DVector<f64>) -> ModeCoeffs {
    let n = x.len() / 2;
    ModeCoeffs {
        a: x.rows(0, n).iter().copied().collect(),
        b: x.rows(n, n).iter().copied().collect(),
    }
}

/// Period-averaged viscoelastic swimming speed (leading order).
pub fn avg_speed_ve(c: &ModeCoeffs, p: &FluidParams, basis: &EigenBasis) -> Result<f64, TheoryError> {
    SpeedTable::new(p, basis).speed(c)
}

/// Period-averaged speed of the same forcing in the viscous solvent alone.
pub fn avg_speed_newtonian(
    c: &ModeCoeffs,
    p: &FluidParams,
    basis: &EigenBasis,
) -> Result<f64, TheoryError> {
    let n = basis.modes();
    check_len(c, n)?;
    let w = p.omega;
    let a = &c.a;
    let b: Vec<f64> = c.b.iter().map(|x| -x).collect();
    let s = basis.overlap();
    let mut total = 0.0;
    for (k, pk) in basis.pairs().iter().enumerate() {
        let lam = pk.lambda;
        let weight = w * w / (w * w + lam * lam);
        for l in 0..n {
            let skl = s[(k, l)];
            if skl == 0.0 {
                continue;
            }
            total += weight
                * (lam / w * (a[k] * b[l] - b[k] * a[l]) + a[k] * a[l] + b[k] * b[l])
                * skl;
        }
    }
    Ok(0.5 * p.gamma * total)
}

/// Leading-order `δ`-large approximation of the general-swimmer speed.
pub fn avg_speed_large_delta(
    c: &ModeCoeffs,
    p: &FluidParams,
    basis: &EigenBasis,
) -> Result<f64, TheoryError> {
    let n = basis.modes();
    check_len(c, n)?;
    let dw2 = (p.delta * p.omega).powi(2);
    let factor = (1.0 + (1.0 + p.mu) * dw2) / (1.0 + dw2);
    let a = &c.a;
    let b: Vec<f64> = c.b.iter().map(|x| -x).collect();
    let s = basis.overlap();
    let mut total = 0.0;
    for (k, pk) in basis.pairs().iter().enumerate() {
        let (q, _) = q_h(1, pk.lambda, p);
        for l in 0..n {
            total += factor * q * (a[k] * b[l] - a[l] * b[k]) * s[(k, l)];
        }
    }
    Ok(0.5 * p.gamma * total)
}

/// Coefficients to leading order in `1/λ_k` (independent of `ℓ`).
pub fn w_reduced(k: usize, p: &FluidParams, basis: &EigenBasis) -> WCoeffs {
    let (q, h) = q_h_mode(1, k, p, basis);
    let dw = p.delta * p.omega;
    let den = 1.0 + dw * dw;
    WCoeffs {
        w1: q + p.mu * dw * dw / den * q,
        w2: h - p.mu * dw / den * q,
        w3: -p.mu * dw * dw / den * h,
        w4: p.mu * dw / den * h,
    }
}

/// Leading behaviour of the equal-profile coefficient `W₂ + W₄`.
pub fn bad_swimmer_leading(k: usize, p: &FluidParams, basis: &EigenBasis) -> f64 {
    let (q, h) = q_h_mode(1, k, p, basis);
    let dw = p.delta * p.omega;
    h - p.mu * dw / (1.0 + dw * dw) * (q + h)
}

/// Mode coefficients of the `T`-periodic solution of the linearised
/// dynamics, `κ̄ = Σ (c cos ωt − d sin ωt) ψ_k` and
/// `κ̄ − ξ = Σ (e cos ωt − f sin ωt) ψ_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPeriodic {
    pub c: Vec<f64>,
    pub d: Vec<f64>,
    pub e: Vec<f64>,
    pub f: Vec<f64>,
    omega: f64,
}

pub fn lin_periodic_solution(
    coeffs: &ModeCoeffs,
    p: &FluidParams,
    basis: &EigenBasis,
) -> Result<LinearPeriodic, TheoryError> {
    let n = basis.modes();
    check_len(coeffs, n)?;
    let dw = p.delta * p.omega;
    let pre = dw / (1.0 + dw * dw);
    let mut out = LinearPeriodic {
        c: vec![0.0; n],
        d: vec![0.0; n],
        e: vec![0.0; n],
        f: vec![0.0; n],
        omega: p.omega,
    };
    for (k, pk) in basis.pairs().iter().enumerate() {
        let (q, h) = q_h(1, pk.lambda, p);
        let a = coeffs.a[k];
        let b = -coeffs.b[k];
        let c = q * b - h * a;
        let d = -q * a - h * b;
        out.c[k] = c;
        out.d[k] = d;
        out.e[k] = pre * (dw * c - d);
        out.f[k] = pre * (dw * d + c);
    }
    Ok(out)
}

impl LinearPeriodic {
    /// `κ̄^lin(s, t)`.
    pub fn kappa_bar(&self, basis: &EigenBasis, s: f64, t: f64) -> f64 {
        self.field(&self.c, &self.d, basis, s, t)
    }

    /// `z^lin = κ̄^lin − ξ^lin`.
    pub fn z(&self, basis: &EigenBasis, s: f64, t: f64) -> f64 {
        self.field(&self.e, &self.f, basis, s, t)
    }

    fn field(&self, cos: &[f64], sin: &[f64], basis: &EigenBasis, s: f64, t: f64) -> f64 {
        let (cw, sw) = ((self.omega * t).cos(), (self.omega * t).sin());
        basis
            .pairs()
            .iter()
            .zip(cos.iter().zip(sin))
            .map(|(pk, (x, y))| (x * cw - y * sw) * pk.psi(s))
            .sum()
    }

    /// Largest residual of the per-mode frequency-domain equations.
    pub fn residual(&self, coeffs: &ModeCoeffs, p: &FluidParams, basis: &EigenBasis) -> f64 {
        let w = p.omega;
        basis
            .pairs()
            .iter()
            .enumerate()
            .map(|(k, pk)| {
                let lam = pk.lambda;
                let (a, b) = (coeffs.a[k], -coeffs.b[k]);
                let (c, d, e, f) = (self.c[k], self.d[k], self.e[k], self.f[k]);
                let scale = 1.0 + w * (a.abs() + b.abs());
                let r1 = -w * c - (lam * d + p.mu * lam * f + w * a);
                let r2 = -w * d - (-lam * c - p.mu * lam * e + w * b);
                // memory relation, multiplied through by δ
                let r3 = p.delta * (-w * e + w * c) - f;
                let r4 = p.delta * (-w * f + w * d) + e;
                [r1, r2, r3, r4]
                    .iter()
                    .map(|r| r.abs() / scale)
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }

    /// Period average of the linear speed integrand computed directly
    /// from `(c, d, e, f)`; an independent route to `⟨U⟩`.
    pub fn averaged_speed(&self, coeffs: &ModeCoeffs, p: &FluidParams, basis: &EigenBasis) -> f64 {
        let s = basis.overlap();
        let n = basis.modes();
        let a = &coeffs.a;
        let b: Vec<f64> = coeffs.b.iter().map(|x| -x).collect();
        let mut total = 0.0;
        for k in 0..n {
            for l in 0..n {
                let skl = s[(k, l)];
                if skl == 0.0 {
                    continue;
                }
                total -= 0.5 * (a[l] * self.c[k] + b[l] * self.d[k]) * skl;
                total -= 0.5
                    * p.mu
                    * ((a[l] + self.c[l]) * self.e[k] + (b[l] + self.d[l]) * self.f[k])
                    * skl;
            }
        }
        p.gamma * total
    }
}

/// Both eigenvalues `(ν⁻, ν⁺)` of the linear two-field operator on mode `k`.
pub fn matrix_eigenvalues(
    k: usize,
    p: &FluidParams,
    basis: &EigenBasis,
) -> Result<(f64, f64), TheoryError> {
    eigenvalues_for(basis.pair(k).lambda, p)
}

/// Same as [`matrix_eigenvalues`] for an explicit eigenvalue `λ`.
pub fn eigenvalues_for(lambda: f64, p: &FluidParams) -> Result<(f64, f64), TheoryError> {
    if p.delta == 0.0 {
        return Err(TheoryError::NewtonianLimit);
    }
    let d = p.delta;
    let b = 1.0 + (1.0 + p.mu) * d * lambda;
    let disc = (b * b - 4.0 * d * lambda).max(0.0).sqrt();
    let minus = -(b + disc) / (2.0 * d);
    // product of the roots is λ/δ; avoids cancellation in the slow root
    let plus = lambda / d / minus;
    Ok((minus, plus))
}

/// Leading eigenpair of the speed quadratic form.
#[derive(Debug, Clone)]
pub struct Optimum {
    pub coeffs: ModeCoeffs,
    pub speed: f64,
    pub iterations: usize,
}

const POWER_TOL: f64 = 1e-13;
const POWER_MAX_ITER: usize = 2_000_000;

/// Maximises `⟨U⟩` over unit `(a, b)` restricted to the first `k` modes
/// by shifted power iteration on the symmetric form.
pub fn optimize_forcing(
    k: usize,
    p: &FluidParams,
    basis: &EigenBasis,
) -> Result<Optimum, TheoryError> {
    if k < 2 {
        return Err(TheoryError::DegenerateBudget(k));
    }
    if k > basis.modes() {
        return Err(TheoryError::ModeMismatch {
            got: k,
            want: basis.modes(),
        });
    }
    let table = SpeedTable::new(p, basis);
    let n = basis.modes();
    // restrict the form to (a_1..a_k, b_1..b_k)
    let idx: Vec<usize> = (0..k).chain(n..n + k).collect();
    let m = DMatrix::from_fn(2 * k, 2 * k, |i, j| table.m_quad[(idx[i], idx[j])]);
    let (x, iterations) = leading_eigenvector(&m)?;
    let speed = x.dot(&(&m * &x));
    let mut coeffs = ModeCoeffs::zeros(n);
    coeffs.a[..k].copy_from_slice(&x.as_slice()[..k]);
    coeffs.b[..k].copy_from_slice(&x.as_slice()[k..]);
    Ok(Optimum {
        coeffs,
        speed,
        iterations,
    })
}

/// Vector for the largest eigenvalue of symmetric `m`, with the iteration
/// count. The shift by the Gershgorin radius makes every eigenvalue
/// non-negative so that the largest algebraic one dominates.
pub fn leading_eigenvector(m: &DMatrix<f64>) -> Result<(DVector<f64>, usize), TheoryError> {
    let n = m.nrows();
    let shift = (0..n)
        .map(|i| m.row(i).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    if shift == 0.0 {
        let mut x = DVector::zeros(n);
        x[0] = 1.0;
        return Ok((x, 0));
    }
    let shifted = m + DMatrix::identity(n, n) * shift;
    // squaring the operator a few times speeds up the slow shifted iteration
    let mut op = shifted.clone() / shift;
    for _ in 0..6 {
        op = &op * &op;
        let scale = op.amax();
        op /= scale;
    }
    let mut x = DVector::from_fn(n, |i, _| 1.0 + 0.01 * (i as f64 + 1.0).sqrt());
    x /= x.norm();
    for it in 1..=POWER_MAX_ITER {
        let mut y = &op * &x;
        y /= y.norm();
        let defect = (&y - &x).amax();
        x = y;
        if defect < POWER_TOL {
            // polish on the unsquared operator
            for _ in 0..50 {
                let mut z = &shifted * &x;
                z /= z.norm();
                x = z;
            }
            return Ok((x, it));
        }
    }
    Err(TheoryError::NoConvergence(POWER_MAX_ITER))
}

/// Fixed-point defect of one shifted power-iteration step at `x`.
pub fn power_fixed_point_defect(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    let n = m.nrows();
    let shift = (0..n)
        .map(|i| m.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut y = m * x + x * shift;
    y /= y.norm();
    (&y - x).amax()
}

/// `x = (a, b)` stacked, normalised; `⟨U⟩ = xᵀ M x`.
pub fn unit_coeffs_from(x: &DVector<f64>) -> ModeCoeffs {
    unstack(&(x / x.norm()))
}

/// Sweep of `⟨U⟩` over a `(μ, δ)` grid.
pub fn speed_sweep(
    coeffs: &ModeCoeffs,
    base: &FluidParams,
    basis: &EigenBasis,
    mus: &[f64],
    deltas: &[f64],
) -> Result<Vec<(f64, f64, f64, f64)>, TheoryError> {
    let mut rows = Vec::with_capacity(mus.len() * deltas.len());
    for &mu in mus {
        for &delta in deltas {
            let p = FluidParams { mu, delta, ..*base };
            p.validate()?;
            let ve = avg_speed_ve(coeffs, &p, basis)?;
            let nw = avg_speed_newtonian(coeffs, &p, basis)?;
            rows.push((mu, delta, ve, nw));
        }
    }
    Ok(rows)
}

pub fn write_sweep_csv<W: Write>(
    rows: &[(f64, f64, f64, f64)],
    mut out: W,
) -> Result<(), TheoryError> {
    writeln!(out, "mu,delta,speed_ve,speed_newtonian")?;
    for (mu, delta, ve, nw) in rows {
        writeln!(out, "{mu},{delta},{ve:e},{nw:e}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forcing::{ForcingSpec, Profile};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(mu: f64, delta: f64) -> FluidParams {
        FluidParams::new(1.0, mu, delta, DEFAULT_OMEGA).unwrap()
    }

    fn random_coeffs(rng: &mut ChaCha8Rng, n: usize) -> ModeCoeffs {
        ModeCoeffs {
            a: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            b: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        }
    }

    #[test]
    fn newtonian_q_h() {
        let basis = EigenBasis::new(6).unwrap();
        for p in [params(0.0, 1.0), params(3.0, 0.0)] {
            for k in 1..=6 {
                let lam = basis.pair(k).lambda;
                let w = p.omega;
                let (q, h) = q_h_mode(1, k, &p, &basis);
                assert!((q - lam * w / (lam * lam + w * w)).abs() < 1e-16);
                assert!((h - w * w / (lam * lam + w * w)).abs() < 1e-16);
            }
        }
    }

    #[test]
    fn q_h_reference_values() {
        // evaluated separately in 50-digit arithmetic
        let basis = EigenBasis::new(1).unwrap();
        let (q, h) = q_h_mode(1, 1, &params(1.0, 1.0), &basis);
        assert!((q / 0.099_319_409_180_117_399 - 1.0).abs() < 1e-12, "{q}");
        assert!((h / 0.010_467_871_145_027_849 - 1.0).abs() < 1e-12, "{h}");
    }

    #[test]
    fn q_h_bounds() {
        let basis = EigenBasis::new(20).unwrap();
        for (mu, delta) in [(0.0, 1.0), (1.0, 1.0), (8.0, 1.0 / DEFAULT_OMEGA), (2.0, 50.0)] {
            let p = params(mu, delta);
            for k in 1..=20 {
                let (q, h) = q_h_mode(1, k, &p, &basis);
                assert!(q > 0.0 && h > 0.0 && h < 1.0);
            }
        }
    }

    #[test]
    fn w_newtonian_reduction() {
        let basis = EigenBasis::new(5).unwrap();
        for form in [WForm::Derived, WForm::Printed] {
            let p = params(0.0, 2.0);
            for l in 1..=5 {
                for k in 1..=5 {
                    let w = w_coeffs(1, l, k, &p, &basis, form);
                    let (q, h) = q_h_mode(1, k, &p, &basis);
                    assert_eq!((w.w1, w.w2, w.w3, w.w4), (q, h, 0.0, 0.0));
                }
            }
        }
    }

    #[test]
    fn equal_profile_coefficient_at_large_delta() {
        // the leading-order helper tends to H_k for δ ≫ 1/ω, while the exact
        // coefficient keeps a memory correction of the same order in 1/λ
        let basis = EigenBasis::new(4).unwrap();
        let p = params(1.0, 1e6);
        for k in 1..=4 {
            let (q_k, h_k) = q_h_mode(1, k, &p, &basis);
            assert!((bad_swimmer_leading(k, &p, &basis) - h_k).abs() < 1e-3 * h_k);
            for l in 1..=4 {
                let (q_l, h_l) = q_h_mode(1, l, &p, &basis);
                let w = w_coeffs(1, l, k, &p, &basis, WForm::Derived);
                let limit = h_k * (1.0 + p.mu * (1.0 - h_l)) - p.mu * q_l * q_k;
                assert!(((w.w2 + w.w4) - limit).abs() < 1e-4 * limit.abs(), "k={k} l={l}");
            }
        }
    }

    #[test]
    fn parity_forcing_has_no_speed() {
        let basis = EigenBasis::new(8).unwrap();
        let p = params(2.0, 0.3);
        let mut c = ModeCoeffs::zeros(8);
        for k in [0, 2, 4, 6] {
            c.a[k] = 0.3 + k as f64;
            c.b[k] = -1.0 / (k as f64 + 1.0);
        }
        assert_eq!(avg_speed_ve(&c, &p, &basis).unwrap(), 0.0);
        assert_eq!(avg_speed_newtonian(&c, &p, &basis).unwrap(), 0.0);
    }

    #[test]
    fn both_speed_routes_agree() {
        let basis = EigenBasis::new(12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (mu, delta) in [(0.0, 1.0), (1.0, 1.0), (2.0, 1.0 / DEFAULT_OMEGA), (4.0, 0.05)] {
            let p = params(mu, delta);
            let table = SpeedTable::new(&p, &basis);
            for _ in 0..5 {
                let c = random_coeffs(&mut rng, 12);
                let u = table.speed(&c).unwrap();
                let lin = lin_periodic_solution(&c, &p, &basis).unwrap();
                let direct = lin.averaged_speed(&c, &p, &basis);
                let quad = table.speed_quadratic(&c).unwrap();
                let scale = u.abs().max(1e-12);
                assert!((u - direct).abs() < 1e-10 * scale, "{u} vs {direct}");
                assert!((u - quad).abs() < 1e-10 * scale);
            }
        }
    }

    #[test]
    fn printed_form_differs_for_viscoelastic_fluid() {
        let basis = EigenBasis::new(12).unwrap();
        let c = ForcingSpec::bad_swimmer().build().unwrap().mode_coeffs(&basis);
        let p = params(2.0, 1.0 / DEFAULT_OMEGA);
        let derived = SpeedTable::with_form(&p, &basis, WForm::Derived).speed(&c).unwrap();
        let printed = SpeedTable::with_form(&p, &basis, WForm::Printed).speed(&c).unwrap();
        assert!((derived - printed).abs() > 1e-3 * derived.abs());
    }

    #[test]
    fn equal_profiles_reduce_to_w2_plus_w4() {
        let basis = EigenBasis::new(10).unwrap();
        let c = ForcingSpec::bad_swimmer().build().unwrap().mode_coeffs(&basis);
        let p = params(1.0, 1.0);
        let table = SpeedTable::new(&p, &basis);
        let mut want = 0.0;
        for k in 0..10 {
            for l in 0..10 {
                want += (table.w2[(l, k)] + table.w4[(l, k)]) * c.a[k] * c.a[l] * table.s[(k, l)];
            }
        }
        want *= p.gamma;
        let got = table.speed(&c).unwrap();
        assert!((got - want).abs() < 1e-12 * want.abs());
        // a swimmer pushing with its head moves backwards
        assert!(got < 0.0);
    }

    #[test]
    fn linear_solution_residual_and_limits() {
        let basis = EigenBasis::new(10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (mu, delta) in [(1.0, 1.0), (3.0, 0.01), (0.5, 7.0)] {
            let p = params(mu, delta);
            let c = random_coeffs(&mut rng, 10);
            let lin = lin_periodic_solution(&c, &p, &basis).unwrap();
            assert!(lin.residual(&c, &p, &basis) < 1e-10);
        }
        let zero = lin_periodic_solution(&ModeCoeffs::zeros(10), &params(1.0, 1.0), &basis).unwrap();
        assert!(zero.c.iter().chain(&zero.d).chain(&zero.e).chain(&zero.f).all(|&x| x == 0.0));
        let c = random_coeffs(&mut rng, 10);
        let newt = lin_periodic_solution(&c, &params(1.0, 0.0), &basis).unwrap();
        assert!(newt.e.iter().chain(&newt.f).all(|&x| x == 0.0));
    }

    #[test]
    fn eigenvalue_reference_and_limits() {
        let basis = EigenBasis::new(30).unwrap();
        let p = params(1.0, 1.0);
        let (lo, hi) = matrix_eigenvalues(1, &p, &basis).unwrap();
        // companion matrix of the two-field operator
        let lam = basis.pair(1).lambda;
        let a = nalgebra::Matrix2::new(-(1.0 + p.mu) * lam, p.mu * lam, 1.0 / p.delta, -1.0 / p.delta);
        let mut ev: Vec<f64> = a.complex_eigenvalues().iter().map(|z| z.re).collect();
        ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert!((lo - ev[0]).abs() < 1e-9 * ev[0].abs());
        assert!((hi - ev[1]).abs() < 1e-9 * ev[1].abs());
        assert!((hi + 0.4998).abs() < 1e-3);
        assert!(matches!(matrix_eigenvalues(1, &params(1.0, 0.0), &basis), Err(TheoryError::NewtonianLimit)));
        let mut prev = f64::INFINITY;
        for k in 1..=30 {
            let (_, hi) = matrix_eigenvalues(k, &p, &basis).unwrap();
            let gap = (p.delta * hi + 1.0 / (1.0 + p.mu)).abs();
            assert!(gap < prev);
            prev = gap;
        }
        assert!(prev < 1e-4);
    }

    #[test]
    fn optimizer_rejects_single_mode() {
        let basis = EigenBasis::new(3).unwrap();
        assert!(matches!(
            optimize_forcing(1, &params(0.0, 1.0), &basis),
            Err(TheoryError::DegenerateBudget(1))
        ));
    }

    #[test]
    fn optimizer_matches_dense_eigen() {
        let basis = EigenBasis::new(12).unwrap();
        let p = params(1.0, 0.1);
        let opt = optimize_forcing(12, &p, &basis).unwrap();
        let table = SpeedTable::new(&p, &basis);
        let eig = table.m_quad.clone().symmetric_eigen();
        let top = eig.eigenvalues.max();
        assert!((opt.speed - top).abs() < 1e-10 * top.abs());
        assert!((opt.coeffs.norm() - 1.0).abs() < 1e-12);
        assert!((table.speed(&opt.coeffs).unwrap() - opt.speed).abs() < 1e-10 * top);
    }

    #[test]
    fn optimizer_beats_traveling_wave() {
        let basis = EigenBasis::new(12).unwrap();
        let p = params(0.0, 1.0);
        let opt = optimize_forcing(12, &p, &basis).unwrap();
        let tw = ForcingSpec::new(Profile::Sine { q: 2.0 * PI }, Profile::Cosine { q: 2.0 * PI })
            .build()
            .unwrap()
            .mode_coeffs(&basis);
        let unit = tw.scaled(1.0 / tw.norm());
        let u = avg_speed_newtonian(&unit, &p, &basis).unwrap();
        assert!(opt.speed >= u.abs());
    }

    #[test]
    fn csv_tables_have_rows() {
        let basis = EigenBasis::new(3).unwrap();
        let table = SpeedTable::new(&params(0.0, 1.0), &basis);
        let mut buf = Vec::new();
        table.write_csv(&basis, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2 + 9);
        let rows = speed_sweep(&ModeCoeffs::zeros(3), &params(0.0, 1.0), &basis, &[0.0, 1.0], &[1.0]).unwrap();
        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(FluidParams::new(1.0, -1.0, 1.0, 1.0).is_err());
        assert!(FluidParams::new(1.0, 1.0, 1.0, 0.0).is_err());
        assert!(FluidParams::new(f64::NAN, 1.0, 1.0, 1.0).is_err());
    }
}

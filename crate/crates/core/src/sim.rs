//! Finite-segment simulator in the tangent-angle formulation.
//!
//! The filament is `N` rigid segments of length `h = 1/N`; segment `i` has
//! angle `θ_i`, and the memory variable `ξ_i` lives at its midpoint. Each
//! right-hand side evaluation solves a dense `(N+1)`-system for
//! `(ẋ₀, ẏ₀, θ̇₁, …, θ̇_{N−1})`; `θ_N` follows from the free-end condition
//! and `ξ` from its relaxation equation.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forcing::{Forcing, GridSamples};
use crate::quadrature::GaussLegendre;
use crate::integrator::{IntegratorError, OdeSystem, RhsFailure, Stats, StepControl, TrBdf2};
use crate::theory::{FluidParams, TheoryError};

pub const MIN_SEGMENTS: usize = 8;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation parameter {field}: {reason}")]
    InvalidParams { field: &'static str, reason: String },
    #[error("state has {got} angles but the parameters ask for N = {want}")]
    SizeMismatch { got: usize, want: usize },
    #[error("velocity system is singular at t = {t:e}")]
    Singular { t: f64 },
    #[error(transparent)]
    Integrator(#[from] IntegratorError),
    #[error(transparent)]
    Fluid(#[from] TheoryError),
    #[error("cannot write trajectory: {0}")]
    Io(#[from] std::io::Error),
}

/// Right side of the first segment's force balance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryRowMode {
    /// One-sided bending term scaled by `(1 + μ)` plus `(1 + μ)(κ₀)_s`, the
    /// same structure as the interior rows.
    #[default]
    Consistent,
    /// One-sided bending term without the viscoelastic factor.
    Verbatim,
    /// Interior stencil at the first midpoint with a ghost angle that
    /// imposes `θ_s = κ₀` at `s = 0` to second order.
    Ghost,
}

/// Curvature stencil inside the memory equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurvatureStencil {
    /// `2N (θ_{j+1} − θ_{j−1})`.
    #[default]
    Verbatim,
    /// `(N/2)(θ_{j+1} − θ_{j−1})`, the centred difference across two
    /// segments.
    Central,
}

impl CurvatureStencil {
    fn factor(self, n: usize) -> f64 {
        match self {
            CurvatureStencil::Verbatim => 2.0 * n as f64,
            CurvatureStencil::Central => 0.5 * n as f64,
        }
    }
}

/// Physical and numerical parameters of one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimParams {
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default)]
    pub fluid: FluidParams,
    #[serde(default = "default_reltol")]
    pub reltol: f64,
    #[serde(default = "default_abstol")]
    pub abstol: f64,
    #[serde(default = "default_dt_init")]
    pub dt_init: f64,
    #[serde(default = "default_dt_max")]
    pub dt_max: f64,
    #[serde(default)]
    pub boundary_row_mode: BoundaryRowMode,
    #[serde(default)]
    pub curvature_stencil: CurvatureStencil,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
}

fn default_n() -> usize {
    100
}
fn default_reltol() -> f64 {
    1e-6
}
fn default_abstol() -> f64 {
    1e-8
}
fn default_dt_init() -> f64 {
    1e-6
}
fn default_dt_max() -> f64 {
    1e-2
}
fn default_t_end() -> f64 {
    2.0
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            n: default_n(),
            fluid: FluidParams::default(),
            reltol: default_reltol(),
            abstol: default_abstol(),
            dt_init: default_dt_init(),
            dt_max: default_dt_max(),
            boundary_row_mode: BoundaryRowMode::default(),
            curvature_stencil: CurvatureStencil::default(),
            t_end: default_t_end(),
        }
    }
}

impl SimParams {
    pub fn with_fluid(fluid: FluidParams) -> Self {
        Self {
            fluid,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |field: &'static str, reason: String| Err(SimError::InvalidParams { field, reason });
        if self.n < MIN_SEGMENTS {
            return bad("n", format!("{} < {MIN_SEGMENTS}", self.n));
        }
        for (field, v) in [("reltol", self.reltol), ("abstol", self.abstol), ("dt_init", self.dt_init), ("dt_max", self.dt_max)] {
            if !(v.is_finite() && v > 0.0) {
                return bad(field, format!("{v} must be positive"));
            }
        }
        if self.dt_init > self.dt_max {
            return bad("dt_init", format!("{} exceeds dt_max {}", self.dt_init, self.dt_max));
        }
        if !self.t_end.is_finite() {
            return bad("t_end", "must be finite".into());
        }
        self.fluid.validate()?;
        if self.fluid.mu > 0.0 && self.fluid.delta == 0.0 {
            return bad("fluid.delta", "must be positive when mu > 0".into());
        }
        Ok(())
    }

    pub fn step_control(&self) -> StepControl {
        StepControl {
            reltol: self.reltol,
            abstol: self.abstol,
            dt_init: self.dt_init,
            dt_max: self.dt_max,
            ..StepControl::default()
        }
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }
}

/// Discrete unknowns at one time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilamentState {
    pub t: f64,
    pub x0: f64,
    pub y0: f64,
    pub theta: Vec<f64>,
    pub xi: Vec<f64>,
}

impl FilamentState {
    /// Straight filament on `[0, 1]` along the x-axis.
    pub fn straight(n: usize) -> Self {
        Self {
            t: 0.0,
            x0: 0.0,
            y0: 0.0,
            theta: vec![0.0; n],
            xi: vec![0.0; n],
        }
    }

    /// Filament whose angles integrate the curvature `kappa` from `s = 0`,
    /// with memory `xi` sampled at the midpoints. The last angle is not
    /// constrained here; the integrators project it.
    pub fn from_curvature<K, X>(n: usize, kappa: K, xi: X) -> Self
    where
        K: Fn(f64) -> f64,
        X: Fn(f64) -> f64,
    {
        let rule = GaussLegendre::new(16);
        let grid = midpoint_grid(n);
        Self {
            t: 0.0,
            x0: 0.0,
            y0: 0.0,
            theta: grid.iter().map(|&s| s * rule.integrate(|u| kappa(s * u))).collect(),
            xi: grid.iter().map(|&s| xi(s)).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.theta.len()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut y = Vec::with_capacity(2 + 2 * self.n());
        y.push(self.x0);
        y.push(self.y0);
        y.extend_from_slice(&self.theta);
        y.extend_from_slice(&self.xi);
        y
    }

    pub fn from_slice(t: f64, y: &[f64]) -> Self {
        let n = (y.len() - 2) / 2;
        Self {
            t,
            x0: y[0],
            y0: y[1],
            theta: y[2..2 + n].to_vec(),
            xi: y[2 + n..].to_vec(),
        }
    }

    /// Node positions `X_0, …, X_N`.
    pub fn nodes(&self) -> Vec<[f64; 2]> {
        let h = 1.0 / self.n() as f64;
        let mut out = Vec::with_capacity(self.n() + 1);
        let (mut x, mut y) = (self.x0, self.y0);
        out.push([x, y]);
        for th in &self.theta {
            x += h * th.cos();
            y += h * th.sin();
            out.push([x, y]);
        }
        out
    }

    /// Segment midpoints `X_{i−1/2}`.
    pub fn midpoints(&self) -> Vec<[f64; 2]> {
        let nodes = self.nodes();
        nodes
            .windows(2)
            .map(|w| [0.5 * (w[0][0] + w[1][0]), 0.5 * (w[0][1] + w[1][1])])
            .collect()
    }
}

/// Midpoint arclengths `s_{i−1/2}`.
pub fn midpoint_grid(n: usize) -> Vec<f64> {
    (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect()
}

/// `θ_N` implied by the free-end condition.
pub fn theta_n_constraint(theta_nm1: f64, kappa0_n: f64, kappa0_s_n: f64, n: usize) -> f64 {
    let h = 1.0 / n as f64;
    theta_nm1 + h * kappa0_n - 0.5 * h * h * kappa0_s_n
}

/// `I − γ/(1+γ) e_t e_tᵀ`.
pub fn mobility_block(theta: f64, gamma: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    let g = gamma / (1.0 + gamma);
    Matrix2::new(1.0 - g * c * c, -g * c * s, -g * c * s, 1.0 - g * s * s)
}

/// Dense system for `(ẋ₀, ẏ₀, θ̇₁, …, θ̇_{N−1})`.
#[derive(Debug, Clone)]
pub struct VelocitySystem {
    pub a: DMatrix<f64>,
    pub rhs: DVector<f64>,
    /// `θ̇_N − θ̇_{N−1}`, fixed by the forcing.
    pub tail_rate: f64,
}

impl VelocitySystem {
    pub fn solve(&self) -> Option<DVector<f64>> {
        self.a.clone().lu().solve(&self.rhs)
    }
}

/// Forcing values on the midpoint grid at one time.
#[derive(Debug, Clone)]
struct ForcingSnapshot {
    k0: Vec<f64>,
    k0_s: Vec<f64>,
    k0_dot_n: f64,
    k0_s_dot_n: f64,
}

/// Precomputed, reusable evaluator of the discrete dynamics.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub params: SimParams,
    forcing: Forcing,
    samples: GridSamples,
    omega: f64,
    // workspace
    a: DMatrix<f64>,
    b: DVector<f64>,
    theta: Vec<f64>,
}

impl Simulator {
    pub fn new(params: SimParams, forcing: &Forcing) -> Result<Self, SimError> {
        params.validate()?;
        let n = params.n;
        let samples = forcing.sample(&midpoint_grid(n));
        Ok(Self {
            params,
            forcing: forcing.clone(),
            samples,
            omega: forcing.omega(),
            a: DMatrix::zeros(n + 1, n + 1),
            b: DVector::zeros(n + 1),
            theta: vec![0.0; n],
        })
    }

    pub fn forcing(&self) -> &Forcing {
        &self.forcing
    }

    pub fn n(&self) -> usize {
        self.params.n
    }

    pub fn state_dim(&self) -> usize {
        2 + 2 * self.params.n
    }

    fn snapshot(&self, t: f64) -> ForcingSnapshot {
        let (c, s) = self.forcing.phase(t);
        let g = &self.samples;
        let k0 = g.f1.iter().zip(&g.f2).map(|(a, b)| a * c + b * s).collect();
        let k0_s = g.f1_s.iter().zip(&g.f2_s).map(|(a, b)| a * c + b * s).collect();
        let last = self.params.n - 1;
        let w = self.omega;
        let k0_dot_n = w * (g.f2[last] * c - g.f1[last] * s);
        let k0_s_dot_n = w * (g.f2_s[last] * c - g.f1_s[last] * s);
        ForcingSnapshot {
            k0,
            k0_s,
            k0_dot_n,
            k0_s_dot_n,
        }
    }

    /// `κ₀` and `(κ₀)_s` at the midpoints.
    pub fn kappa0_on_grid(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        let snap = self.snapshot(t);
        (snap.k0, snap.k0_s)
    }

    /// `θ_N` consistent with `θ_{N−1}` at time `t`.
    pub fn constrained_theta_n(&self, t: f64, theta: &[f64]) -> f64 {
        let n = self.params.n;
        let snap = self.snapshot(t);
        theta_n_constraint(theta[n - 2], snap.k0[n - 1], snap.k0_s[n - 1], n)
    }

    /// Sets `θ_N` and pins `ξ₁ = ξ_N = 0`.
    pub fn project_state(&self, state: &mut FilamentState) {
        let n = self.params.n;
        state.theta[n - 1] = self.constrained_theta_n(state.t, &state.theta);
        state.xi[0] = 0.0;
        state.xi[n - 1] = 0.0;
    }

    pub fn assemble(&mut self, t: f64, theta_in: &[f64], xi: &[f64]) -> VelocitySystem {
        let snap = self.snapshot(t);
        self.assemble_with(&snap, theta_in, xi);
        let h = self.params.h();
        VelocitySystem {
            a: self.a.clone(),
            rhs: self.b.clone(),
            tail_rate: h * snap.k0_dot_n - 0.5 * h * h * snap.k0_s_dot_n,
        }
    }

    /// Fills `self.a`, `self.b` and `self.theta` (θ with the constrained
    /// last angle).
    fn assemble_with(&mut self, snap: &ForcingSnapshot, theta_in: &[f64], xi: &[f64]) {
        let p = self.params;
        let n = p.n;
        let nf = n as f64;
        let h = 1.0 / nf;
        let mu = p.fluid.mu;
        let gamma = p.fluid.gamma;

        self.theta.copy_from_slice(theta_in);
        self.theta[n - 1] = theta_n_constraint(theta_in[n - 2], snap.k0[n - 1], snap.k0_s[n - 1], n);
        let theta = &self.theta;

        let normals: Vec<Vector2<f64>> = theta.iter().map(|t| Vector2::new(-t.sin(), t.cos())).collect();
        let mob: Vec<Matrix2<f64>> = theta.iter().map(|&t| mobility_block(t, gamma)).collect();
        // prefix sums of mobility blocks, prefix[i] = Σ_{m < i} M_m (0-based)
        let mut prefix = Vec::with_capacity(n + 1);
        prefix.push(Matrix2::zeros());
        for m in &mob {
            let last = *prefix.last().unwrap();
            prefix.push(last + m);
        }
        let tail_rate = h * snap.k0_dot_n - 0.5 * h * h * snap.k0_s_dot_n;

        self.a.fill(0.0);
        self.b.fill(0.0);

        // force-balance rows j = 0..n-2 (segments 1..N-1)
        for j in 0..n - 1 {
            let nj = normals[j];
            let s_j = prefix[j + 1];
            let row_xy = (nj.transpose() * s_j) * h;
            self.a[(j, 0)] = row_xy[0];
            self.a[(j, 1)] = row_xy[1];
            for k in 0..j {
                let w = (mob[k] * (0.5 * h) + (s_j - prefix[k + 1]) * h) * normals[k];
                self.a[(j, 2 + k)] = h * nj.dot(&w);
            }
            self.a[(j, 2 + j)] = h * nj.dot(&(mob[j] * normals[j])) * 0.5 * h;

            let n2 = nf * nf;
            self.b[j] = if j == 0 {
                let one_sided = -n2 * (2.0 * theta[1] - 2.0 * theta[0]) + 2.0 * nf * snap.k0[0];
                match p.boundary_row_mode {
                    BoundaryRowMode::Verbatim => one_sided,
                    BoundaryRowMode::Consistent => (1.0 + mu) * (one_sided + snap.k0_s[0]),
                    BoundaryRowMode::Ghost => {
                        (1.0 + mu)
                            * (-n2 * (theta[1] - theta[0]) + nf * snap.k0[0] + 0.5 * snap.k0_s[0])
                    }
                }
            } else {
                -(1.0 + mu) * n2 * (theta[j - 1] - 2.0 * theta[j] + theta[j + 1])
                    + (1.0 + mu) * snap.k0_s[j]
                    + mu * 0.5 * nf * (xi[j + 1] - xi[j - 1])
            };
        }

        // total force over the whole filament, with θ̇_N = θ̇_{N−1} + tail_rate
        let total = prefix[n];
        let last = n - 1;
        let tail = mob[last] * normals[last] * (0.5 * h);
        for r in 0..2 {
            let row = n - 1 + r;
            self.a[(row, 0)] = h * total[(r, 0)];
            self.a[(row, 1)] = h * total[(r, 1)];
            for k in 0..n - 1 {
                let mut w = (mob[k] * (0.5 * h) + (total - prefix[k + 1]) * h) * normals[k];
                if k == n - 2 {
                    w += tail;
                }
                self.a[(row, 2 + k)] = h * w[r];
            }
            self.b[row] = -h * tail[r] * tail_rate;
        }
    }

    /// Time derivative of the flat state `y`.
    pub fn derivative(&mut self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<(), SimError> {
        let n = self.params.n;
        let (theta_in, xi) = y[2..].split_at(n);
        let snap = self.snapshot(t);
        self.assemble_with(&snap, theta_in, xi);
        let lu = self.a.clone().lu();
        let v = lu.solve(&self.b).ok_or(SimError::Singular { t })?;
        let h = self.params.h();
        let tail_rate = h * snap.k0_dot_n - 0.5 * h * h * snap.k0_s_dot_n;
        dy[0] = v[0];
        dy[1] = v[1];
        for k in 0..n - 1 {
            dy[2 + k] = v[2 + k];
        }
        dy[2 + n - 1] = v[n] + tail_rate;
        self.memory_rate(&snap, xi, &mut dy[2 + n..]);
        Ok(())
    }

    fn memory_rate(&self, snap: &ForcingSnapshot, xi: &[f64], out: &mut [f64]) {
        let n = self.params.n;
        out.fill(0.0);
        let fl = self.params.fluid;
        // with μ = 0 the memory never feeds back; keep it frozen so runs do
        // not depend on δ or on the initial ξ
        if fl.mu == 0.0 {
            return;
        }
        let c = self.params.curvature_stencil.factor(n);
        let theta = &self.theta;
        for j in 1..n - 1 {
            let kappa = c * (theta[j + 1] - theta[j - 1]);
            out[j] = (-xi[j] + kappa - snap.k0[j]) / fl.delta;
        }
    }

    /// Solved velocities for a state.
    pub fn velocities(&mut self, state: &FilamentState) -> Result<DVector<f64>, SimError> {
        let sys = self.assemble(state.t, &state.theta, &state.xi);
        sys.solve().ok_or(SimError::Singular { t: state.t })
    }

    pub fn state_derivative(&mut self, state: &FilamentState) -> Result<Vec<f64>, SimError> {
        let y = state.to_vec();
        let mut dy = vec![0.0; y.len()];
        self.derivative(state.t, &y, &mut dy)?;
        Ok(dy)
    }

    /// Centre-of-mass velocity at a state.
    pub fn com_velocity(&mut self, state: &FilamentState) -> Result<[f64; 2], SimError> {
        let dy = self.state_derivative(state)?;
        Ok(com_velocity_from(state, &dy))
    }
}

/// `(1/N) Σ Ẋ_{i−1/2}` from a state and its time derivative.
pub fn com_velocity_from(state: &FilamentState, dy: &[f64]) -> [f64; 2] {
    let n = state.n();
    let h = 1.0 / n as f64;
    let mut vx = 0.0;
    let mut vy = 0.0;
    // Ẋ_{i−1/2} = Ẋ₀ + h Σ_{k<i} n_k θ̇_k + (h/2) n_i θ̇_i; average over i
    for k in 0..n {
        let weight = h * ((n - 1 - k) as f64 + 0.5) / n as f64;
        let rate = dy[2 + k];
        vx += -state.theta[k].sin() * rate * weight;
        vy += state.theta[k].cos() * rate * weight;
    }
    [dy[0] + vx, dy[1] + vy]
}

impl OdeSystem for Simulator {
    fn dim(&self) -> usize {
        self.state_dim()
    }

    fn rhs(&mut self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<(), RhsFailure> {
        self.derivative(t, y, dy).map_err(|e| RhsFailure(e.to_string()))
    }

    fn inert_columns(&self) -> Vec<usize> {
        let n = self.params.n;
        let mut cols = vec![0, 1, 2 + n - 1, 2 + n, 2 + 2 * n - 1];
        if self.params.fluid.mu == 0.0 {
            cols.extend(2 + n + 1..2 + 2 * n - 1);
        }
        cols
    }

    fn jacobian(
        &mut self,
        t: f64,
        y: &[f64],
        _f: &[f64],
        jac: &mut DMatrix<f64>,
    ) -> Result<usize, RhsFailure> {
        let n = self.params.n;
        let fl = self.params.fluid;
        jac.fill(0.0);
        let (theta_in, xi) = y[2..].split_at(n);
        let snap = self.snapshot(t);
        // velocities at the base state
        self.assemble_with(&snap, theta_in, xi);
        let lu = self.a.clone().lu();
        let v = lu
            .solve(&self.b)
            .ok_or_else(|| RhsFailure(SimError::Singular { t }.to_string()))?;
        // ∂v/∂θ_k = −A⁻¹ ∂(A v − b)/∂θ_k with v frozen; differencing the
        // residual avoids differencing through the ill-conditioned solve
        let mut dr = DMatrix::zeros(n + 1, 2 * n - 2);
        let mut theta = theta_in.to_vec();
        for k in 0..n - 1 {
            let step = 1e-6 * theta_in[k].abs().max(1.0);
            let column = |sign: f64, sim: &mut Self, theta: &mut Vec<f64>| {
                theta[k] = theta_in[k] + sign * step;
                sim.assemble_with(&snap, theta, xi);
                &sim.a * &v - &sim.b
            };
            let plus = column(1.0, self, &mut theta);
            let minus = column(-1.0, self, &mut theta);
            theta[k] = theta_in[k];
            dr.set_column(k, &((plus - minus) / (-2.0 * step)));
        }
        // memory enters linearly through the interior right sides
        let coef = fl.mu * 0.5 * n as f64;
        for m in 1..n - 1 {
            let col = n - 2 + m;
            if m >= 2 {
                dr[(m - 1, col)] = coef;
            }
            if m + 2 < n {
                dr[(m + 1, col)] = -coef;
            }
        }
        let dv = lu
            .solve(&dr)
            .ok_or_else(|| RhsFailure(SimError::Singular { t }.to_string()))?;
        let ncols = if fl.mu == 0.0 { n - 1 } else { 2 * n - 2 };
        for c in 0..ncols {
            let col = if c < n - 1 { 2 + c } else { 2 + n + (c - (n - 2)) };
            jac[(0, col)] = dv[(0, c)];
            jac[(1, col)] = dv[(1, c)];
            for k in 0..n - 1 {
                jac[(2 + k, col)] = dv[(2 + k, c)];
            }
            jac[(2 + n - 1, col)] = dv[(n, c)];
        }
        if fl.mu != 0.0 {
            let c = self.params.curvature_stencil.factor(n) / fl.delta;
            for j in 1..n - 1 {
                let row = 2 + n + j;
                jac[(row, row)] = -1.0 / fl.delta;
                // θ_N follows θ_{N−1}
                jac[(row, 2 + (j + 1).min(n - 2))] += c;
                jac[(row, 2 + j - 1)] -= c;
            }
        }
        Ok(0)
    }

    fn project(&mut self, t: f64, y: &mut [f64]) {
        let n = self.params.n;
        let snap = self.snapshot(t);
        y[2 + n - 1] = theta_n_constraint(y[2 + n - 2], snap.k0[n - 1], snap.k0_s[n - 1], n);
        y[2 + n] = 0.0;
        y[2 + 2 * n - 1] = 0.0;
    }
}

/// Sampled states of one run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub samples: Vec<FilamentState>,
    pub stats: Stats,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn last(&self) -> &FilamentState {
        self.samples.last().expect("trajectory holds the initial state")
    }

    /// CSV with columns `t, x0, y0, theta_1..theta_N, xi_1..xi_N`.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<(), SimError> {
        let n = self.samples.first().map_or(0, FilamentState::n);
        let mut header = vec!["t".to_string(), "x0".into(), "y0".into()];
        header.extend((1..=n).map(|i| format!("theta_{i}")));
        header.extend((1..=n).map(|i| format!("xi_{i}")));
        writeln!(out, "{}", header.join(","))?;
        for s in &self.samples {
            let mut row = vec![s.t, s.x0, s.y0];
            row.extend(&s.theta);
            row.extend(&s.xi);
            let text: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "{}", text.join(","))?;
        }
        Ok(())
    }

    /// Node positions of selected samples: `t, i, x, y` per row.
    pub fn write_nodes_csv<W: std::io::Write>(&self, indices: &[usize], mut out: W) -> Result<(), SimError> {
        writeln!(out, "t,i,x,y")?;
        for &idx in indices {
            let s = &self.samples[idx];
            for (i, [x, y]) in s.nodes().iter().enumerate() {
                writeln!(out, "{:e},{i},{x:e},{y:e}", s.t)?;
            }
        }
        Ok(())
    }
}

/// Evenly spaced sample times in `(t0, t_end]`, always ending at `t_end`.
pub fn sample_times(t0: f64, t_end: f64, interval: f64) -> Vec<f64> {
    let count = ((t_end - t0) / interval - 1e-9).ceil().max(1.0) as usize;
    (1..=count)
        .map(|i| if i == count { t_end } else { t0 + i as f64 * interval })
        .collect()
}

/// Integrates from `state`, recording it and every time in `stops`.
/// `on_step` sees every accepted step.
pub fn integrate_with<F: FnMut(f64, &[f64])>(
    sim: &mut Simulator,
    state: &FilamentState,
    stops: &[f64],
    on_step: F,
) -> Result<Trajectory, SimError> {
    let n = sim.n();
    if state.n() != n || state.xi.len() != n {
        return Err(SimError::SizeMismatch { got: state.n(), want: n });
    }
    let mut start = state.clone();
    sim.project_state(&mut start);
    let mut y = start.to_vec();
    let mut samples = vec![start.clone()];
    let mut solver = TrBdf2::new(sim.params.step_control());
    if !stops.is_empty() {
        solver.advance(sim, start.t, &mut y, stops, on_step, |_, t, y| {
            samples.push(FilamentState::from_slice(t, y));
        })?;
    }
    Ok(Trajectory {
        samples,
        stats: solver.stats,
    })
}

/// Integrates to `t_end` sampling every `interval`.
pub fn integrate(
    sim: &mut Simulator,
    state: &FilamentState,
    t_end: f64,
    interval: f64,
) -> Result<Trajectory, SimError> {
    if !(t_end > state.t) {
        return Err(SimError::Integrator(IntegratorError::BadInterval { t0: state.t, t1: t_end }));
    }
    let stops = sample_times(state.t, t_end, interval);
    integrate_with(sim, state, &stops, |_, _| {})
}

/// Residuals of every discrete equation for given velocities, evaluated
/// segment by segment without the prefix-sum assembly. Ordering matches
/// the system rows.
pub fn discrete_equation_residuals(
    sim: &Simulator,
    state: &FilamentState,
    v: &DVector<f64>,
) -> Vec<f64> {
    let p = sim.params;
    let n = p.n;
    let nf = n as f64;
    let h = 1.0 / nf;
    let mu = p.fluid.mu;
    let (k0, k0s) = sim.kappa0_on_grid(state.t);
    let mut theta = state.theta.clone();
    theta[n - 1] = sim.constrained_theta_n(state.t, &state.theta);
    let dt = 1e-7;
    let tail_rate = (sim.constrained_theta_n(state.t + dt, &theta) - sim.constrained_theta_n(state.t - dt, &theta)) / (2.0 * dt);
    let mut rates: Vec<f64> = (0..n - 1).map(|k| v[2 + k]).collect();
    rates.push(v[n] + tail_rate);
    let normal = |k: usize| Vector2::new(-theta[k].sin(), theta[k].cos());
    let xdot: Vec<Vector2<f64>> = (0..n)
        .map(|i| {
            let mut x = Vector2::new(v[0], v[1]);
            for k in 0..i {
                x += normal(k) * (h * rates[k]);
            }
            x + normal(i) * (0.5 * h * rates[i])
        })
        .collect();
    let force = |i: usize| mobility_block(theta[i], p.fluid.gamma) * xdot[i];
    let mut out = Vec::with_capacity(n + 1);
    for j in 0..n - 1 {
        let lhs: Vector2<f64> = (0..=j).map(force).sum();
        let lhs = h * normal(j).dot(&lhs);
        let rhs = if j == 0 {
            let one_sided = -nf * nf * (2.0 * theta[1] - 2.0 * theta[0]) + 2.0 * nf * k0[0];
            match p.boundary_row_mode {
                BoundaryRowMode::Verbatim => one_sided,
                BoundaryRowMode::Consistent => (1.0 + mu) * (one_sided + k0s[0]),
                BoundaryRowMode::Ghost => {
                    let ghost = theta[0] - h * (k0[0] - 0.5 * h * k0s[0]);
                    -(1.0 + mu) * nf * nf * (ghost - 2.0 * theta[0] + theta[1]) + (1.0 + mu) * k0s[0]
                }
            }
        } else {
            -(1.0 + mu) * nf * nf * (theta[j - 1] - 2.0 * theta[j] + theta[j + 1])
                + (1.0 + mu) * k0s[j]
                + mu * nf / 2.0 * (state.xi[j + 1] - state.xi[j - 1])
        };
        out.push(lhs - rhs);
    }
    let total: Vector2<f64> = (0..n).map(force).sum::<Vector2<f64>>() * h;
    out.push(total[0]);
    out.push(total[1]);
    out
}

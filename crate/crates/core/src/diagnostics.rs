//! Observables measured from simulated states and trajectories.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::EigenBasis;
use crate::forcing::Forcing;
use crate::sim::{
    integrate_with, midpoint_grid, sample_times, FilamentState, SimError, SimParams, Simulator,
    Trajectory,
};

#[derive(Debug, Error)]
pub enum DiagError {
    #[error("time {t} outside the trajectory span [{start}, {end}]")]
    OutOfRange { t: f64, start: f64, end: f64 },
    #[error("trajectory spans {span} but {needed} is required")]
    InsufficientSpan { span: f64, needed: f64 },
    #[error("signal does not decay (fitted rate {rate:e})")]
    NotDecaying { rate: f64 },
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("observable {name}: time {t} does not increase")]
    NonIncreasing { name: String, t: f64 },
    #[error("delta values must be positive and decreasing")]
    BadDeltas,
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("cannot write output: {0}")]
    Io(#[from] std::io::Error),
}

/// Named time series of scalar or vector values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observable {
    pub name: String,
    pub samples: Vec<(f64, Vec<f64>)>,
}

impl Observable {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            samples: Vec::new(),
        }
    }

    pub fn push(&mut self, t: f64, value: Vec<f64>) -> Result<(), DiagError> {
        if let Some(&(last, _)) = self.samples.last() {
            if !(t > last) {
                return Err(DiagError::NonIncreasing {
                    name: self.name.clone(),
                    t,
                });
            }
        }
        self.samples.push((t, value));
        Ok(())
    }

    pub fn push_scalar(&mut self, t: f64, value: f64) -> Result<(), DiagError> {
        self.push(t, vec![value])
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.0).collect()
    }

    /// First component of every sample.
    pub fn values(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.1[0]).collect()
    }
}

/// Tidy CSV: `run_id,name,t,value`; vector components are named `name[i]`.
pub fn write_observables_csv<W: std::io::Write>(
    run_id: &str,
    observables: &[Observable],
    mut out: W,
) -> Result<(), DiagError> {
    writeln!(out, "run_id,name,t,value")?;
    for obs in observables {
        for (t, value) in &obs.samples {
            if value.len() == 1 {
                writeln!(out, "{run_id},{},{t:e},{:e}", obs.name, value[0])?;
            } else {
                for (i, v) in value.iter().enumerate() {
                    writeln!(out, "{run_id},{}[{i}],{t:e},{v:e}", obs.name)?;
                }
            }
        }
    }
    Ok(())
}

/// `(1/N) Σ X_{i−1/2}`.
pub fn center_of_mass(state: &FilamentState) -> [f64; 2] {
    let mid = state.midpoints();
    let n = mid.len() as f64;
    let (x, y) = mid.iter().fold((0.0, 0.0), |(x, y), p| (x + p[0], y + p[1]));
    [x / n, y / n]
}

fn check_span(traj: &Trajectory, t: f64) -> Result<(), DiagError> {
    let start = traj.samples[0].t;
    let end = traj.last().t;
    if t < start || t > end {
        return Err(DiagError::OutOfRange { t, start, end });
    }
    Ok(())
}

/// Index `i` with `t_i ≤ t ≤ t_{i+1}` and the weight of `t_{i+1}`.
fn bracket(traj: &Trajectory, t: f64) -> (usize, f64) {
    let s = &traj.samples;
    if s.len() == 1 {
        return (0, 0.0);
    }
    let i = s.partition_point(|x| x.t <= t).clamp(1, s.len() - 1) - 1;
    let span = s[i + 1].t - s[i].t;
    (i, ((t - s[i].t) / span).clamp(0.0, 1.0))
}

/// Centre of mass at `t`, linear between samples.
pub fn center_of_mass_at(traj: &Trajectory, t: f64) -> Result<[f64; 2], DiagError> {
    check_span(traj, t)?;
    let (i, w) = bracket(traj, t);
    let a = center_of_mass(&traj.samples[i]);
    if w == 0.0 {
        return Ok(a);
    }
    let b = center_of_mass(&traj.samples[i + 1]);
    Ok([a[0] + w * (b[0] - a[0]), a[1] + w * (b[1] - a[1])])
}

pub fn displacement(traj: &Trajectory, t1: f64, t2: f64) -> Result<[f64; 2], DiagError> {
    let a = center_of_mass_at(traj, t1)?;
    let b = center_of_mass_at(traj, t2)?;
    Ok([b[0] - a[0], b[1] - a[1]])
}

/// Centred differences inside, second-order one-sided at both ends.
pub fn derivative(u: &[f64], h: f64) -> Vec<f64> {
    let n = u.len();
    let mut d = vec![0.0; n];
    if n < 3 {
        return d;
    }
    for j in 1..n - 1 {
        d[j] = (u[j + 1] - u[j - 1]) / (2.0 * h);
    }
    d[0] = (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * h);
    d[n - 1] = (3.0 * u[n - 1] - 4.0 * u[n - 2] + u[n - 3]) / (2.0 * h);
    d
}

/// Three-point second differences inside, second-order one-sided at ends.
pub fn second_derivative(u: &[f64], h: f64) -> Vec<f64> {
    let n = u.len();
    let mut d = vec![0.0; n];
    if n < 4 {
        return d;
    }
    let h2 = h * h;
    for j in 1..n - 1 {
        d[j] = (u[j - 1] - 2.0 * u[j] + u[j + 1]) / h2;
    }
    d[0] = (2.0 * u[0] - 5.0 * u[1] + 4.0 * u[2] - u[3]) / h2;
    d[n - 1] = (2.0 * u[n - 1] - 5.0 * u[n - 2] + 4.0 * u[n - 3] - u[n - 4]) / h2;
    d
}

/// `κ̄ = θ_s − κ₀` at the midpoints, zero at the first and last.
pub fn kappa_bar(sim: &Simulator, state: &FilamentState) -> Vec<f64> {
    let n = state.n();
    let (k0, _) = sim.kappa0_on_grid(state.t);
    let mut theta = state.theta.clone();
    theta[n - 1] = sim.constrained_theta_n(state.t, &state.theta);
    let half = 0.5 * n as f64;
    let mut kb = vec![0.0; n];
    for j in 1..n - 1 {
        kb[j] = half * (theta[j + 1] - theta[j - 1]) - k0[j];
    }
    kb
}

/// Instantaneous swimming speed from the curvature and memory fields.
pub fn speed_formula(sim: &Simulator, state: &FilamentState) -> f64 {
    let newtonian = speed_newtonian(sim, state);
    let fl = sim.params.fluid;
    if fl.mu == 0.0 {
        return newtonian;
    }
    let n = state.n();
    let h = 1.0 / n as f64;
    let kb = kappa_bar(sim, state);
    let (_, k0s) = sim.kappa0_on_grid(state.t);
    let kb_s = derivative(&kb, h);
    let memory: f64 = (0..n)
        .map(|j| (kb[j] - state.xi[j]) * (kb_s[j] + k0s[j]))
        .sum::<f64>()
        * h;
    newtonian - fl.gamma * fl.mu * memory
}

/// `−γ ∫ (κ₀)_s κ̄ ds`.
pub fn speed_newtonian(sim: &Simulator, state: &FilamentState) -> f64 {
    let h = 1.0 / state.n() as f64;
    let kb = kappa_bar(sim, state);
    let (_, k0s) = sim.kappa0_on_grid(state.t);
    -sim.params.fluid.gamma * kb.iter().zip(&k0s).map(|(a, b)| a * b).sum::<f64>() * h
}

/// `½ ∫ κ² + μ (κ − ξ)² ds`, with `κ = κ̄ + κ₀`.
pub fn energy(sim: &Simulator, state: &FilamentState) -> f64 {
    let n = state.n();
    let mu = sim.params.fluid.mu;
    let kb = kappa_bar(sim, state);
    let (k0, _) = sim.kappa0_on_grid(state.t);
    let sum: f64 = (0..n)
        .map(|j| {
            let k = kb[j] + k0[j];
            k * k + mu * (k - state.xi[j]).powi(2)
        })
        .sum();
    0.5 * sum / n as f64
}

/// Amplitude of eigenmode `k` in `κ̄` by the midpoint rule.
pub fn mode_amplitude(sim: &Simulator, state: &FilamentState, basis: &EigenBasis, k: usize) -> f64 {
    let n = state.n();
    let pair = basis.pair(k);
    let kb = kappa_bar(sim, state);
    midpoint_grid(n)
        .iter()
        .zip(&kb)
        .map(|(&s, v)| v * pair.psi(s))
        .sum::<f64>()
        / n as f64
}

/// `τ̄` on the nodes `s_i = i/N`.
#[derive(Debug, Clone, PartialEq)]
pub struct TensionProfile {
    pub s: Vec<f64>,
    pub tau_bar: Vec<f64>,
}

/// Solves `c u'' − q u = f` on a uniform grid with `u = 0` at both ends.
/// `q` and `f` hold values on all nodes; the end values are ignored.
pub fn solve_dirichlet(c: f64, q: &[f64], f: &[f64], h: f64) -> Vec<f64> {
    let n = q.len();
    let mut u = vec![0.0; n];
    if n < 3 {
        return u;
    }
    let m = n - 2;
    let off = c / (h * h);
    // Thomas algorithm; the matrix is diagonally dominant since q ≥ 0
    let mut diag: Vec<f64> = (1..n - 1).map(|i| -2.0 * off - q[i]).collect();
    let mut rhs: Vec<f64> = (1..n - 1).map(|i| f[i]).collect();
    for i in 1..m {
        let w = off / diag[i - 1];
        diag[i] -= w * off;
        rhs[i] -= w * rhs[i - 1];
    }
    u[m] = rhs[m - 1] / diag[m - 1];
    for i in (0..m - 1).rev() {
        u[i + 1] = (rhs[i] - off * u[i + 2]) / diag[i];
    }
    u
}

/// Fields interpolated to the nodes: `κ̄`, `κ₀`, `ξ`.
fn node_fields(sim: &Simulator, state: &FilamentState) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = state.n();
    let kb_mid = kappa_bar(sim, state);
    let to_nodes = |mid: &[f64]| {
        let mut out = vec![0.0; n + 1];
        for i in 1..n {
            out[i] = 0.5 * (mid[i - 1] + mid[i]);
        }
        out
    };
    let forcing = sim.forcing();
    let k0: Vec<f64> = (0..=n)
        .map(|i| forcing.kappa0(i as f64 / n as f64, state.t))
        .collect();
    (to_nodes(&kb_mid), k0, to_nodes(&state.xi))
}

/// Tension `τ̄` from the elliptic problem with homogeneous ends.
pub fn solve_tension(sim: &Simulator, state: &FilamentState) -> TensionProfile {
    let n = state.n();
    let h = 1.0 / n as f64;
    let fl = sim.params.fluid;
    let (g, mu) = (fl.gamma, fl.mu);
    let (kb, k0, xi) = node_fields(sim, state);
    let total: Vec<f64> = kb.iter().zip(&k0).map(|(a, b)| a + b).collect();
    let kb_s = derivative(&kb, h);
    let total_s = derivative(&total, h);
    let excess: Vec<f64> = kb.iter().zip(&k0).map(|(a, b)| a * (a + 2.0 * b)).collect();
    let excess_ss = second_derivative(&excess, h);
    let flux: Vec<f64> = kb_s.iter().zip(&total).map(|(a, b)| a * b).collect();
    let flux_s = derivative(&flux, h);
    let mut f: Vec<f64> = (0..=n)
        .map(|i| {
            kb[i] * total[i].powi(2) * (kb[i] + 2.0 * k0[i]) + total_s[i] * kb_s[i]
                - (1.0 + g) * excess_ss[i]
                - (2.0 + g) * flux_s[i]
        })
        .collect();
    if mu != 0.0 {
        let xi_s = derivative(&xi, h);
        let coupled: Vec<f64> = total.iter().zip(&xi_s).map(|(a, b)| a * b).collect();
        let coupled_s = derivative(&coupled, h);
        let w = mu / (1.0 + mu);
        for i in 0..=n {
            f[i] += w * ((2.0 + g) * coupled_s[i] - total_s[i] * xi_s[i]);
        }
    }
    let q: Vec<f64> = total.iter().map(|k| k * k).collect();
    TensionProfile {
        s: (0..=n).map(|i| i as f64 * h).collect(),
        tau_bar: solve_dirichlet(1.0 + g, &q, &f, h),
    }
}

/// Total velocity assembled from the curvature, memory and tension
/// fields, against the simulator's centre-of-mass velocity. The
/// tangential stress is `(1 + μ)(τ̄ + κ̄(κ̄ + 2κ₀))`, the combination for
/// which the tension problem keeps the velocity inextensible.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconstructionCheck {
    pub reconstructed: [f64; 2],
    pub simulated: [f64; 2],
    pub relative: f64,
}

pub fn velocity_reconstruction_check(
    sim: &mut Simulator,
    state: &FilamentState,
) -> Result<ReconstructionCheck, DiagError> {
    let n = state.n();
    let h = 1.0 / n as f64;
    let fl = sim.params.fluid;
    let (g, mu) = (fl.gamma, fl.mu);
    let tension = solve_tension(sim, state);
    let (kb, k0, xi) = node_fields(sim, state);
    let tau = &tension.tau_bar;
    let total: Vec<f64> = kb.iter().zip(&k0).map(|(a, b)| a + b).collect();
    let excess: Vec<f64> = kb.iter().zip(&k0).map(|(a, b)| a * (a + 2.0 * b)).collect();
    let (kb_s, kb_ss) = (derivative(&kb, h), second_derivative(&kb, h));
    let (xi_s, xi_ss) = (derivative(&xi, h), second_derivative(&xi, h));
    let (tau_s, excess_s) = (derivative(tau, h), derivative(&excess, h));
    let mut theta = state.theta.clone();
    theta[n - 1] = sim.constrained_theta_n(state.t, &state.theta);
    let mut v = [0.0; 2];
    for i in 0..=n {
        let angle = match i {
            0 => theta[0],
            _ if i == n => theta[n - 1],
            _ => 0.5 * (theta[i - 1] + theta[i]),
        };
        let normal = -(1.0 + mu) * kb_ss[i]
            + mu * xi_ss[i]
            + (1.0 + mu) * total[i] * (tau[i] + excess[i]);
        let tangential = (1.0 + g)
            * (total[i] * ((1.0 + mu) * kb_s[i] - mu * xi_s[i])
                + (1.0 + mu) * (tau_s[i] + excess_s[i]));
        let (sn, cs) = angle.sin_cos();
        let w = if i == 0 || i == n { 0.5 * h } else { h };
        v[0] += w * (normal * -sn + tangential * cs);
        v[1] += w * (normal * cs + tangential * sn);
    }
    let simulated = sim.com_velocity(state)?;
    let diff = ((v[0] - simulated[0]).powi(2) + (v[1] - simulated[1]).powi(2)).sqrt();
    let scale = (simulated[0].powi(2) + simulated[1].powi(2)).sqrt();
    Ok(ReconstructionCheck {
        reconstructed: v,
        simulated,
        relative: if scale == 0.0 { diff } else { diff / scale },
    })
}

/// Interpolated shape variables `(θ, ξ)` at time `t`.
fn shape_at(traj: &Trajectory, t: f64) -> Vec<f64> {
    let (i, w) = bracket(traj, t);
    let a = &traj.samples[i];
    let shape = |s: &FilamentState| -> Vec<f64> { s.theta.iter().chain(&s.xi).copied().collect() };
    let mut out = shape(a);
    if w > 0.0 {
        let b = shape(&traj.samples[i + 1]);
        for (o, bv) in out.iter_mut().zip(b) {
            *o += w * (bv - *o);
        }
    }
    out
}

/// `max |(θ, ξ)(t + T) − (θ, ξ)(t)|` at every sample with `t + T` inside
/// the trajectory.
pub fn periodicity_residual(traj: &Trajectory, period: f64) -> Result<Observable, DiagError> {
    let start = traj.samples[0].t;
    let end = traj.last().t;
    if end - start < 2.0 * period {
        return Err(DiagError::InsufficientSpan {
            span: end - start,
            needed: 2.0 * period,
        });
    }
    let mut obs = Observable::new("periodicity_residual");
    let tol = 1e-9 * period;
    for s in &traj.samples {
        if s.t + period > end + tol {
            break;
        }
        let later = shape_at(traj, (s.t + period).min(end));
        let now = s.theta.iter().chain(&s.xi);
        let r = now.zip(&later).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        obs.push_scalar(s.t, r)?;
    }
    Ok(obs)
}

/// `‖u‖² = Σ uᵢ²/N + Σ N (u_{i+1} − uᵢ)²`.
pub fn discrete_h1_norm(u: &[f64]) -> f64 {
    let n = u.len() as f64;
    let l2: f64 = u.iter().map(|v| v * v).sum::<f64>() / n;
    let semi: f64 = u.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>() * n;
    (l2 + semi).sqrt()
}

/// `κ̄ − ξ` in the discrete H¹ norm.
pub fn memory_lag_norm(sim: &Simulator, state: &FilamentState) -> f64 {
    let kb = kappa_bar(sim, state);
    let lag: Vec<f64> = kb.iter().zip(&state.xi).map(|(a, b)| a - b).collect();
    discrete_h1_norm(&lag)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub delta: f64,
    /// Largest `‖κ̄ − ξ‖_{H¹}` over one period of the periodic regime.
    pub lag_norm: f64,
    /// x-displacement over that period.
    pub period_dx: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaStudy {
    pub rows: Vec<DeltaRow>,
    /// Set when the study does not apply.
    pub notice: Option<String>,
    /// Per-period x-displacement of the matching Newtonian run.
    pub newtonian_dx: Option<f64>,
}

impl DeltaStudy {
    /// `value(δ_{i+1}) / value(δ_i)`.
    pub fn ratios(&self) -> Vec<f64> {
        self.rows.windows(2).map(|w| w[1].lag_norm / w[0].lag_norm).collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<(), DiagError> {
        if let Some(n) = &self.notice {
            writeln!(out, "# {n}")?;
        }
        if let Some(dx) = self.newtonian_dx {
            writeln!(out, "# newtonian_period_dx={dx:e}")?;
        }
        writeln!(out, "delta,lag_norm,period_dx")?;
        for r in &self.rows {
            writeln!(out, "{:e},{:e},{:e}", r.delta, r.lag_norm, r.period_dx)?;
        }
        Ok(())
    }
}

/// Time after which runs from a straight start are treated as periodic.
pub const BURN_IN: f64 = 1.0;
const SAMPLES_PER_PERIOD: usize = 64;

/// Runs one period after the burn-in and returns the lag and displacement.
fn periodic_window(
    params: SimParams,
    forcing: &Forcing,
) -> Result<(f64, f64), DiagError> {
    let mut sim = Simulator::new(params, forcing)?;
    let period = forcing.period();
    let mut stops = vec![BURN_IN];
    stops.extend(sample_times(BURN_IN, BURN_IN + period, period / SAMPLES_PER_PERIOD as f64));
    let start = FilamentState::straight(params.n);
    let traj = integrate_with(&mut sim, &start, &stops, |_, _| {})?;
    let lag = traj.samples[1..]
        .iter()
        .map(|s| memory_lag_norm(&sim, s))
        .fold(0.0, f64::max);
    let dx = displacement(&traj, BURN_IN, BURN_IN + period)?[0];
    Ok((lag, dx))
}

/// Shrinks δ and records how fast the memory lag vanishes.
pub fn delta_scaling_study(
    forcing: &Forcing,
    base: SimParams,
    deltas: &[f64],
) -> Result<DeltaStudy, DiagError> {
    if base.fluid.mu == 0.0 {
        return Ok(DeltaStudy {
            rows: Vec::new(),
            notice: Some("mu = 0: the memory does not affect the dynamics; study skipped".into()),
            newtonian_dx: None,
        });
    }
    if deltas.is_empty()
        || deltas.iter().any(|&d| !(d > 0.0))
        || deltas.windows(2).any(|w| w[1] >= w[0])
    {
        return Err(DiagError::BadDeltas);
    }
    let mut jobs: Vec<SimParams> = deltas
        .iter()
        .map(|&delta| {
            let mut p = base;
            p.fluid.delta = delta;
            p
        })
        .collect();
    let mut newtonian = base;
    newtonian.fluid.mu = 0.0;
    jobs.push(newtonian);
    let results: Vec<Result<(f64, f64), DiagError>> =
        jobs.par_iter().map(|p| periodic_window(*p, forcing)).collect();
    let mut rows = Vec::with_capacity(deltas.len());
    let mut newtonian_dx = None;
    for (i, r) in results.into_iter().enumerate() {
        let (lag, dx) = r?;
        if i < deltas.len() {
            rows.push(DeltaRow {
                delta: deltas[i],
                lag_norm: lag,
                period_dx: dx,
            });
        } else {
            newtonian_dx = Some(dx);
        }
    }
    Ok(DeltaStudy {
        rows,
        notice: None,
        newtonian_dx,
    })
}

/// Least-squares slope of `ln |v|` against `t` over `window`.
pub fn fit_log_slope(times: &[f64], values: &[f64], window: (f64, f64)) -> Result<f64, DiagError> {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(t, v)| **t >= window.0 && **t <= window.1 && **v != 0.0)
        .map(|(&t, &v)| (t, v.abs().ln()))
        .collect();
    if pts.len() < 3 {
        return Err(DiagError::TooFewPoints { need: 3, got: pts.len() });
    }
    let m = pts.len() as f64;
    let (st, sv) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (mt, mv) = (st / m, sv / m);
    let (num, den) = pts.iter().fold((0.0, 0.0), |a, p| {
        (a.0 + (p.0 - mt) * (p.1 - mv), a.1 + (p.0 - mt).powi(2))
    });
    Ok(num / den)
}

/// What a decay fit follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecaySignal {
    Energy,
    Mode(usize),
}

/// Exponential rate of a relaxation trajectory over `window`.
pub fn decay_rate_fit(
    sim: &Simulator,
    traj: &Trajectory,
    signal: DecaySignal,
    basis: &EigenBasis,
    window: (f64, f64),
) -> Result<f64, DiagError> {
    let times = traj.times();
    let values: Vec<f64> = traj
        .samples
        .iter()
        .map(|s| match signal {
            DecaySignal::Energy => energy(sim, s),
            DecaySignal::Mode(k) => mode_amplitude(sim, s, basis, k),
        })
        .collect();
    let rate = fit_log_slope(&times, &values, window)?;
    if !(rate < 0.0) {
        return Err(DiagError::NotDecaying { rate });
    }
    Ok(rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forcing::ForcingSpec;
    use crate::sim::integrate;
    use crate::theory::FluidParams;
    use std::f64::consts::PI;

    fn sim_with(params: SimParams, spec: ForcingSpec) -> Simulator {
        Simulator::new(params, &spec.build().unwrap()).unwrap()
    }

    fn bent(n: usize, amp: f64) -> FilamentState {
        let mut s = FilamentState::from_curvature(n, |s| amp * (3.0 * s).sin() * s * (1.0 - s), |s| 0.3 * amp * s * (1.0 - s));
        s.xi[0] = 0.0;
        s.xi[n - 1] = 0.0;
        s
    }

    #[test]
    fn straight_rod_center() {
        let c = center_of_mass(&FilamentState::straight(20));
        assert!((c[0] - 0.5).abs() < 1e-15 && c[1] == 0.0);
    }

    #[test]
    fn equilibrium_does_not_move() {
        let mut sim = sim_with(SimParams { n: 16, ..SimParams::default() }, ForcingSpec::none());
        let traj = integrate(&mut sim, &FilamentState::straight(16), 0.2, 0.05).unwrap();
        assert_eq!(displacement(&traj, 0.0, 0.2).unwrap(), [0.0, 0.0]);
        let res = periodicity_residual(&traj, 0.05).unwrap();
        assert!(res.values().iter().all(|&r| r == 0.0));
        assert!(displacement(&traj, 0.0, 0.3).is_err());
    }

    #[test]
    fn displacement_interpolates_and_adds() {
        let forcing = ForcingSpec::bad_swimmer();
        let mut sim = sim_with(SimParams { n: 16, ..SimParams::default() }, forcing);
        let traj = integrate(&mut sim, &FilamentState::straight(16), 0.1, 0.01).unwrap();
        let a = displacement(&traj, 0.013, 0.041).unwrap();
        let b = displacement(&traj, 0.041, 0.087).unwrap();
        let c = displacement(&traj, 0.013, 0.087).unwrap();
        assert!((a[0] + b[0] - c[0]).abs() < 1e-16 && (a[1] + b[1] - c[1]).abs() < 1e-16);
        let mid = center_of_mass_at(&traj, 0.015).unwrap();
        let (p, q) = (center_of_mass(&traj.samples[1]), center_of_mass(&traj.samples[2]));
        assert!((mid[0] - 0.5 * (p[0] + q[0])).abs() < 1e-15);
    }

    #[test]
    fn speed_formula_limits() {
        // without forcing and memory the formula is an exact derivative
        let params = SimParams {
            n: 40,
            fluid: FluidParams { mu: 2.0, ..FluidParams::default() },
            ..SimParams::default()
        };
        let sim = sim_with(params, ForcingSpec::none());
        let mut state = bent(40, 2.0);
        state.xi.iter_mut().for_each(|x| *x = 0.0);
        assert!(speed_formula(&sim, &state).abs() < 1e-14);
        // Newtonian reduction is bitwise
        let sim0 = sim_with(SimParams { n: 40, ..SimParams::default() }, ForcingSpec::bad_swimmer());
        let state = bent(40, 1.0);
        assert_eq!(speed_formula(&sim0, &state).to_bits(), speed_newtonian(&sim0, &state).to_bits());
    }

    #[test]
    fn energy_basics() {
        let params = SimParams {
            n: 32,
            fluid: FluidParams { mu: 1.0, ..FluidParams::default() },
            ..SimParams::default()
        };
        let sim = sim_with(params, ForcingSpec::none());
        assert_eq!(energy(&sim, &FilamentState::straight(32)), 0.0);
        assert!(energy(&sim, &bent(32, 1.0)) > 0.0);
        let sim0 = sim_with(SimParams { n: 32, ..SimParams::default() }, ForcingSpec::none());
        let state = bent(32, 1.0);
        let kb = kappa_bar(&sim0, &state);
        let direct = 0.5 * kb.iter().map(|k| k * k).sum::<f64>() / 32.0;
        assert!((energy(&sim0, &state) - direct).abs() < 1e-15);
    }

    #[test]
    fn derivative_stencils_are_second_order() {
        let err = |n: usize| {
            let h = 1.0 / n as f64;
            let u: Vec<f64> = (0..=n).map(|i| (i as f64 * h).exp()).collect();
            let d = derivative(&u, h);
            let d2 = second_derivative(&u, h);
            (0..=n)
                .map(|i| {
                    let e = (i as f64 * h).exp();
                    (d[i] - e).abs().max((d2[i] - e).abs())
                })
                .fold(0.0, f64::max)
        };
        let order = (err(32) / err(64)).log2();
        assert!((1.8..2.3).contains(&order), "{order}");
    }

    fn manufactured_error(n: usize) -> f64 {
        let h = 1.0 / n as f64;
        let c = 2.0;
        let s: Vec<f64> = (0..=n).map(|i| i as f64 * h).collect();
        let q: Vec<f64> = s.iter().map(|x| 1.0 + 4.0 * x * x).collect();
        let exact: Vec<f64> = s.iter().map(|x| (PI * x).sin()).collect();
        let f: Vec<f64> = (0..=n).map(|i| -c * PI * PI * exact[i] - q[i] * exact[i]).collect();
        let u = solve_dirichlet(c, &q, &f, h);
        u.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn tension_solver_converges_at_second_order() {
        let order = (manufactured_error(32) / manufactured_error(64)).log2();
        assert!((1.9..2.1).contains(&order), "{order}");
    }

    #[test]
    fn tension_of_rest_state_vanishes_and_ignores_memory_when_newtonian() {
        let sim = sim_with(SimParams { n: 32, ..SimParams::default() }, ForcingSpec::none());
        let t = solve_tension(&sim, &FilamentState::straight(32));
        assert!(t.tau_bar.iter().all(|&x| x == 0.0));
        let sim = sim_with(SimParams { n: 32, ..SimParams::default() }, ForcingSpec::bad_swimmer());
        let a = bent(32, 1.0);
        let mut b = a.clone();
        b.xi.iter_mut().for_each(|x| *x *= 5.0);
        assert_eq!(solve_tension(&sim, &a), solve_tension(&sim, &b));
        let t = solve_tension(&sim, &a);
        assert_eq!((t.tau_bar[0], t.tau_bar[32]), (0.0, 0.0));
    }

    #[test]
    fn tension_solve_is_linear() {
        let n = 40;
        let h = 1.0 / n as f64;
        let q: Vec<f64> = (0..=n).map(|i| (i as f64 * h).cos()).collect();
        let f1: Vec<f64> = (0..=n).map(|i| (i as f64).sin()).collect();
        let f2: Vec<f64> = (0..=n).map(|i| (i as f64 * 0.3).cos()).collect();
        let sum: Vec<f64> = f1.iter().zip(&f2).map(|(a, b)| 2.0 * a - 3.0 * b).collect();
        let (u1, u2, u) = (solve_dirichlet(1.5, &q, &f1, h), solve_dirichlet(1.5, &q, &f2, h), solve_dirichlet(1.5, &q, &sum, h));
        for i in 0..=n {
            assert!((2.0 * u1[i] - 3.0 * u2[i] - u[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn reconstruction_is_zero_at_rest_and_improves_with_refinement() {
        let mut sim = sim_with(SimParams { n: 16, ..SimParams::default() }, ForcingSpec::none());
        let check = velocity_reconstruction_check(&mut sim, &FilamentState::straight(16)).unwrap();
        assert_eq!(check.reconstructed, [0.0, 0.0]);
        assert!(check.simulated[0].abs() < 1e-14 && check.simulated[1].abs() < 1e-14);
        let rel = |n: usize| {
            let forcing = ForcingSpec::bad_swimmer().with_amplitude(0.2).build().unwrap();
            let mut sim = Simulator::new(SimParams { n, ..SimParams::default() }, &forcing).unwrap();
            let t = 0.01;
            let mut state = FilamentState::from_curvature(
                n,
                |s| forcing.kappa0(s, t) + 0.5 * (PI * s).sin().powi(2),
                |_| 0.0,
            );
            state.t = t;
            velocity_reconstruction_check(&mut sim, &state).unwrap().relative
        };
        let (coarse, fine) = (rel(32), rel(128));
        assert!(fine < coarse, "{coarse} {fine}");
    }

    #[test]
    fn h1_norm_matches_definition() {
        let u = [1.0, -1.0, 2.0];
        let want = ((1.0f64 + 1.0 + 4.0) / 3.0 + 3.0 * (4.0 + 9.0)).sqrt();
        assert!((discrete_h1_norm(&u) - want).abs() < 1e-14);
        assert_eq!(discrete_h1_norm(&[0.0; 5]), 0.0);
    }

    #[test]
    fn log_slope_recovers_rate() {
        let t: Vec<f64> = (0..50).map(|i| i as f64 * 0.01).collect();
        let v: Vec<f64> = t.iter().map(|t| 3.0 * (-7.5 * t).exp()).collect();
        assert!((fit_log_slope(&t, &v, (0.0, 1.0)).unwrap() + 7.5).abs() < 1e-10);
        assert!(fit_log_slope(&t, &v, (2.0, 3.0)).is_err());
    }

    #[test]
    fn newtonian_study_is_skipped() {
        let forcing = ForcingSpec::bad_swimmer().build().unwrap();
        let study = delta_scaling_study(&forcing, SimParams::default(), &[1e-2]).unwrap();
        assert!(study.rows.is_empty() && study.notice.is_some());
        let ve = SimParams { fluid: FluidParams { mu: 1.0, ..FluidParams::default() }, ..SimParams::default() };
        assert!(delta_scaling_study(&forcing, ve, &[1e-3, 1e-2]).is_err());
    }

    #[test]
    fn observables_reject_time_going_back() {
        let mut o = Observable::new("x");
        o.push_scalar(0.0, 1.0).unwrap();
        assert!(o.push_scalar(0.0, 2.0).is_err());
        let mut buf = Vec::new();
        o.push(1.0, vec![1.0, 2.0]).unwrap();
        write_observables_csv("r", &[o], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("run_id,name,t,value\nr,x,0e0,1e0\nr,x[0],1e0,1e0\nr,x[1],1e0,2e0"));
    }
}

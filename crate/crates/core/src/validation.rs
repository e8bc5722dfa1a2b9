//! Acceptance suite: fourteen pass/fail checks of the toolkit against the
//! published results and against its own invariants.
//!
//! Simulation runs shared by several criteria are cached inside a
//! [`Validator`] so each is integrated once.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Mutex;
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::basis::{solve_alpha, stable_residual, BasisError, EigenBasis};
use crate::diagnostics::{
    decay_rate_fit, delta_scaling_study, displacement, energy, solve_dirichlet, DecaySignal,
    DiagError,
};
use crate::forcing::{ForcingError, ForcingSpec, ModeCoeffs, Profile, DEFAULT_OMEGA};
use crate::sim::{
    discrete_equation_residuals, integrate, integrate_with, sample_times, theta_n_constraint,
    CurvatureStencil, FilamentState, SimError, SimParams, Simulator,
};
use crate::theory::{
    avg_speed_newtonian, avg_speed_ve, eigenvalues_for, lin_periodic_solution, matrix_eigenvalues,
    optimize_forcing, FluidParams, TheoryError,
};

#[derive(Debug, Error)]
pub enum ValidationError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Diag(#[from] DiagError),
    #[error(transparent)]
    Theory(#[from] TheoryError),
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Forcing(#[from] ForcingError),
    #[error("unknown criterion {0}; ids run from 1 to {COUNT}")]
    UnknownCriterion(usize),
}

/// Number of criteria in the suite.
pub const COUNT: usize = 14;

/// Segments used by every full-resolution run.
pub const RESOLUTION: usize = 100;

/// Outcome of one criterion.
#[derive(Debug, Clone, PartialEq)]
pub struct CriterionResult {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {:>2} {}: {}", self.id, self.name, self.detail)
    }
}

/// Short name of criterion `id`.
pub fn criterion_name(id: usize) -> Result<&'static str, ValidationError> {
    const NAMES: [&str; COUNT] = [
        "first eigenvalue",
        "bad-swimmer table",
        "direction reversal at small relaxation time",
        "small relaxation time non-monotonicity",
        "relaxation-time invariance at large relaxation time",
        "theory versus simulation",
        "energy monotonicity",
        "linear decay rate",
        "parity null",
        "Newtonian reduction",
        "square-root relaxation-time bound",
        "optimizer dominance",
        "tension boundary value problem",
        "structural invariants",
    ];
    id.checked_sub(1)
        .and_then(|i| NAMES.get(i).copied())
        .ok_or(ValidationError::UnknownCriterion(id))
}

/// Key of a cached bad-swimmer run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct RunKey {
    mu: u64,
    delta: u64,
    stencil: CurvatureStencil,
}

impl RunKey {
    fn new(mu: f64, delta: f64, stencil: CurvatureStencil) -> Self {
        Self {
            mu: mu.to_bits(),
            delta: delta.to_bits(),
            stencil,
        }
    }
}

/// Runs criteria and caches shared simulations.
#[derive(Debug, Default)]
pub struct Validator {
    runs: Mutex<HashMap<RunKey, Result<f64, String>>>,
}

impl Validator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Evaluates criterion `id`. Failures of the underlying computation are
    /// reported as a failed criterion.
    pub fn run(&self, id: usize) -> Result<CriterionResult, ValidationError> {
        let name = criterion_name(id)?;
        let outcome = match id {
            1 => first_eigenvalue(),
            2 => self.bad_swimmer_table(),
            3 => self.direction_reversal(),
            4 => self.small_delta_table(),
            5 => self.large_delta_invariance(),
            6 => theory_vs_simulation(),
            7 => energy_monotonicity(),
            8 => linear_decay_rate(),
            9 => parity_null(),
            10 => newtonian_reduction(),
            11 => sqrt_delta_bound(),
            12 => optimizer_dominance(),
            13 => tension_bvp(),
            14 => structural_invariants(),
            _ => unreachable!("criterion_name rejects other ids"),
        };
        let (passed, detail) = match outcome {
            Ok(v) => v,
            Err(e) => (false, format!("error: {e}")),
        };
        Ok(CriterionResult {
            id,
            name,
            passed,
            detail,
        })
    }

    /// Evaluates every criterion in order, calling `report` after each.
    pub fn run_all<F: FnMut(&CriterionResult)>(&self, mut report: F) -> Vec<CriterionResult> {
        self.prefetch(&all_table_runs());
        (1..=COUNT)
            .map(|id| {
                let r = self.run(id).expect("ids in range");
                report(&r);
                r
            })
            .collect()
    }

    /// Integrates the missing bad-swimmer runs in parallel.
    fn prefetch(&self, keys: &[(f64, f64, CurvatureStencil)]) {
        let missing: Vec<(f64, f64, CurvatureStencil)> = {
            let runs = self.runs.lock().expect("cache lock");
            keys.iter()
                .copied()
                .filter(|&(mu, delta, st)| !runs.contains_key(&RunKey::new(mu, delta, st)))
                .collect()
        };
        let done: Vec<_> = missing
            .par_iter()
            .map(|&(mu, delta, st)| {
                let r = bad_swimmer_displacement(mu, delta, st).map_err(|e| e.to_string());
                (RunKey::new(mu, delta, st), r)
            })
            .collect();
        self.runs.lock().expect("cache lock").extend(done);
    }

    fn displacements(
        &self,
        keys: &[(f64, f64, CurvatureStencil)],
    ) -> Result<Vec<f64>, ValidationError> {
        self.prefetch(keys);
        let runs = self.runs.lock().expect("cache lock");
        keys.iter()
            .map(|&(mu, delta, st)| {
                runs[&RunKey::new(mu, delta, st)]
                    .clone()
                    .map_err(|e| ValidationError::Sim(SimError::InvalidParams { field: "run", reason: e }))
            })
            .collect()
    }

    fn bad_swimmer_table(&self) -> Outcome {
        let keys: Vec<_> = TABLE_MU.iter().map(|&mu| (mu, 1.0, CurvatureStencil::Central)).collect();
        let dx = self.displacements(&keys)?;
        let verbatim = self.displacements(&[(8.0, 1.0, CurvatureStencil::Verbatim)])?[0];
        let within = dx
            .iter()
            .zip(TABLE_DX)
            .all(|(&got, want)| matches_within(got, want, 0.25));
        let monotone = dx.windows(2).all(|w| w[1].abs() < w[0].abs());
        let verbatim_ok = matches_within(verbatim, TABLE_DX[4], 0.25);
        Ok((
            within && monotone,
            format!(
                "central stencil dx = {} vs {}; monotone = {monotone}; verbatim stencil at mu = 8 gives {verbatim:.4} ({})",
                list(&dx),
                list(&TABLE_DX),
                if verbatim_ok { "also within tolerance" } else { "outside tolerance" }
            ),
        ))
    }

    fn direction_reversal(&self) -> Outcome {
        let dx = self.displacements(&[(2.0, 1.0 / DEFAULT_OMEGA, CurvatureStencil::Central)])?[0];
        let want = 0.0062;
        Ok((
            dx > 0.0 && matches_within(dx, want, 0.4),
            format!("dx = {dx:.5} vs {want} (+-40%, positive)"),
        ))
    }

    fn small_delta_table(&self) -> Outcome {
        let mus = [1.0, 4.0, 8.0];
        let want = [-0.019, -0.0030, -0.0040];
        let keys: Vec<_> = mus
            .iter()
            .map(|&mu| (mu, 1.0 / DEFAULT_OMEGA, CurvatureStencil::Central))
            .collect();
        let dx = self.displacements(&keys)?;
        let ok: Vec<bool> = dx.iter().zip(want).map(|(&g, w)| matches_within(g, w, 0.4)).collect();
        Ok((
            ok.iter().all(|&b| b),
            format!("mu = 1, 4, 8: dx = {} vs {} (+-40%), per point {ok:?}", list(&dx), list(&want)),
        ))
    }

    fn large_delta_invariance(&self) -> Outcome {
        let keys: Vec<_> = [1.0, 2.0, 4.0, 8.0]
            .iter()
            .map(|&d| (1.0, d, CurvatureStencil::Central))
            .collect();
        let dx = self.displacements(&keys)?;
        let (lo, hi) = dx.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let scale = dx.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let spread = (hi - lo) / scale;
        Ok((spread < 0.05, format!("delta = 1, 2, 4, 8: dx = {}; spread {spread:.2e} (< 5%)", list(&dx))))
    }
}

type Outcome = Result<(bool, String), ValidationError>;

const TABLE_MU: [f64; 5] = [0.0, 1.0, 2.0, 4.0, 8.0];
const TABLE_DX: [f64; 5] = [-0.036, -0.018, -0.012, -0.0069, -0.0035];

fn all_table_runs() -> Vec<(f64, f64, CurvatureStencil)> {
    let c = CurvatureStencil::Central;
    let small = 1.0 / DEFAULT_OMEGA;
    let mut keys: Vec<_> = TABLE_MU.iter().map(|&mu| (mu, 1.0, c)).collect();
    keys.push((8.0, 1.0, CurvatureStencil::Verbatim));
    keys.extend([1.0, 2.0, 4.0, 8.0].iter().map(|&mu| (mu, small, c)));
    keys.extend([2.0, 4.0, 8.0].iter().map(|&d| (1.0, d, c)));
    keys
}

fn matches_within(got: f64, want: f64, rel: f64) -> bool {
    got.signum() == want.signum() && (got - want).abs() <= rel * want.abs()
}

fn list(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", items.join(", "))
}

fn central(n: usize, fluid: FluidParams) -> SimParams {
    SimParams {
        n,
        fluid,
        curvature_stencil: CurvatureStencil::Central,
        ..SimParams::default()
    }
}

/// x-displacement over `[1, 2]` of the bad swimmer started straight.
pub fn bad_swimmer_displacement(
    mu: f64,
    delta: f64,
    stencil: CurvatureStencil,
) -> Result<f64, ValidationError> {
    let forcing = ForcingSpec::bad_swimmer().build()?;
    let fluid = FluidParams {
        mu,
        delta,
        ..FluidParams::default()
    };
    let params = SimParams {
        curvature_stencil: stencil,
        ..central(RESOLUTION, fluid)
    };
    let mut sim = Simulator::new(params, &forcing)?;
    let traj = integrate_with(&mut sim, &FilamentState::straight(RESOLUTION), &[1.0, 2.0], |_, _| {})?;
    Ok(displacement(&traj, 1.0, 2.0)?[0])
}

fn first_eigenvalue() -> Outcome {
    let start = Instant::now();
    let alpha = solve_alpha(1)?;
    let basis = EigenBasis::new(40)?;
    let elapsed = start.elapsed().as_secs_f64();
    let lambda = basis.pair(1).lambda;
    let direct = (alpha.cos() * alpha.cosh() - 1.0).abs();
    let stable = stable_residual(alpha).abs();
    let ok = (500.0..=501.0).contains(&lambda) && direct < 1e-10 && stable < 1e-10 && elapsed < 1.0;
    Ok((
        ok,
        format!("lambda_1 = {lambda:.6}, |cos a cosh a - 1| = {direct:.1e}, stable form {stable:.1e}, {elapsed:.3} s for alpha and a 40-mode basis"),
    ))
}

/// Per-period speed of the traveling wave after three periods from the
/// periodic linear solution.
fn traveling_wave_speed(amplitude: f64, tight: bool) -> Result<f64, ValidationError> {
    let basis = EigenBasis::new(40)?;
    let forcing = ForcingSpec::traveling_wave(2.0 * PI).with_amplitude(amplitude).build()?;
    let fluid = FluidParams {
        mu: 1.0,
        delta: 0.1,
        ..FluidParams::default()
    };
    let lin = lin_periodic_solution(&forcing.mode_coeffs(&basis), &fluid, &basis)?;
    let start = FilamentState::from_curvature(
        RESOLUTION,
        |s| forcing.kappa0(s, 0.0) + lin.kappa_bar(&basis, s, 0.0),
        |s| lin.kappa_bar(&basis, s, 0.0) - lin.z(&basis, s, 0.0),
    );
    let mut params = central(RESOLUTION, fluid);
    if tight {
        params.reltol = 1e-8;
        params.abstol = 1e-11;
    }
    let mut sim = Simulator::new(params, &forcing)?;
    let period = forcing.period();
    let stops = [2.0 * period, 3.0 * period];
    let traj = integrate_with(&mut sim, &start, &stops, |_, _| {})?;
    Ok(displacement(&traj, stops[0], stops[1])?[0] / period)
}

fn theory_vs_simulation() -> Outcome {
    const CALIBRATION: f64 = 0.01;
    let amps = [0.05, 0.1, 0.2];
    let basis = EigenBasis::new(40)?;
    let fluid = FluidParams {
        mu: 1.0,
        delta: 0.1,
        ..FluidParams::default()
    };
    let unit = ForcingSpec::traveling_wave(2.0 * PI).build()?;
    let theory_unit = avg_speed_ve(&unit.mode_coeffs(&basis), &fluid, &basis)?;
    let jobs: Vec<(f64, bool)> = std::iter::once((CALIBRATION, true))
        .chain(amps.iter().map(|&a| (a, true)))
        .chain(std::iter::once((0.1, false)))
        .collect();
    let speeds: Vec<f64> = jobs
        .par_iter()
        .map(|&(a, tight)| traveling_wave_speed(a, tight))
        .collect::<Result<_, _>>()?;
    // the discrete small-amplitude limit removes the amplitude-independent
    // discretization offset, leaving the nonlinear remainder
    let discrete_unit = speeds[0] / (CALIBRATION * CALIBRATION);
    let errors: Vec<f64> = amps
        .iter()
        .zip(&speeds[1..4])
        .map(|(&a, &u)| u / (discrete_unit * a * a) - 1.0)
        .collect();
    let ratios: Vec<f64> = errors.windows(2).map(|w| w[1] / w[0]).collect();
    let theory = theory_unit * 0.01;
    let accuracy = (speeds[4] - theory).abs() / theory.abs();
    let scaling = ratios.iter().all(|r| (3.0..=5.5).contains(r));
    Ok((
        scaling && accuracy < 0.05,
        format!(
            "nonlinear relative errors {:?}, ratios {:?} (in [3, 5.5]); at amplitude 0.1 speed {:.6e} vs theory {theory:.6e}, relative error {accuracy:.2e} (< 5%)",
            errors.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>(),
            ratios.iter().map(|r| format!("{r:.2}")).collect::<Vec<_>>(),
            speeds[4]
        ),
    ))
}

/// Random small curvature and memory built from the first four modes.
fn random_relaxation_state(n: usize, basis: &EigenBasis, rng: &mut ChaCha8Rng) -> FilamentState {
    let kc: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.2..0.2)).collect();
    let xc: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.2..0.2)).collect();
    let mut state = FilamentState::from_curvature(n, |s| basis.reconstruct(&kc, s), |s| basis.reconstruct(&xc, s));
    state.xi[0] = 0.0;
    state.xi[n - 1] = 0.0;
    state
}

const ENERGY_SLACK: f64 = 1e-9;

fn energy_monotonicity() -> Outcome {
    const N: usize = RESOLUTION;
    const SEEDS: u64 = 10;
    let basis = EigenBasis::new(4)?;
    let forcing = ForcingSpec::none().build()?;
    let mut jobs = Vec::new();
    for mu in [0.0, 1.0] {
        for delta in [0.1, 1.0] {
            for seed in 0..SEEDS {
                jobs.push((mu, delta, seed));
            }
        }
    }
    let worst: Vec<f64> = jobs
        .par_iter()
        .map(|&(mu, delta, seed)| -> Result<f64, ValidationError> {
            let params = central(N, FluidParams { mu, delta, ..FluidParams::default() });
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let start = random_relaxation_state(N, &basis, &mut rng);
            let mut sim = Simulator::new(params, &forcing)?;
            let probe = Simulator::new(params, &forcing)?;
            let mut last = {
                let mut s = start.clone();
                probe.project_state(&mut s);
                energy(&probe, &s)
            };
            let mut rise = f64::NEG_INFINITY;
            integrate_with(&mut sim, &start, &[0.5], |t, y| {
                let e = energy(&probe, &FilamentState::from_slice(t, y));
                rise = rise.max(e - last);
                last = e;
            })?;
            Ok(rise)
        })
        .collect::<Result<_, _>>()?;
    let max_rise = worst.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((
        max_rise <= ENERGY_SLACK,
        format!(
            "{} relaxation runs (mu in {{0, 1}}, delta in {{0.1, 1}}, 10 seeds), largest energy increase over one accepted step {max_rise:.2e} (<= {ENERGY_SLACK:e})",
            jobs.len()
        ),
    ))
}

fn linear_decay_rate() -> Outcome {
    const N: usize = 64;
    const AMPLITUDE: f64 = 1e-3;
    let basis = EigenBasis::new(4)?;
    let forcing = ForcingSpec::none().build()?;
    let cases = [(1.0, 1.0, 2.0), (0.01, 1.0, 0.1)];
    let mut ok = true;
    let mut parts = Vec::new();
    for (delta, mu, t_end) in cases {
        let fluid = FluidParams { mu, delta, ..FluidParams::default() };
        let (_, nu) = matrix_eigenvalues(1, &fluid, &basis)?;
        let psi = basis.pair(1);
        let mut start = FilamentState::from_curvature(N, |s| AMPLITUDE * psi.psi(s), |s| AMPLITUDE / (1.0 + delta * nu) * psi.psi(s));
        start.xi[0] = 0.0;
        start.xi[N - 1] = 0.0;
        let mut sim = Simulator::new(central(N, fluid), &forcing)?;
        let traj = integrate(&mut sim, &start, t_end, t_end / 50.0)?;
        let rate = decay_rate_fit(&sim, &traj, DecaySignal::Mode(1), &basis, (0.1 * t_end, t_end))?;
        let rel = (rate - nu).abs() / nu.abs();
        ok &= rel < 0.03;
        parts.push(format!("(delta, mu) = ({delta}, {mu}): fitted {rate:.5} vs nu+ {nu:.5}, relative {rel:.1e}"));
    }
    Ok((ok, format!("{} (< 3%)", parts.join("; "))))
}

fn parity_null() -> Outcome {
    let basis = EigenBasis::new(12)?;
    let cases = [
        (Profile::Modes { coeffs: vec![1.0, 0.0, 0.5] }, Profile::Modes { coeffs: vec![0.3, 0.0, -1.0] }),
        (Profile::Modes { coeffs: vec![0.0, 1.0, 0.0, 0.4] }, Profile::Modes { coeffs: vec![0.0, -0.2, 0.0, 1.0] }),
    ];
    let fluid = FluidParams { mu: 1.0, ..FluidParams::default() };
    let results: Vec<(f64, f64)> = cases
        .par_iter()
        .map(|(f1, f2)| -> Result<(f64, f64), ValidationError> {
            let spec = ForcingSpec::new(f1.clone(), f2.clone());
            let forcing = spec.build()?;
            // exact coefficients: only the listed modes are present
            let exact = |p: &Profile| match p {
                Profile::Modes { coeffs } => {
                    let mut c = coeffs.clone();
                    c.resize(basis.modes(), 0.0);
                    c
                }
                _ => unreachable!(),
            };
            let c = ModeCoeffs { a: exact(f1), b: exact(f2) };
            let theory = avg_speed_ve(&c, &fluid, &basis)?;
            let mut sim = Simulator::new(central(RESOLUTION, fluid), &forcing)?;
            let period = forcing.period();
            let traj = integrate_with(&mut sim, &FilamentState::straight(RESOLUTION), &[1.0, 1.0 + period], |_, _| {})?;
            Ok((theory, displacement(&traj, 1.0, 1.0 + period)?[0]))
        })
        .collect::<Result<_, _>>()?;
    let ok = results.iter().all(|&(u, dx)| u == 0.0 && dx.abs() < 1e-4);
    Ok((
        ok,
        format!(
            "modes {{1, 3}}: theory {:e}, per-period dx {:.1e}; modes {{2, 4}}: theory {:e}, per-period dx {:.1e} (theory exactly 0, |dx| < 1e-4)",
            results[0].0, results[0].1, results[1].0, results[1].1
        ),
    ))
}

fn random_coeffs(k: usize, rng: &mut ChaCha8Rng) -> ModeCoeffs {
    ModeCoeffs {
        a: (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        b: (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    }
}

fn newtonian_reduction() -> Outcome {
    let basis = EigenBasis::new(12)?;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let c = random_coeffs(12, &mut rng);
        let p = FluidParams { mu: 0.0, delta: rng.gen_range(0.01..10.0), ..FluidParams::default() };
        let (ve, nw) = (avg_speed_ve(&c, &p, &basis)?, avg_speed_newtonian(&c, &p, &basis)?);
        worst = worst.max((ve - nw).abs() / nw.abs().max(f64::MIN_POSITIVE));
    }
    // the simulator ignores δ and ξ when μ = 0
    let forcing = ForcingSpec::bad_swimmer().build()?;
    let run = |delta: f64, xi_scale: f64| -> Result<Vec<Vec<u64>>, ValidationError> {
        let n = 16;
        let mut start = FilamentState::straight(n);
        for (j, x) in start.xi.iter_mut().enumerate() {
            *x = xi_scale * (j as f64).sin();
        }
        let mut sim = Simulator::new(central(n, FluidParams { delta, ..FluidParams::default() }), &forcing)?;
        let traj = integrate(&mut sim, &start, 0.05, 0.01)?;
        Ok(traj
            .samples
            .iter()
            .map(|s| {
                let mut v = vec![s.t.to_bits(), s.x0.to_bits(), s.y0.to_bits()];
                v.extend(s.theta.iter().map(|x| x.to_bits()));
                v
            })
            .collect())
    };
    let identical = run(1.0, 0.0)? == run(0.01, 3.0)?;
    Ok((
        worst <= 1e-14 && identical,
        format!("100 random vectors, worst relative difference {worst:.1e} (<= 1e-14); simulator bitwise independent of delta and xi: {identical}"),
    ))
}

fn sqrt_delta_bound() -> Outcome {
    let forcing = ForcingSpec::bad_swimmer().build()?;
    let base = central(RESOLUTION, FluidParams { mu: 1.0, ..FluidParams::default() });
    let study = delta_scaling_study(&forcing, base, &[1e-2, 2.5e-3, 6.25e-4])?;
    let ratios = study.ratios();
    let lags: Vec<f64> = study.rows.iter().map(|r| r.lag_norm).collect();
    Ok((
        !ratios.is_empty() && ratios.iter().all(|&r| r <= 0.6),
        format!("delta = 1e-2, 2.5e-3, 6.25e-4: lag norms {}, ratios {} (<= 0.6)", list(&lags), list(&ratios)),
    ))
}

fn optimizer_dominance() -> Outcome {
    const K: usize = 12;
    let basis = EigenBasis::new(K)?;
    let fluid = FluidParams::default();
    let best = optimize_forcing(K, &fluid, &basis)?;
    let wave = ForcingSpec::traveling_wave(2.0 * PI).build()?.mode_coeffs(&basis);
    let wave_unit = avg_speed_ve(&wave.scaled(1.0 / wave.norm()), &fluid, &basis)?;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut random_best = f64::NEG_INFINITY;
    for _ in 0..1000 {
        let x: DVector<f64> = DVector::from_fn(2 * K, |_, _| rng.gen_range(-1.0..1.0));
        let x = &x / x.norm();
        let c = ModeCoeffs {
            a: x.rows(0, K).iter().copied().collect(),
            b: x.rows(K, K).iter().copied().collect(),
        };
        random_best = random_best.max(avg_speed_ve(&c, &fluid, &basis)?);
    }
    let ok = best.speed >= wave_unit.abs() && best.speed >= random_best;
    Ok((
        ok,
        format!(
            "optimum {:.6e} vs unit traveling wave {wave_unit:.6e} and best of 1000 random unit vectors {random_best:.6e}",
            best.speed
        ),
    ))
}

fn tension_bvp() -> Outcome {
    let gamma = FluidParams::default().gamma;
    let error = |n: usize| {
        let h = 1.0 / n as f64;
        let s: Vec<f64> = (0..=n).map(|i| i as f64 * h).collect();
        // (κ̄ + κ₀)² for a bent filament under the bad-swimmer forcing
        let q: Vec<f64> = s
            .iter()
            .map(|x| (0.4 * (3.0 * x).sin() * x * (1.0 - x) + (x - 1.0).powi(2)).powi(2))
            .collect();
        let exact: Vec<f64> = s.iter().map(|x| (PI * x).sin()).collect();
        let f: Vec<f64> = (0..=n)
            .map(|i| -(1.0 + gamma) * PI * PI * exact[i] - q[i] * exact[i])
            .collect();
        let u = solve_dirichlet(1.0 + gamma, &q, &f, h);
        u.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    };
    let errs = [error(32), error(64), error(128)];
    let orders: Vec<f64> = errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    Ok((
        orders.iter().all(|o| (1.8..=2.2).contains(o)),
        format!("max errors {:?} for N = 32, 64, 128; orders {} (in [1.8, 2.2])", errs.map(|e| format!("{e:.2e}")), list(&orders)),
    ))
}

fn structural_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let basis = EigenBasis::new(8)?;
    let forcing_spec = |rng: &mut ChaCha8Rng| {
        let c1 = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c2 = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        ForcingSpec::new(Profile::Modes { coeffs: c1 }, Profile::Modes { coeffs: c2 }).with_amplitude(rng.gen_range(0.5..3.0))
    };

    // θ_N after every accepted step
    let mut theta_worst = 0.0f64;
    for _ in 0..3 {
        let forcing = forcing_spec(&mut rng).build()?;
        let n = 16;
        let fluid = FluidParams { mu: rng.gen_range(0.0..4.0), delta: rng.gen_range(0.05..2.0), ..FluidParams::default() };
        let mut sim = Simulator::new(central(n, fluid), &forcing)?;
        let probe = Simulator::new(central(n, fluid), &forcing)?;
        integrate_with(&mut sim, &FilamentState::straight(n), &sample_times(0.0, 0.1, 0.05), |t, y| {
            let s = FilamentState::from_slice(t, y);
            let want = probe.constrained_theta_n(t, &s.theta);
            theta_worst = theta_worst.max((s.theta[n - 1] - want).abs());
        })?;
    }

    // whole-filament force balance of the solved velocities
    let mut force_worst = 0.0f64;
    for _ in 0..20 {
        let n = rng.gen_range(8..48);
        let forcing = forcing_spec(&mut rng).build()?;
        let fluid = FluidParams { gamma: rng.gen_range(0.5..2.0), mu: rng.gen_range(0.0..4.0), delta: rng.gen_range(0.05..2.0), ..FluidParams::default() };
        let mut sim = Simulator::new(central(n, fluid), &forcing)?;
        let kc: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut state = FilamentState::from_curvature(n, |s| basis.reconstruct(&kc, s), |s| 0.5 * (PI * s).sin());
        state.t = rng.gen_range(0.0..1.0);
        sim.project_state(&mut state);
        let v = sim.velocities(&state)?;
        let res = discrete_equation_residuals(&sim, &state, &v);
        let scale = v.amax().max(1.0);
        force_worst = force_worst.max(res[n - 1].abs().max(res[n].abs()) / scale);
    }

    // periodic linear solution in the frequency domain
    let mut lin_worst = 0.0f64;
    for _ in 0..50 {
        let c = random_coeffs(8, &mut rng);
        let p = FluidParams { mu: rng.gen_range(0.0..8.0), delta: rng.gen_range(0.001..10.0), ..FluidParams::default() };
        lin_worst = lin_worst.max(lin_periodic_solution(&c, &p, &basis)?.residual(&c, &p, &basis));
    }

    // sum and product of the two decay rates
    let mut vieta_worst = 0.0f64;
    for _ in 0..200 {
        let lambda = rng.gen_range(1.0..1e6);
        let p = FluidParams { mu: rng.gen_range(0.0..8.0), delta: rng.gen_range(1e-3..10.0), ..FluidParams::default() };
        let (m, pl) = eigenvalues_for(lambda, &p)?;
        let sum = -(1.0 + (1.0 + p.mu) * p.delta * lambda) / p.delta;
        let prod = lambda / p.delta;
        vieta_worst = vieta_worst.max(((m + pl) - sum).abs() / sum.abs()).max(((m * pl) - prod).abs() / prod);
    }

    // the constraint itself
    let direct = theta_n_constraint(0.3, 2.0, -1.0, 10) - (0.3 + 0.1 * 2.0 + 0.5 * 0.01);
    let ok = theta_worst < 1e-10 && force_worst < 1e-9 && lin_worst < 1e-10 && vieta_worst < 1e-12 && direct.abs() < 1e-15;
    Ok((
        ok,
        format!(
            "theta_N {theta_worst:.1e} (< 1e-10), force balance {force_worst:.1e} (< 1e-9), linear solution {lin_worst:.1e} (< 1e-10), Vieta {vieta_worst:.1e} (< 1e-12)"
        ),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_cover_every_id() {
        assert!((1..=COUNT).all(|id| criterion_name(id).is_ok()));
        assert!(criterion_name(0).is_err() && criterion_name(COUNT + 1).is_err());
    }

    #[test]
    fn cheap_criteria_pass() {
        let v = Validator::new();
        for id in [1, 10, 12, 13] {
            let r = v.run(id).unwrap();
            assert!(r.passed, "{r}");
        }
    }

    #[test]
    fn tolerance_helper_checks_sign() {
        assert!(matches_within(-0.02, -0.018, 0.25));
        assert!(!matches_within(0.018, -0.018, 0.25));
        assert!(!matches_within(-0.03, -0.018, 0.25));
    }

    #[test]
    fn result_line_format() {
        let r = CriterionResult { id: 3, name: "x", passed: false, detail: "d".into() };
        assert_eq!(r.to_string(), "[FAIL]  3 x: d");
    }
}

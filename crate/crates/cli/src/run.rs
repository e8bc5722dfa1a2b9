//! Executes a resolved [`RunConfig`] and writes its artifacts.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use vefil::basis::EigenBasis;
use vefil::diagnostics::{
    center_of_mass, decay_rate_fit, delta_scaling_study, displacement, energy, memory_lag_norm,
    periodicity_residual, speed_formula, write_observables_csv, DecaySignal, Observable, BURN_IN,
};
use vefil::forcing::{Forcing, ModeCoeffs};
use vefil::sim::{integrate_with, sample_times, FilamentState, SimParams, Simulator, Trajectory};
use vefil::theory::{
    avg_speed_newtonian, avg_speed_ve, eigenvalues_for, optimize_forcing, speed_sweep,
    write_sweep_csv, FluidParams, SpeedTable,
};
use vefil::validation::{CriterionResult, Validator, COUNT};

use crate::config::{InitialCondition, Mode, RunConfig, Study, MANIFEST_VERSION_KEY};

/// Periodicity residual below which a run counts as periodic.
pub const PERIODIC_TOL: f64 = 1e-3;

/// Number of fiber snapshots written by a simulation.
pub const SNAPSHOTS: usize = 10;

/// Result of one invocation.
#[derive(Debug, Clone)]
pub struct Summary {
    /// False when some sweep point or criterion failed.
    pub success: bool,
    pub outputs: Vec<PathBuf>,
    pub metadata: Value,
}

/// Collects the files written into the output directory.
struct OutDir {
    dir: PathBuf,
    files: Vec<String>,
}

impl OutDir {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.dir.join(name);
        let file = File::create(&path).with_context(|| format!("cannot write {}", path.display()))?;
        self.files.push(name.to_string());
        Ok(BufWriter::new(file))
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }
}

/// Runs `cfg` with `jobs` workers and writes everything under `out`.
pub fn run(cfg: &RunConfig, out: &Path, jobs: usize) -> Result<Summary> {
    let cfg = cfg.resolved();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .context("cannot start the worker pool")?;
    let mut dir = OutDir::new(out)?;
    let (success, metadata) = pool
        .install(|| match cfg.mode {
            Mode::Simulate => simulate(&cfg, &mut dir),
            Mode::Sweep => sweep(&cfg, &mut dir),
            Mode::TheoryTable => theory_table(&cfg, &mut dir),
            Mode::Optimize => optimize(&cfg, &mut dir),
            Mode::Validate => validate(&cfg, &mut dir),
        })
        .with_context(|| format!("run {}", cfg.run_id))?;
    let mut outputs = dir.files.clone();
    outputs.push("manifest.json".into());
    let manifest = json!({
        MANIFEST_VERSION_KEY: 1,
        "tool": env!("CARGO_PKG_NAME"),
        "tool_version": env!("CARGO_PKG_VERSION"),
        "run_id": cfg.run_id,
        "mode": cfg.mode,
        "jobs": jobs,
        "success": success,
        "config": cfg,
        "outputs": outputs,
        "metadata": metadata,
    });
    dir.write_json("manifest.json", &manifest)?;
    Ok(Summary {
        success,
        outputs: dir.files.iter().map(|f| out.join(f)).collect(),
        metadata,
    })
}

/// Starting state requested by the config.
pub fn initial_state(cfg: &RunConfig, forcing: &Forcing) -> Result<FilamentState> {
    let n = cfg.sim.n;
    let mut state = match cfg.initial {
        InitialCondition::Straight => FilamentState::straight(n),
        InitialCondition::Perturbed { seed, amplitude, modes } => {
            let basis = EigenBasis::new(modes)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let kc: Vec<f64> = (0..modes).map(|_| amplitude * rng.gen_range(-1.0..1.0)).collect();
            let xc: Vec<f64> = (0..modes).map(|_| amplitude * rng.gen_range(-1.0..1.0)).collect();
            FilamentState::from_curvature(n, |s| forcing.kappa0(s, 0.0) + basis.reconstruct(&kc, s), |s| basis.reconstruct(&xc, s))
        }
        InitialCondition::LinearPeriodic => {
            let basis = EigenBasis::new(cfg.theory.modes)?;
            let lin = vefil::theory::lin_periodic_solution(&forcing.mode_coeffs(&basis), &cfg.sim.fluid, &basis)?;
            FilamentState::from_curvature(
                n,
                |s| forcing.kappa0(s, 0.0) + lin.kappa_bar(&basis, s, 0.0),
                |s| lin.kappa_bar(&basis, s, 0.0) - lin.z(&basis, s, 0.0),
            )
        }
    };
    state.xi[0] = 0.0;
    state.xi[n - 1] = 0.0;
    Ok(state)
}

/// Times at which fiber snapshots are taken: ten per forcing period over
/// the last period, or spread over the run without forcing.
pub fn snapshot_times(t_end: f64, period: Option<f64>) -> Vec<f64> {
    match period {
        Some(p) if p < t_end => (0..SNAPSHOTS)
            .map(|i| t_end - p + p * i as f64 / SNAPSHOTS as f64)
            .collect(),
        _ => (0..SNAPSHOTS)
            .map(|i| t_end * i as f64 / (SNAPSHOTS - 1) as f64)
            .collect(),
    }
}

fn merged_stops(t0: f64, extra: &[f64], regular: Vec<f64>) -> Vec<f64> {
    let mut stops: Vec<f64> = regular.into_iter().chain(extra.iter().copied()).filter(|&t| t > t0).collect();
    stops.sort_by(f64::total_cmp);
    stops.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
    stops
}

fn nearest_sample(traj: &Trajectory, t: f64) -> usize {
    traj.samples
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1.t - t).abs().total_cmp(&(b.1.t - t).abs()))
        .map_or(0, |(i, _)| i)
}

/// Scalar results of one simulation.
#[derive(Debug, Clone, Serialize)]
pub struct SimReport {
    pub run_id: String,
    pub window: [f64; 2],
    pub displacement: [f64; 2],
    pub mean_speed: f64,
    pub theory_speed: f64,
    pub theory_speed_newtonian: f64,
    /// First time the run counts as periodic: the periodicity residual
    /// drops below its tolerance or the burn-in elapses.
    pub periodic_from: Option<f64>,
    pub periodic_by: Option<&'static str>,
    pub energy_decay_rate: Option<f64>,
    pub final_energy: f64,
    pub steps: usize,
    pub rejected_steps: usize,
}

fn theory_speeds(cfg: &RunConfig, coeffs_of: impl Fn(&EigenBasis) -> ModeCoeffs, fluid: &FluidParams) -> Result<(f64, f64)> {
    let basis = EigenBasis::new(cfg.theory.modes)?;
    let c = coeffs_of(&basis);
    Ok((avg_speed_ve(&c, fluid, &basis)?, avg_speed_newtonian(&c, fluid, &basis)?))
}

fn simulate(cfg: &RunConfig, dir: &mut OutDir) -> Result<(bool, Value)> {
    let forcing = cfg.forcing.build()?;
    let mut sim = Simulator::new(cfg.sim, &forcing)?;
    let start = initial_state(cfg, &forcing)?;
    let t_end = cfg.sim.t_end;
    let window = cfg.resolved_window();
    let period = (!forcing.is_zero()).then(|| forcing.period());
    let snaps = snapshot_times(t_end, period);
    let extra: Vec<f64> = snaps.iter().copied().chain(window).collect();
    let stops = merged_stops(start.t, &extra, sample_times(start.t, t_end, cfg.resolved_interval()));
    let traj = integrate_with(&mut sim, &start, &stops, |_, _| {})?;

    traj.write_csv(dir.create("trajectory.csv")?)?;
    let indices: Vec<usize> = snaps.iter().map(|&t| nearest_sample(&traj, t)).collect();
    traj.write_nodes_csv(&indices, dir.create("snapshots.csv")?)?;

    let mut com = Observable::new("com");
    let mut en = Observable::new("energy");
    let mut speed = Observable::new("speed_formula");
    let mut lag = Observable::new("memory_lag");
    for s in &traj.samples {
        let c = center_of_mass(s);
        com.push(s.t, c.to_vec())?;
        en.push_scalar(s.t, energy(&sim, s))?;
        speed.push_scalar(s.t, speed_formula(&sim, s))?;
        lag.push_scalar(s.t, memory_lag_norm(&sim, s))?;
    }
    let mut observables = vec![com, en, speed];
    if cfg.sim.fluid.mu > 0.0 {
        observables.push(lag);
    }
    let (mut periodic_from, mut periodic_by) = (None, None);
    if let Some(p) = period {
        if let Ok(res) = periodicity_residual(&traj, p) {
            let by_residual = res.samples.iter().find(|(_, v)| v[0] < PERIODIC_TOL).map(|(t, _)| *t);
            (periodic_from, periodic_by) = match by_residual {
                Some(t) if t <= BURN_IN => (Some(t), Some("residual")),
                _ if t_end >= BURN_IN => (Some(BURN_IN), Some("burn_in")),
                other => (other, other.map(|_| "residual")),
            };
            observables.push(res);
        } else if t_end >= BURN_IN {
            (periodic_from, periodic_by) = (Some(BURN_IN), Some("burn_in"));
        }
    }
    write_observables_csv(&cfg.run_id, &observables, dir.create("observables.csv")?)?;

    let d = displacement(&traj, window[0], window[1])?;
    let (theory_speed, theory_speed_newtonian) = theory_speeds(cfg, |b| forcing.mode_coeffs(b), &cfg.sim.fluid)?;
    let energy_decay_rate = if forcing.is_zero() {
        let basis = EigenBasis::new(1)?;
        decay_rate_fit(&sim, &traj, DecaySignal::Energy, &basis, (0.0, t_end)).ok()
    } else {
        None
    };
    let report = SimReport {
        run_id: cfg.run_id.clone(),
        window,
        displacement: d,
        mean_speed: d[0] / (window[1] - window[0]),
        theory_speed,
        theory_speed_newtonian,
        periodic_from,
        periodic_by,
        energy_decay_rate,
        final_energy: energy(&sim, traj.last()),
        steps: traj.stats.steps,
        rejected_steps: traj.stats.rejected,
    };
    dir.write_json("report.json", &report)?;
    Ok((true, serde_json::to_value(&report)?))
}

/// One row of a sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub mu: f64,
    pub delta: f64,
    pub status: &'static str,
    pub dx: Option<f64>,
    pub dy: Option<f64>,
    pub mean_speed: Option<f64>,
    pub theory_speed: Option<f64>,
    pub error: Option<String>,
}

fn sweep_point(cfg: &RunConfig, forcing: &Forcing, mu: f64, delta: f64) -> Result<[f64; 2]> {
    let params = SimParams {
        fluid: FluidParams { mu, delta, ..cfg.sim.fluid },
        ..cfg.sim
    };
    let mut sim = Simulator::new(params, forcing)?;
    let point = RunConfig { sim: params, ..cfg.clone() };
    let start = initial_state(&point, forcing)?;
    let window = cfg.resolved_window();
    let traj = integrate_with(&mut sim, &start, &merged_stops(start.t, &window, Vec::new()), |_, _| {})?;
    Ok(displacement(&traj, window[0], window[1])?)
}

fn sweep(cfg: &RunConfig, dir: &mut OutDir) -> Result<(bool, Value)> {
    if cfg.study == Some(Study::DeltaScaling) {
        return delta_study(cfg, dir);
    }
    let forcing = cfg.forcing.build()?;
    let window = cfg.resolved_window();
    let grid: Vec<(f64, f64)> = cfg
        .sweep
        .mu
        .iter()
        .flat_map(|&mu| cfg.sweep.delta.iter().map(move |&d| (mu, d)))
        .collect();
    let basis = EigenBasis::new(cfg.theory.modes)?;
    let coeffs = forcing.mode_coeffs(&basis);
    let rows: Vec<SweepRow> = grid
        .par_iter()
        .map(|&(mu, delta)| {
            let fluid = FluidParams { mu, delta, ..cfg.sim.fluid };
            let theory = avg_speed_ve(&coeffs, &fluid, &basis).ok();
            match sweep_point(cfg, &forcing, mu, delta) {
                Ok(d) => SweepRow {
                    mu,
                    delta,
                    status: "ok",
                    dx: Some(d[0]),
                    dy: Some(d[1]),
                    mean_speed: Some(d[0] / (window[1] - window[0])),
                    theory_speed: theory,
                    error: None,
                },
                Err(e) => SweepRow {
                    mu,
                    delta,
                    status: "failed",
                    dx: None,
                    dy: None,
                    mean_speed: None,
                    theory_speed: theory,
                    error: Some(format!("{e:#}")),
                },
            }
        })
        .collect();
    let mut w = csv::Writer::from_writer(dir.create("sweep.csv")?);
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush()?;
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    Ok((
        failed == 0,
        json!({ "points": rows.len(), "failed": failed, "window": window }),
    ))
}

fn delta_study(cfg: &RunConfig, dir: &mut OutDir) -> Result<(bool, Value)> {
    let forcing = cfg.forcing.build()?;
    let mut meta = Vec::new();
    let mut success = true;
    for &mu in &cfg.sweep.mu {
        let base = SimParams {
            fluid: FluidParams { mu, ..cfg.sim.fluid },
            ..cfg.sim
        };
        match delta_scaling_study(&forcing, base, &cfg.sweep.delta) {
            Ok(study) => {
                study.write_csv(dir.create(&format!("delta_study_mu{mu}.csv"))?)?;
                meta.push(json!({ "mu": mu, "status": "ok", "ratios": study.ratios(), "notice": study.notice, "newtonian_dx": study.newtonian_dx }));
            }
            Err(e) => {
                success = false;
                meta.push(json!({ "mu": mu, "status": "failed", "error": e.to_string() }));
            }
        }
    }
    Ok((success, json!({ "delta_study": meta })))
}

fn theory_table(cfg: &RunConfig, dir: &mut OutDir) -> Result<(bool, Value)> {
    let basis = EigenBasis::new(cfg.theory.modes)?;
    let fluid = cfg.sim.fluid;
    let table = SpeedTable::new(&fluid, &basis);
    table.write_csv(&basis, dir.create("w_table.csv")?)?;

    let mut w = dir.create("decay_rates.csv")?;
    writeln!(w, "k,lambda_k,nu_minus,nu_plus")?;
    for pair in basis.pairs() {
        match eigenvalues_for(pair.lambda, &fluid) {
            Ok((m, p)) => writeln!(w, "{},{:e},{m:e},{p:e}", pair.k, pair.lambda)?,
            Err(_) => writeln!(w, "{},{:e},{:e},", pair.k, pair.lambda, -pair.lambda)?,
        }
    }
    w.flush()?;

    let forcing = cfg.forcing.build()?;
    let coeffs = forcing.mode_coeffs(&basis);
    let (ve, nw) = (avg_speed_ve(&coeffs, &fluid, &basis)?, avg_speed_newtonian(&coeffs, &fluid, &basis)?);
    if !cfg.sweep.mu.is_empty() && !cfg.sweep.delta.is_empty() {
        let rows = speed_sweep(&coeffs, &fluid, &basis, &cfg.sweep.mu, &cfg.sweep.delta)?;
        write_sweep_csv(&rows, dir.create("speed_sweep.csv")?)?;
    }
    Ok((true, json!({ "speed": ve, "speed_newtonian": nw, "newtonian": fluid.is_newtonian() })))
}

fn optimize(cfg: &RunConfig, dir: &mut OutDir) -> Result<(bool, Value)> {
    let basis = EigenBasis::new(cfg.theory.modes)?;
    let fluid = cfg.sim.fluid;
    let k = cfg.theory.optimize_modes;
    let best = optimize_forcing(k, &fluid, &basis)?;
    let mut wave = vefil::forcing::ForcingSpec::traveling_wave(2.0 * std::f64::consts::PI)
        .with_omega(fluid.omega)
        .build()?
        .mode_coeffs(&basis);
    wave.a[k..].iter_mut().for_each(|x| *x = 0.0);
    wave.b[k..].iter_mut().for_each(|x| *x = 0.0);
    let wave_speed = avg_speed_ve(&wave.scaled(1.0 / wave.norm()), &fluid, &basis)?;

    let mut w = dir.create("optimum_profiles.csv")?;
    writeln!(w, "s,f1,f2")?;
    for i in 0..=200 {
        let s = i as f64 / 200.0;
        let f1 = basis.reconstruct(&best.coeffs.a, s);
        let f2 = basis.reconstruct(&best.coeffs.b, s);
        writeln!(w, "{s},{f1:e},{f2:e}")?;
    }
    w.flush()?;
    let report = json!({
        "modes": k,
        "speed": best.speed,
        "iterations": best.iterations,
        "a": &best.coeffs.a[..k],
        "b": &best.coeffs.b[..k],
        "unit_traveling_wave_speed": wave_speed,
    });
    dir.write_json("optimum.json", &report)?;
    Ok((true, report))
}

fn validate(cfg: &RunConfig, dir: &mut OutDir) -> Result<(bool, Value)> {
    let validator = Validator::new();
    let print = |r: &CriterionResult| println!("{r}");
    let results: Vec<CriterionResult> = if cfg.validate.criteria.is_empty() {
        validator.run_all(print)
    } else {
        cfg.validate
            .criteria
            .iter()
            .map(|&id| {
                let r = validator.run(id)?;
                print(&r);
                Ok(r)
            })
            .collect::<Result<_>>()?
    };
    let mut w = csv::Writer::from_writer(dir.create("validation.csv")?);
    w.write_record(["id", "name", "passed", "detail"])?;
    for r in &results {
        w.write_record([r.id.to_string(), r.name.to_string(), r.passed.to_string(), r.detail.clone()])?;
    }
    w.flush()?;
    let passed = results.iter().filter(|r| r.passed).count();
    println!("{passed}/{} criteria passed", results.len());
    Ok((
        passed == results.len(),
        json!({ "criteria": results.len(), "passed": passed, "suite_size": COUNT }),
    ))
}

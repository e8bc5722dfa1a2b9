//! End-to-end runs of the simulator checked against theory and self-convergence.

use vefil::basis::EigenBasis;
use vefil::diagnostics::{decay_rate_fit, displacement, periodicity_residual, DecaySignal};
use vefil::forcing::ForcingSpec;
use vefil::sim::{integrate, integrate_with, CurvatureStencil, FilamentState, SimParams, Simulator};
use vefil::theory::FluidParams;

fn newtonian(n: usize) -> SimParams {
    SimParams {
        n,
        fluid: FluidParams { mu: 0.0, ..FluidParams::default() },
        curvature_stencil: CurvatureStencil::Central,
        ..SimParams::default()
    }
}

#[test]
fn newtonian_relaxation_decays_at_the_first_eigenvalue() {
    let basis = EigenBasis::new(2).unwrap();
    let psi = basis.pair(1);
    let forcing = ForcingSpec::none().build().unwrap();
    let mut sim = Simulator::new(newtonian(64), &forcing).unwrap();
    let start = FilamentState::from_curvature(64, |s| 1e-3 * psi.psi(s), |_| 0.0);
    let traj = integrate(&mut sim, &start, 0.01, 2e-4).unwrap();
    let rate = decay_rate_fit(&sim, &traj, DecaySignal::Mode(1), &basis, (0.001, 0.01)).unwrap();
    let lambda = psi.lambda;
    assert!((rate + lambda).abs() < 0.03 * lambda, "rate {rate} vs -{lambda}");
    let energy_rate = decay_rate_fit(&sim, &traj, DecaySignal::Energy, &basis, (0.001, 0.01)).unwrap();
    assert!((energy_rate - 2.0 * rate).abs() < 0.03 * lambda, "energy rate {energy_rate}");
}

#[test]
fn halving_tolerances_barely_moves_the_newtonian_swimmer() {
    let forcing = ForcingSpec::bad_swimmer().build().unwrap();
    let period = forcing.period();
    let runs: Vec<_> = [1.0, 0.5]
        .iter()
        .map(|&f| {
            let base = newtonian(100);
            let params = SimParams { reltol: f * base.reltol, abstol: f * base.abstol, ..base };
            let mut sim = Simulator::new(params, &forcing).unwrap();
            integrate(&mut sim, &FilamentState::straight(100), 2.0, period / 20.0).unwrap()
        })
        .collect();
    let dx: Vec<f64> = runs.iter().map(|t| displacement(t, 0.0, 2.0).unwrap()[0]).collect();
    assert!((dx[0] - dx[1]).abs() < 1e-4, "{dx:?}");

    let window = displacement(&runs[0], 1.0, 2.0).unwrap()[0];
    assert!((window + 0.036).abs() < 1e-3, "displacement over [1, 2]: {window}");
    let residual = periodicity_residual(&runs[0], period).unwrap();
    let late = residual
        .times()
        .iter()
        .zip(residual.values())
        .filter(|(t, _)| **t >= 1.0)
        .fold(0.0f64, |m, (_, v)| m.max(v));
    assert!(late < 1e-3, "periodicity residual after t = 1: {late}");
}

#[test]
fn per_period_displacement_converges_under_grid_refinement() {
    let forcing = ForcingSpec::bad_swimmer().build().unwrap();
    let period = forcing.period();
    // the Newtonian transient decays like exp(-λ₁ t), gone by two periods
    let (t1, t2) = (2.0 * period, 3.0 * period);
    let dx: Vec<f64> = [25, 50, 100]
        .iter()
        .map(|&n| {
            let mut sim = Simulator::new(newtonian(n), &forcing).unwrap();
            let traj = integrate_with(&mut sim, &FilamentState::straight(n), &[t1, t2], |_, _| {}).unwrap();
            displacement(&traj, t1, t2).unwrap()[0]
        })
        .collect();
    let ratio = (dx[2] - dx[1]).abs() / (dx[1] - dx[0]).abs();
    assert!(ratio <= 0.7, "displacements {dx:?}, ratio {ratio}");
}

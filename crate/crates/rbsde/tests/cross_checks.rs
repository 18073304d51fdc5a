//! Cross-module consistency checks: Monte Carlo solvers against the
//! finite-difference oracle beyond the headline value at the root.

use std::sync::Arc;

use rbsde::barrier::{Barrier, BarrierPair, TerminalCondition};
use rbsde::forward::{simulate_paths, SdeSpec};
use rbsde::game::{payoff_estimate, saddle_stopping_times, solve_game_bsde, GameSpec, StrategyProfile};
use rbsde::generator::GeneratorSpec;
use rbsde::grid::TimeGrid;
use rbsde::lsmc::{solve_double_barrier_direct, LsmcConfig, RegressionBasis};
use rbsde::pde::{solve_double_obstacle_vi, PdeConfig, PdeSpec, SpaceGrid};

#[test]
fn stopping_fractions_match_fd_active_region() {
    // Driver f(y) = 2y inflates positive terminal data into the upper
    // barrier U = 2 on an x-dependent region. The fraction of paths whose
    // reflected solution touches U must match the Monte Carlo probability
    // of hitting the finite-difference upper contact region.
    let horizon = 1.0;
    let n = 50;
    let m = 20_000;
    let upper_level = 2.0;
    let sde = SdeSpec::brownian(&[0.0], 1.0).unwrap();
    let ens = simulate_paths(&sde, TimeGrid::new(horizon, n).unwrap(), m, 21).unwrap();
    let gen = GeneratorSpec::new(
        Arc::new(|_, _, y: f64, _: &[f64]| 2.0 * y),
        2.0 * std::f64::consts::E,
        2.0,
        0.0,
    )
    .unwrap();
    let xi = TerminalCondition::new(Arc::new(|x: &[f64]| x[0].clamp(-1.0, 1.0)));
    let barriers = BarrierPair::new(Barrier::constant(-3.0), Barrier::constant(upper_level));
    let basis = RegressionBasis::bins(50, -4.0, 4.0).unwrap();
    let sol =
        solve_double_barrier_direct(&gen, &xi, &barriers, &ens, &basis, &LsmcConfig::default())
            .unwrap();

    let tol_hit = 1e-6 * (upper_level + 3.0);
    let stops = saddle_stopping_times(&sol.quad, &barriers, &ens, tol_hit);
    let frac_lsmc =
        stops.tau.iter().filter(|&&t| t < n).count() as f64 / m as f64;

    let spec = PdeSpec::brownian(
        Arc::new(|_, _, y, _| 2.0 * y),
        Arc::new(|_, _| -3.0),
        Arc::new(move |_, _| upper_level),
        Arc::new(|x: f64| x.clamp(-1.0, 1.0)),
    );
    let time = TimeGrid::new(horizon, 100).unwrap();
    let space = SpaceGrid::new(-6.0, 6.0, 401).unwrap();
    let fd = solve_double_obstacle_vi(&spec, &time, &space, &PdeConfig::default()).unwrap();

    // First grid node whose state falls in the FD upper contact region.
    let contact_tol = 1e-6;
    let mut hits = 0usize;
    for p in 0..m {
        for i in 0..n {
            let t = ens.grid().node(i);
            let ti = ((t / horizon) * time.steps() as f64).round() as usize;
            let u = fd.u.interpolate(ti, ens.state(p, i)[0]);
            if u >= upper_level - contact_tol {
                hits += 1;
                break;
            }
        }
    }
    let frac_fd = hits as f64 / m as f64;

    assert!(frac_lsmc > 0.03 && frac_lsmc < 0.97, "degenerate test: {frac_lsmc}");
    assert!(
        (frac_lsmc - frac_fd).abs() <= 0.05,
        "lsmc fraction {frac_lsmc} vs fd fraction {frac_fd}"
    );
}

#[test]
fn game_value_matches_fd_oracle_for_saddle_driver() {
    // phi = 0.3u + 0.6v, h = -u^2 + v^2 on {-1,0,1} has the separable
    // saddle driver H*(z) = 0.3|z|; the finite-difference double-obstacle
    // solve with the same driver is the oracle for the game value.
    let spec = GameSpec {
        sde: SdeSpec::brownian(&[0.0], 1.0).unwrap(),
        phi: Arc::new(|_, _, u, v| vec![0.3 * u + 0.6 * v]),
        h_run: Arc::new(|_, _, u, v| -u * u + v * v),
        u_grid: vec![-1.0, 0.0, 1.0],
        v_grid: vec![-1.0, 0.0, 1.0],
        barriers: BarrierPair::new(Barrier::constant(-1.0), Barrier::constant(1.0)),
        terminal: TerminalCondition::new(Arc::new(|x: &[f64]| x[0].clamp(-1.0, 1.0))),
        growth_k: 10.0,
    };
    let ens = simulate_paths(&spec.sde, TimeGrid::new(1.0, 50).unwrap(), 20_000, 31).unwrap();
    let basis = RegressionBasis::bins(50, -4.0, 4.0).unwrap();
    let sol = solve_game_bsde(&spec, &ens, &basis, &LsmcConfig::default()).unwrap();

    let pde = PdeSpec::brownian(
        Arc::new(|_, _, _, q: f64| 0.3 * q.abs()),
        Arc::new(|_, _| -1.0),
        Arc::new(|_, _| 1.0),
        Arc::new(|x: f64| x.clamp(-1.0, 1.0)),
    );
    let time = TimeGrid::new(1.0, 200).unwrap();
    let space = SpaceGrid::new(-6.0, 6.0, 801).unwrap();
    let fd = solve_double_obstacle_vi(&pde, &time, &space, &PdeConfig::default()).unwrap();
    let u00 = fd.u.interpolate(0, 0.0);

    let gap = (sol.bsde.y0 - u00).abs();
    assert!(gap <= 0.05, "game y0 {} vs fd {u00}", sol.bsde.y0);
}

#[test]
fn early_stopping_in_the_interior_strictly_loses_value() {
    // Control-free stopping game with positive-mean terminal data: the
    // maximizer stopping immediately while Y > L forfeits the terminal
    // reward, so the payoff drops well beyond the noise level.
    let spec = GameSpec {
        sde: SdeSpec::brownian(&[0.0], 1.0).unwrap(),
        phi: Arc::new(|_, _, _, _| vec![0.0]),
        h_run: Arc::new(|_, _, _, _| 0.0),
        u_grid: vec![0.0],
        v_grid: vec![0.0],
        barriers: BarrierPair::new(Barrier::constant(-0.2), Barrier::constant(1.5)),
        terminal: TerminalCondition::new(Arc::new(|x: &[f64]| x[0].clamp(-0.2, 1.0))),
        growth_k: 10.0,
    };
    let n = 25;
    let m = 10_000;
    let ens = simulate_paths(&spec.sde, TimeGrid::new(1.0, n).unwrap(), m, 41).unwrap();
    let basis = RegressionBasis::bins(40, -4.0, 4.0).unwrap();
    let sol = solve_game_bsde(&spec, &ens, &basis, &LsmcConfig::default()).unwrap();
    let stops = saddle_stopping_times(&sol.bsde.quad, &spec.barriers, &ens, 1e-9);
    let star = StrategyProfile::from_solution(&sol, &stops);
    let j_star = payoff_estimate(&spec, &ens, &star).unwrap();

    let early = StrategyProfile { sigma: vec![0; m], ..star };
    let j_early = payoff_estimate(&spec, &ens, &early).unwrap();
    assert!(
        j_early.j < j_star.j - 3.0 * (j_early.se + j_star.se),
        "early stop did not lose value: {} vs {}",
        j_early.j,
        j_star.j
    );
}

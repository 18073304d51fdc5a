//! Scenario runners: each builds its ingredients from the resolved config,
//! solves, emits artifacts, and evaluates the scenario's assertions.

use std::error::Error;
use std::path::Path;
use std::sync::Arc;

use rbsde::barrier::{Barrier, BarrierPair};
use rbsde::forward::{simulate_paths, PathEnsemble, SdeSpec};
use rbsde::game::{
    saddle_stopping_times, solve_game_bsde, verify_saddle, GameSpec, PerturbationSide,
    StrategyProfile,
};
use rbsde::grid::TimeGrid;
use rbsde::lsmc::{
    check_skorokhod, solve_bsde, solve_double_barrier_direct, solve_double_barrier_penalized,
    solve_one_barrier_penalized, Direction, LsmcConfig, PenalizationSchedule, PenalizedLevel,
    RegressionBasis,
};
use rbsde::pde::{
    classify_active_set, solve_double_obstacle_vi, solve_one_obstacle_vi, check_sandwich,
    PdeConfig, PdeSolution, PdeSpec, SpaceGrid,
};
use rbsde::registry;
use rbsde::seedstream::substream_seed;

use crate::config::{ResolvedConfig, Scenario};
use crate::report::{fmt, write_csv, Check, Summary};

pub type RunResult = Result<Summary, Box<dyn Error>>;

fn x0_of(cfg: &ResolvedConfig) -> f64 {
    cfg.sde.params.get("x0").copied().unwrap_or(0.0)
}

fn build_sde(cfg: &ResolvedConfig) -> Result<SdeSpec, rbsde::Error> {
    registry::sde(&cfg.sde.name, cfg.sde.params.clone())
}

fn build_ensemble(cfg: &ResolvedConfig, sde: &SdeSpec) -> Result<PathEnsemble, rbsde::Error> {
    let grid = TimeGrid::new(cfg.horizon, cfg.steps)?;
    simulate_paths(sde, grid, cfg.paths, cfg.seed)
}

fn build_barriers(cfg: &ResolvedConfig) -> Result<BarrierPair, rbsde::Error> {
    let lower = registry::barrier(
        registry::BarrierSide::Lower,
        &cfg.barriers.lower,
        cfg.barriers.lower_params.clone(),
    )?;
    let upper = registry::barrier(
        registry::BarrierSide::Upper,
        &cfg.barriers.upper,
        cfg.barriers.upper_params.clone(),
    )?;
    Ok(BarrierPair::new(lower, upper))
}

fn build_basis(cfg: &ResolvedConfig) -> Result<RegressionBasis, rbsde::Error> {
    let x0 = x0_of(cfg);
    let clip_lo = cfg.basis.clip_lo.unwrap_or(x0 - cfg.space_radius);
    let clip_hi = cfg.basis.clip_hi.unwrap_or(x0 + cfg.space_radius);
    match cfg.basis.family.as_deref().unwrap_or("polynomial") {
        "polynomial" => {
            RegressionBasis::polynomial(cfg.basis.degree.unwrap_or(3), clip_lo, clip_hi)
        }
        "bins" => RegressionBasis::bins(cfg.basis.count.unwrap_or(32), clip_lo, clip_hi),
        other => Err(rbsde::Error::InvalidParam(format!(
            "basis.family: expected 'polynomial' or 'bins', got '{other}'"
        ))),
    }
}

fn schedule(cfg: &ResolvedConfig) -> Result<PenalizationSchedule, rbsde::Error> {
    match &cfg.penalty.levels {
        Some(levels) => PenalizationSchedule::new(levels.clone()),
        None => Ok(PenalizationSchedule::powers_of_two(
            cfg.penalty.max_exponent.unwrap_or(10),
        )),
    }
}

/// Barrier registry entries as (t, x) obstacle maps for the FD solvers.
fn obstacle_from(b: Barrier) -> rbsde::pde::ObstacleFn {
    Arc::new(move |t, x| b.eval(t, &[x]))
}

fn build_pde_spec(cfg: &ResolvedConfig) -> Result<(PdeSpec, SpaceGrid), Box<dyn Error>> {
    let sde = build_sde(cfg)?;
    let driver = registry::pde_driver(&cfg.generator.name, cfg.generator.params.clone())?;
    let pair = build_barriers(cfg)?;
    let terminal = registry::terminal(&cfg.terminal.name, cfg.terminal.params.clone())?;
    let x0 = x0_of(cfg);
    let space = SpaceGrid::new(x0 - cfg.space_radius, x0 + cfg.space_radius, cfg.space_nodes)?;
    let drift = sde.drift.clone();
    let vol = sde.vol.clone();
    let spec = PdeSpec {
        drift: Arc::new(move |t, x| drift(t, &[x], x.abs())[0]),
        vol: Arc::new(move |t, x| vol(t, &[x], x.abs())[0]),
        driver,
        lower: obstacle_from(pair.lower),
        upper: obstacle_from(pair.upper),
        terminal: Arc::new(move |x| terminal.eval(&[x])),
    };
    Ok((spec, space))
}

pub fn run(cfg: &ResolvedConfig, quiet: bool) -> RunResult {
    let summary = match cfg.scenario {
        Scenario::Bsde => run_bsde(cfg)?,
        Scenario::DoubleBarrier => run_double_barrier(cfg)?,
        Scenario::Penalized => run_penalized(cfg)?,
        Scenario::Pde => run_pde(cfg)?,
        Scenario::CrossValidate => run_cross_validate(cfg)?,
        Scenario::Game => run_game(cfg)?,
    };
    if !quiet {
        for c in &summary.checks {
            println!(
                "check {}: {} (value={:.6e}, threshold={:.6e})",
                c.name,
                if c.pass { "PASS" } else { "FAIL" },
                c.value,
                c.threshold
            );
        }
        println!(
            "scenario {}: {}",
            summary.scenario,
            if summary.pass { "PASS" } else { "FAIL" }
        );
    }
    Ok(summary)
}

fn run_bsde(cfg: &ResolvedConfig) -> RunResult {
    let sde = build_sde(cfg)?;
    let ens = build_ensemble(cfg, &sde)?;
    let gen = registry::generator(&cfg.generator.name, cfg.generator.params.clone())?;
    let xi = registry::terminal(&cfg.terminal.name, cfg.terminal.params.clone())?;
    let basis = build_basis(cfg)?;
    let sol = solve_bsde(&gen, &xi, &ens, &basis, &LsmcConfig::default())?;

    let mut summary = Summary::new(&cfg.scenario_name, cfg.seed, &["bsde_backward_recursion"]);
    summary.record("y0", sol.y0);
    summary.record("y0_se", sol.y0_se);
    summary.record("ridge_events", sol.ridge_events);
    if let (Some(target), tol) = (cfg.tolerances.target_y0, cfg.tolerances.y0.unwrap_or(5e-3)) {
        summary.record("target_y0", target);
        summary.check(Check::le("y0_matches_target", (sol.y0 - target).abs(), tol));
    }
    summary.write(Path::new(&cfg.out_dir))?;
    Ok(summary)
}

fn run_double_barrier(cfg: &ResolvedConfig) -> RunResult {
    let sde = build_sde(cfg)?;
    let ens = build_ensemble(cfg, &sde)?;
    let gen = registry::generator(&cfg.generator.name, cfg.generator.params.clone())?;
    let xi = registry::terminal(&cfg.terminal.name, cfg.terminal.params.clone())?;
    let barriers = build_barriers(cfg)?;
    let basis = build_basis(cfg)?;
    let sol = solve_double_barrier_direct(&gen, &xi, &barriers, &ens, &basis, &LsmcConfig::default())?;

    let tol = cfg.tolerances.skorokhod.unwrap_or(1e-8);
    let report = check_skorokhod(&sol.quad, &barriers, &ens, tol);
    let sandwich = sol.quad.validate(&barriers, &xi, &ens, 1e-12).is_ok();

    let out = Path::new(&cfg.out_dir);
    let rows = report.per_path.iter().enumerate().map(|(m, p)| {
        format!(
            "{m},{},{},{}",
            fmt(p.lower_residual),
            fmt(p.upper_residual),
            fmt(p.k_total)
        )
    });
    let csv = write_csv(out, "skorokhod.csv", "path,lower_residual,upper_residual,k_total", rows)?;

    let mut summary = Summary::new(
        &cfg.scenario_name,
        cfg.seed,
        &["direct_projection_flat_off", "solution_sandwich"],
    );
    summary.record("y0", sol.y0);
    summary.record("y0_se", sol.y0_se);
    summary.record("max_skorokhod_residual", report.max_residual());
    summary.artifacts.push(csv.display().to_string());
    summary.check(Check::flag("skorokhod_flat_off", report.is_pass()));
    summary.check(Check::flag("sandwich_and_terminal", sandwich));
    summary.write(out)?;
    Ok(summary)
}

fn penalized_csv(out: &Path, levels: &[PenalizedLevel]) -> std::io::Result<std::path::PathBuf> {
    let rows = levels.iter().map(|lv| {
        format!(
            "{},{},{},{},{},{},{}",
            fmt(lv.level),
            fmt(lv.solution.y0),
            fmt(lv.solution.y0_se),
            fmt(lv.sup_residual_lower),
            fmt(lv.sup_residual_upper),
            fmt(lv.kplus_t_mean),
            fmt(lv.kminus_t_mean)
        )
    });
    write_csv(
        out,
        "penalization.csv",
        "n,Y0,SE,sup_residual_lower,sup_residual_upper,Kplus_T_mean,Kminus_T_mean",
        rows,
    )
}

fn run_penalized(cfg: &ResolvedConfig) -> RunResult {
    let sde = build_sde(cfg)?;
    let ens = build_ensemble(cfg, &sde)?;
    let gen = registry::generator(&cfg.generator.name, cfg.generator.params.clone())?;
    let xi = registry::terminal(&cfg.terminal.name, cfg.terminal.params.clone())?;
    let barriers = build_barriers(cfg)?;
    let basis = build_basis(cfg)?;
    let sched = schedule(cfg)?;
    let lsmc_cfg = LsmcConfig::default();

    let one_sided = cfg.barriers.upper == "none";
    let direction = match cfg.penalty.direction.as_deref() {
        Some("decreasing") => Direction::Decreasing,
        _ => Direction::Increasing,
    };
    let levels = if one_sided {
        solve_one_barrier_penalized(&gen, &xi, &barriers.lower, &ens, &basis, &sched, &lsmc_cfg)?
    } else {
        solve_double_barrier_penalized(
            &gen, &xi, &barriers, &ens, &basis, &sched, direction, &lsmc_cfg,
        )?
    };

    let out = Path::new(&cfg.out_dir);
    let csv = penalized_csv(out, &levels)?;

    // Monotonicity of Y0 along the schedule within Monte Carlo noise, and
    // decay of the penalized-side residual.
    let increasing = one_sided || direction == Direction::Increasing;
    let mut monotone_violations = 0usize;
    for w in levels.windows(2) {
        let slack = 3.0 * (w[0].solution.y0_se + w[1].solution.y0_se);
        let bad = if increasing {
            w[1].solution.y0 < w[0].solution.y0 - slack
        } else {
            w[1].solution.y0 > w[0].solution.y0 + slack
        };
        if bad {
            monotone_violations += 1;
        }
    }
    let last = levels.last().expect("nonempty schedule");
    let final_residual = if increasing {
        last.sup_residual_lower
    } else {
        last.sup_residual_upper
    };

    let mut summary = Summary::new(
        &cfg.scenario_name,
        cfg.seed,
        &["penalization_monotone_convergence", "penalty_residual_decay"],
    );
    summary.record("y0_final", last.solution.y0);
    summary.record("y0_se_final", last.solution.y0_se);
    summary.record("levels", levels.iter().map(|l| l.level).collect::<Vec<_>>());
    summary.record("final_residual", final_residual);
    summary.artifacts.push(csv.display().to_string());
    summary.check(Check::le(
        "monotone_violations",
        monotone_violations as f64,
        0.0,
    ));
    summary.check(Check::le(
        "final_sup_residual",
        final_residual,
        cfg.tolerances.sup_residual.unwrap_or(0.02),
    ));
    summary.write(out)?;
    Ok(summary)
}

fn dump_value_function(
    out: &Path,
    spec: &PdeSpec,
    sol: &PdeSolution,
) -> std::io::Result<std::path::PathBuf> {
    let active = classify_active_set(spec, &sol.u, 1e-9);
    let mut rows = Vec::new();
    for i in 0..=sol.u.time.steps() {
        let t = sol.u.time.node(i);
        for j in 0..sol.u.space.nx() {
            let x = sol.u.space.node(j);
            rows.push(format!(
                "{},{},{},{},{},{}",
                fmt(t),
                fmt(x),
                fmt(sol.u.values[i][j]),
                fmt((spec.lower)(t, x)),
                fmt((spec.upper)(t, x)),
                active[i][j].label()
            ));
        }
    }
    write_csv(out, "value_function.csv", "t,x,u,h,hprime,active_set", rows)
}

fn solve_pde_scenario(cfg: &ResolvedConfig) -> Result<(PdeSpec, SpaceGrid, PdeSolution), Box<dyn Error>> {
    let (spec, space) = build_pde_spec(cfg)?;
    let time = TimeGrid::new(cfg.horizon, cfg.steps)?;
    let pde_cfg = PdeConfig { theta: cfg.theta, ..PdeConfig::default() };
    let one_sided = cfg.barriers.upper == "none";
    let sol = if one_sided {
        solve_one_obstacle_vi(&spec, &time, &space, &pde_cfg)?
    } else {
        solve_double_obstacle_vi(&spec, &time, &space, &pde_cfg)?
    };
    Ok((spec, space, sol))
}

fn run_pde(cfg: &ResolvedConfig) -> RunResult {
    let (spec, space, sol) = solve_pde_scenario(cfg)?;
    let out = Path::new(&cfg.out_dir);
    let csv = dump_value_function(out, &spec, &sol)?;

    let u00 = sol.u.values[0][space.nearest(x0_of(cfg))];
    let mut summary = Summary::new(
        &cfg.scenario_name,
        cfg.seed,
        &["obstacle_vi_complementarity", "obstacle_sandwich"],
    );
    summary.record("u00", u00);
    summary.record("max_complementarity", sol.max_complementarity);
    summary.record("max_relax_iters", sol.max_relax_iters_used);
    summary.artifacts.push(csv.display().to_string());
    summary.check(Check::flag("sandwich", check_sandwich(&spec, &sol.u, 1e-10)));
    summary.check(Check::le(
        "complementarity",
        sol.max_complementarity,
        cfg.tolerances.complementarity.unwrap_or(1e-6),
    ));
    summary.write(out)?;
    Ok(summary)
}

fn run_cross_validate(cfg: &ResolvedConfig) -> RunResult {
    // Monte Carlo side.
    let sde = build_sde(cfg)?;
    let ens = build_ensemble(cfg, &sde)?;
    let gen = registry::generator(&cfg.generator.name, cfg.generator.params.clone())?;
    let xi = registry::terminal(&cfg.terminal.name, cfg.terminal.params.clone())?;
    let barriers = build_barriers(cfg)?;
    let basis = build_basis(cfg)?;
    let lsmc = solve_double_barrier_direct(&gen, &xi, &barriers, &ens, &basis, &LsmcConfig::default())?;

    // Deterministic oracle side.
    let (spec, _space, pde_sol) = solve_pde_scenario(cfg)?;
    let u00 = pde_sol.u.interpolate(0, x0_of(cfg));

    let out = Path::new(&cfg.out_dir);
    let csv = dump_value_function(out, &spec, &pde_sol)?;
    let gap = (lsmc.y0 - u00).abs();

    let mut summary = Summary::new(
        &cfg.scenario_name,
        cfg.seed,
        &["bsde_pde_cross_validation"],
    );
    summary.record("y0_lsmc", lsmc.y0);
    summary.record("y0_se", lsmc.y0_se);
    summary.record("u00_fd", u00);
    summary.record("gap", gap);
    summary.artifacts.push(csv.display().to_string());
    summary.check(Check::le(
        "lsmc_fd_gap",
        gap,
        cfg.tolerances.cross_validation.unwrap_or(0.03),
    ));
    summary.write(out)?;
    Ok(summary)
}

fn build_game_spec(cfg: &ResolvedConfig) -> Result<GameSpec, Box<dyn Error>> {
    let game = cfg.game.as_ref().expect("validated by resolve");
    let sde = build_sde(cfg)?;
    let barriers = build_barriers(cfg)?;
    let terminal = registry::terminal(&cfg.terminal.name, cfg.terminal.params.clone())?;
    let phi = registry::game_drift(&game.phi, game.phi_params.clone())?;
    let h_run = registry::game_reward(&game.h_run, game.h_run_params.clone())?;
    Ok(GameSpec {
        sde,
        phi,
        h_run,
        u_grid: game.u_grid.clone(),
        v_grid: game.v_grid.clone(),
        barriers,
        terminal,
        growth_k: game.growth_k.unwrap_or(10.0),
    })
}

fn run_game(cfg: &ResolvedConfig) -> RunResult {
    let game_cfg = cfg.game.as_ref().expect("validated by resolve");
    let spec = build_game_spec(cfg)?;
    let ens = build_ensemble(cfg, &spec.sde)?;
    let basis = build_basis(cfg)?;
    let sol = solve_game_bsde(&spec, &ens, &basis, &LsmcConfig::default())?;

    let x0 = x0_of(cfg);
    let lo0 = spec.barriers.lower.eval(0.0, &[x0]);
    let up0 = spec.barriers.upper.eval(0.0, &[x0]);
    let band = if lo0.is_finite() && up0.is_finite() { up0 - lo0 } else { 1.0 };
    let tol_hit = game_cfg.tol_hit.unwrap_or(1e-6 * band);

    let stops = saddle_stopping_times(&sol.bsde.quad, &spec.barriers, &ens, tol_hit);
    let star = StrategyProfile::from_solution(&sol, &stops);
    star.validate(&spec, cfg.steps)?;
    let perturbations = game_cfg.perturbations.unwrap_or(10);
    let report = verify_saddle(
        &spec,
        &ens,
        &sol,
        &star,
        perturbations,
        substream_seed(cfg.seed, "saddle"),
    )?;

    let mut tau_hist = vec![0usize; cfg.steps + 1];
    let mut sigma_hist = vec![0usize; cfg.steps + 1];
    for &t in &stops.tau {
        tau_hist[t] += 1;
    }
    for &s in &stops.sigma {
        sigma_hist[s] += 1;
    }

    let out = Path::new(&cfg.out_dir);
    let game_report = serde_json::json!({
        "Y0": sol.bsde.y0,
        "J_star": report.j_star.j,
        "SE": report.j_star.se,
        "isaacs_gap_max": sol.isaacs_gap_max,
        "violations_lower": report.violations_maximizer,
        "violations_upper": report.violations_minimizer,
        "tau_hist": tau_hist,
        "sigma_hist": sigma_hist,
    });
    std::fs::create_dir_all(out)?;
    let report_path = out.join("game_report.json");
    std::fs::write(
        &report_path,
        serde_json::to_string_pretty(&game_report)? + "\n",
    )?;

    let y0_gap_tol = 3.0 * report.j_star.se + cfg.tolerances.saddle_y0_gap.unwrap_or(0.03);
    let mut summary = Summary::new(
        &cfg.scenario_name,
        cfg.seed,
        &["saddle_inequalities", "value_matches_payoff", "isaacs_gap"],
    );
    summary.record("y0", sol.bsde.y0);
    summary.record("j_star", report.j_star.j);
    summary.record("j_star_se", report.j_star.se);
    summary.record("y0_gap", report.y0_gap);
    summary.record("isaacs_gap_max", sol.isaacs_gap_max);
    summary.record(
        "perturbation_payoffs",
        report
            .trials
            .iter()
            .map(|t| {
                serde_json::json!({
                    "side": match t.side {
                        PerturbationSide::Maximizer => "maximizer",
                        PerturbationSide::Minimizer => "minimizer",
                    },
                    "j": t.payoff.j,
                    "se": t.payoff.se,
                    "violation": t.violation,
                })
            })
            .collect::<Vec<_>>(),
    );
    summary.artifacts.push(report_path.display().to_string());
    summary.check(Check::le(
        "saddle_violations_maximizer",
        report.violations_maximizer as f64,
        0.0,
    ));
    summary.check(Check::le(
        "saddle_violations_minimizer",
        report.violations_minimizer as f64,
        0.0,
    ));
    summary.check(Check::le("y0_payoff_gap", report.y0_gap, y0_gap_tol));
    summary.write(out)?;
    Ok(summary)
}

mod common;

use common::*;
use swgame::discretization::{LevyQuadrature, SpatialGrid, ValueField};
use swgame::model::ProblemSpec;
use swgame::solver::*;
use swgame::{Error, Exec};

fn scalar(drift: &str, vol: &str, atoms: &str, driver: &str, terminal: &str) -> ProblemSpec {
    ProblemSpec::from_json(&format!(
        r#"{{"modes": {{"m1": 1, "m2": 1}}, "horizon": 1.0, "drift": "{drift}", "volatility": [["{vol}"]],
            "jump_amplitude": "e", "jump_weights": [["1"]], "drivers": [["{driver}"]],
            "terminal": [["{terminal}"]], "levy": {{"atoms": {atoms}}}, "growth": {{"c": 1, "exponent": 1}}}}"#
    ))
    .unwrap()
}

#[test]
fn constant_driver_gives_linear_decay() {
    let s = scalar("0", "0", "[]", "0.75", "0");
    let g = grids(&s, -1.0, 1.0, 11, 40);
    let (traj, _) = solve_penalized(&s, &g, &quadrature(&s), 0.0, 0.0, &SchemeConfig::default()).unwrap();
    for f in &traj.levels {
        for v in &f.values[0] {
            assert!((v - 0.75 * (1.0 - f.t)).abs() < 1e-12);
        }
    }
}

#[test]
fn compensated_jumps_preserve_affine_data() {
    let s = scalar("0", "0", r#"[{"mark": 1.0, "weight": 1.0}, {"mark": -1.0, "weight": 1.0}]"#, "0", "x");
    let g = grids(&s, -4.0, 4.0, 33, 20);
    let (traj, _) = solve_penalized(&s, &g, &quadrature(&s), 0.0, 0.0, &SchemeConfig::default()).unwrap();
    for f in &traj.levels {
        for (node, v) in f.values[0].iter().enumerate() {
            assert!((v - g.space.coord(0, node)).abs() < 1e-10);
        }
    }
}

#[test]
fn cfl_violation_is_rejected_before_stepping() {
    let s = problem("switching_2x2");
    let g = grids(&s, -3.0, 3.0, 101, 5);
    let q = quadrature(&s);
    let cfg = SchemeConfig::default();
    assert!(matches!(solve_penalized(&s, &g, &q, 1.0, 1.0, &cfg), Err(Error::Cfl { .. })));
    let next = ValueField::zeros(g.time.t(5), s.modes, g.space.len());
    assert!(matches!(step_penalized(&s, &g, &q, &next, 4, 1.0, 1.0, &cfg), Err(Error::Cfl { .. })));
}

#[test]
fn imex_lifts_the_diffusion_restriction() {
    let s = problem("no_jump_1d");
    let g = grids(&s, -3.0, 3.0, 201, 25);
    let q = quadrature(&s);
    assert!(matches!(
        solve_penalized(&s, &g, &q, 1.0, 1.0, &SchemeConfig::default()),
        Err(Error::Cfl { .. })
    ));
    let cfg = SchemeConfig {
        stepping: Stepping::Imex,
        ..Default::default()
    };
    let (traj, report) = solve_penalized(&s, &g, &q, 1.0, 1.0, &cfg).unwrap();
    assert!(traj.levels.iter().all(ValueField::is_finite));
    assert!(report.cfl.unwrap().diffusion == 0.0);
}

#[test]
fn terminal_level_is_the_payoff_bitwise() {
    for name in SHIPPED {
        let s = problem(name);
        let g = smoke_grids(&s);
        let (traj, _) = solve_penalized(&s, &g, &quadrature(&s), 2.0, 2.0, &SchemeConfig::default()).unwrap();
        let last = traj.terminal();
        assert_eq!(last.t, s.horizon);
        for (i, j) in s.modes.pairs() {
            for node in 0..g.space.len() {
                let h = s.terminal(i, j, &g.space.node_point(node)).unwrap();
                assert_eq!(last.surface(i, j)[node].to_bits(), h.to_bits());
            }
        }
    }
}

#[test]
fn penalized_solutions_are_monotone_in_each_penalty() {
    let s = problem("switching_2x2");
    let g = smoke_grids(&s);
    let q = quadrature(&s);
    let cfg = SchemeConfig::default();
    let solve = |n: f64, m: f64| solve_penalized(&s, &g, &q, n, m, &cfg).unwrap().0;
    let (a, b) = (solve(1.0, 2.0), solve(2.0, 2.0));
    assert!(a.max_excess_over(&b) <= 1e-10);
    let (c, d) = (solve(2.0, 1.0), solve(2.0, 2.0));
    assert!(d.max_excess_over(&c) <= 1e-10);
}

#[test]
fn reflected_solutions_bracket_the_penalized_ones() {
    let s = problem("switching_2x2");
    let g = smoke_grids(&s);
    let q = quadrature(&s);
    let cfg = SchemeConfig::default();
    let (upper_bar, rep) = solve_lower_reflected(&s, &g, &q, 4.0, &cfg).unwrap();
    assert!(rep.max_lower_violation() <= 1e-10);
    let (lower_bar, rep) = solve_upper_reflected(&s, &g, &q, 4.0, &cfg).unwrap();
    assert!(rep.max_upper_violation() <= 1e-10);
    for n in [1.0, 2.0, 4.0, 8.0] {
        let (v, _) = solve_penalized(&s, &g, &q, n, 4.0, &cfg).unwrap();
        assert!(v.max_excess_over(&upper_bar) <= 1e-10, "n = {n}");
        let (v, _) = solve_penalized(&s, &g, &q, 4.0, n, &cfg).unwrap();
        assert!(lower_bar.max_excess_over(&v) <= 1e-10, "m = {n}");
    }
}

#[test]
fn upper_reflection_is_the_negated_lower_reflection() {
    let s = problem("switching_2x2");
    let g = smoke_grids(&s);
    let q = quadrature(&s);
    let cfg = SchemeConfig::default();
    let (up, _) = solve_upper_reflected(&s, &g, &q, 3.0, &cfg).unwrap();
    let (low, _) = solve_lower_reflected(&s.negated(), &g, &q, 3.0, &cfg).unwrap();
    assert!(up.max_abs_diff(&low.negated_transpose()) <= 1e-12);
}

#[test]
fn single_modes_reduce_to_the_penalized_solve() {
    let s = scalar("0.1*x", "0.2", r#"[{"mark": 0.3, "weight": 1.0}]"#, "0.1*abs(x) - 0.2*y", "x*x");
    let g = grids(&s, -2.0, 2.0, 41, 30);
    let q = quadrature(&s);
    let cfg = SchemeConfig::default();
    let (pen, _) = solve_penalized(&s, &g, &q, 0.0, 0.0, &cfg).unwrap();
    let (mm, _) = solve_minmax(&s, &g, &q, SolveMode::Direct, &cfg).unwrap();
    let (xm, _) = solve_maxmin(&s, &g, &q, SolveMode::Direct, &cfg).unwrap();
    assert_eq!(pen, mm);
    assert_eq!(pen, xm);
}

#[test]
fn no_upper_obstacle_makes_both_orders_agree() {
    let s = problem("two_atom_jump_1d");
    assert_eq!(s.modes.m2, 1);
    let g = smoke_grids(&s);
    let q = quadrature(&s);
    let cfg = SchemeConfig::default();
    let (mm, _) = solve_minmax(&s, &g, &q, SolveMode::Direct, &cfg).unwrap();
    let (xm, _) = solve_maxmin(&s, &g, &q, SolveMode::Direct, &cfg).unwrap();
    assert_eq!(mm, xm);
}

#[test]
fn bilateral_solutions_are_ordered_and_consistent() {
    for name in SHIPPED {
        let s = problem(name);
        let g = smoke_grids(&s);
        let q = quadrature(&s);
        let cfg = SchemeConfig::default();
        let (mm, mm_rep) = solve_minmax(&s, &g, &q, SolveMode::Direct, &cfg).unwrap();
        let (xm, xm_rep) = solve_maxmin(&s, &g, &q, SolveMode::Direct, &cfg).unwrap();
        assert!(xm.max_excess_over(&mm) <= 1e-8, "{name}");
        assert!(mm_rep.max_residual() <= 1e-8 && xm_rep.max_residual() <= 1e-8, "{name}");
        assert!(mm_rep.max_lower_violation() <= 1e-10, "{name}");
        assert!(xm_rep.max_upper_violation() <= 1e-10, "{name}");
        let again = residual_report(&mm, &s, &g, &q, System::MinMax, &cfg).unwrap();
        assert!(again.max_residual() <= 1e-8);
        assert_eq!(again.residuals[g.time.steps()], 0.0);
    }
}

#[test]
fn perturbing_one_node_shows_in_the_residual() {
    let s = problem("switching_2x2");
    let g = smoke_grids(&s);
    let q = quadrature(&s);
    let cfg = SchemeConfig::default();
    for system in [System::MinMax, System::Penalized { n: 2.0, m: 2.0 }] {
        let (mut traj, _) = match system {
            System::MinMax => solve_minmax(&s, &g, &q, SolveMode::Direct, &cfg).unwrap(),
            _ => solve_penalized(&s, &g, &q, 2.0, 2.0, &cfg).unwrap(),
        };
        traj.levels[10].values[0][50] += 1.0;
        let rep = residual_report(&traj, &s, &g, &q, system, &cfg).unwrap();
        assert!(rep.residuals[10] > 0.1, "{system:?}: {}", rep.residuals[10]);
    }
}

#[test]
fn limit_and_direct_modes_agree() {
    let s = problem("switching_2x2");
    let space = SpatialGrid::uniform_1d(-3.0, 3.0, 61).unwrap();
    let q = quadrature(&s);
    let cfg = SchemeConfig {
        strict_schedule: false,
        ..Default::default()
    };
    let time = auto_time_grid(&s, &space, &q, 0.0, 256.0, &cfg, 20).unwrap();
    let g = Grids::new(space, time);
    let (lim, rep) = solve_minmax(&s, &g, &q, SolveMode::Limit, &cfg).unwrap();
    let (dir, _) = solve_minmax(&s, &g, &q, SolveMode::Direct, &cfg).unwrap();
    let sched = rep.schedule.unwrap();
    assert_eq!(sched.ordering_violation, 0.0);
    let last_gap = *sched.gaps.last().unwrap();
    assert!(lim.max_abs_diff(&dir) <= 2.0 * last_gap, "{} vs {last_gap}", lim.max_abs_diff(&dir));

    let strict = SchemeConfig::default();
    match solve_minmax(&s, &g, &q, SolveMode::Limit, &strict) {
        Err(Error::ScheduleNonConvergence { last_gaps, .. }) => assert_eq!(last_gaps.len(), 2),
        other => panic!("expected a schedule error, got {:?}", other.map(|r| r.1)),
    }
}

#[test]
fn terminal_inconsistency_needs_the_override() {
    let s = problem("no_jump_1d");
    let mut bad = s.clone();
    bad.terminal[0] = swgame::expr::parse("x + 1", &swgame::model::terminal_schema(1)).unwrap();
    let g = smoke_grids(&s);
    let q = quadrature(&s);
    match solve_minmax(&bad, &g, &q, SolveMode::Direct, &SchemeConfig::default()) {
        Err(Error::TerminalInconsistent { magnitude }) => assert!(magnitude > 0.5),
        other => panic!("expected rejection, got {:?}", other.map(|r| r.1)),
    }
    let cfg = SchemeConfig {
        override_a4: true,
        ..Default::default()
    };
    let (_, rep) = solve_minmax(&bad, &g, &q, SolveMode::Direct, &cfg).unwrap();
    assert!(rep.terminal_inconsistency > 0.5);
}

#[test]
fn explicit_step_is_monotone_in_every_input() {
    let s = problem("switching_2x2");
    let g = grids(&s, -1.5, 1.5, 7, 40);
    let q = quadrature(&s);
    let cfg = SchemeConfig::default();
    let nodes = g.space.len();
    let base = ValueField {
        t: g.time.t(20),
        modes: s.modes,
        values: (0..4)
            .map(|p| (0..nodes).map(|n| ((n * 7 + p * 3) % 5) as f64 * 0.1 - 0.2).collect())
            .collect(),
    };
    let out = step_penalized(&s, &g, &q, &base, 19, 4.0, 4.0, &cfg).unwrap();
    for p in 0..4 {
        for node in 0..nodes {
            let mut bumped = base.clone();
            bumped.values[p][node] += 1e-3;
            let after = step_penalized(&s, &g, &q, &bumped, 19, 4.0, 4.0, &cfg).unwrap();
            assert!(out.max_excess_over(&after) <= 1e-14, "pair {p}, node {node}");
        }
    }
}

#[test]
fn parallel_and_sequential_runs_are_identical() {
    let s = problem("switching_2x2");
    let g = smoke_grids(&s);
    let q = quadrature(&s);
    let par = SchemeConfig::default().with_exec(Exec::Parallel);
    let seq = SchemeConfig::default().with_exec(Exec::Sequential);
    assert_eq!(
        solve_penalized(&s, &g, &q, 4.0, 4.0, &par).unwrap().0,
        solve_penalized(&s, &g, &q, 4.0, 4.0, &seq).unwrap().0
    );
    assert_eq!(
        solve_maxmin(&s, &g, &q, SolveMode::Direct, &par).unwrap().0,
        solve_maxmin(&s, &g, &q, SolveMode::Direct, &seq).unwrap().0
    );
}

#[test]
fn trajectories_round_trip_through_the_binary_format() {
    let s = problem("two_atom_jump_1d");
    let g = grids(&s, -2.0, 2.0, 21, 10);
    let (traj, report) = solve_penalized(&s, &g, &quadrature(&s), 1.0, 1.0, &SchemeConfig::default()).unwrap();
    let mut buf = Vec::new();
    traj.write_binary(&g.space, &mut buf).unwrap();
    assert_eq!(&buf[..4], BINARY_MAGIC);
    let (grid, back) = Trajectory::read_binary(&buf[..]).unwrap();
    assert_eq!(grid, g.space);
    assert_eq!(back, traj);
    let json = report.to_json().unwrap();
    let parsed: SolverReport = serde_json::from_str(&json).unwrap();
    assert_eq!(parsed.steps, 10);
    assert!(parsed.residuals.iter().all(|r| r.is_finite() && *r >= 0.0));
}

#[test]
fn plot_csv_lists_value_and_obstacles() {
    let s = problem("switching_2x2");
    let g = grids(&s, -2.0, 2.0, 21, 20);
    let (traj, _) = solve_minmax(&s, &g, &quadrature(&s), SolveMode::Direct, &SchemeConfig::default()).unwrap();
    let mut out = Vec::new();
    traj.write_plot_csv(0, &s, &g.space, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "x0,v_0_0,L_0_0,U_0_0,v_0_1,L_0_1,U_0_1,v_1_0,L_1_0,U_1_0,v_1_1,L_1_1,U_1_1"
    );
    assert_eq!(lines.count(), 21);
}

#[test]
fn empty_levy_measure_is_a_plain_diffusion() {
    let s = scalar("0", "0.3", "[]", "0", "x*x");
    let g = grids(&s, -3.0, 3.0, 61, 100);
    let q = LevyQuadrature::empty();
    let (traj, _) = solve_penalized(&s, &g, &q, 0.0, 0.0, &SchemeConfig::default()).unwrap();
    // E[X_T^2] = x^2 + sigma^2 T away from the boundary
    let v = traj.initial().values[0][30];
    assert!((v - 0.09).abs() < 1e-10, "{v}");
}

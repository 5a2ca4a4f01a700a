//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

mod common;

use std::time::{Duration, Instant};

use common::*;
use swgame::discretization::SpatialGrid;
use swgame::mc::*;
use swgame::model::*;
use swgame::oracle::{backward_induction, build_discrete_game, Order};
use swgame::solver::*;
use swgame::{Error, Exec};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

/// Entries where `a > b + tol`, and the largest such excess.
fn violations(a: &Trajectory, b: &Trajectory, tol: f64) -> (usize, f64) {
    let mut count = 0;
    let mut worst = f64::NEG_INFINITY;
    for (fa, fb) in a.levels.iter().zip(&b.levels) {
        for (ra, rb) in fa.values.iter().zip(&fb.values) {
            for (x, y) in ra.iter().zip(rb) {
                let excess = x - y;
                worst = worst.max(excess);
                if excess > tol {
                    count += 1;
                }
            }
        }
    }
    (count, worst)
}

fn ensure(ok: bool, msg: String) -> Outcome {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn within(elapsed: Duration, limit: f64) -> Result<(), String> {
    if elapsed.as_secs_f64() < limit {
        Ok(())
    } else {
        Err(format!("took {:.1}s, limit {limit}s", elapsed.as_secs_f64()))
    }
}

fn e(err: Error) -> String {
    err.to_string()
}

#[allow(clippy::needless_range_loop)]
fn double_monotonicity() -> Outcome {
    let start = Instant::now();
    let s = problem("switching_2x2");
    let g = smoke_grids(&s);
    let q = quadrature(&s);
    let cfg = SchemeConfig::default();
    let ps = [1.0, 2.0, 4.0, 8.0];
    let mut sols = Vec::new();
    for &n in &ps {
        let mut row = Vec::new();
        for &m in &ps {
            row.push(solve_penalized(&s, &g, &q, n, m, &cfg).map_err(e)?.0);
        }
        sols.push(row);
    }
    let (mut count, mut worst) = (0, 0.0f64);
    for a in 0..ps.len() {
        for b in a + 1..ps.len() {
            for c in 0..ps.len() {
                // increasing in n, decreasing in m
                let (k1, w1) = violations(&sols[a][c], &sols[b][c], 1e-10);
                let (k2, w2) = violations(&sols[c][b], &sols[c][a], 1e-10);
                count += k1 + k2;
                worst = worst.max(w1).max(w2);
            }
        }
    }
    within(start.elapsed(), 60.0)?;
    ensure(
        count == 0,
        format!("16 solves at 101x50, violations {count}, worst excess {worst:.2e} (tol 1e-10)"),
    )
}

fn one_sided_limits() -> Outcome {
    let s = problem("switching_2x2");
    let q = quadrature(&s);
    let cfg = SchemeConfig::default();
    let space = SpatialGrid::uniform_1d(-3.0, 3.0, 101).map_err(e)?;
    let schedule = doubling_schedule();
    let top = *schedule.last().unwrap();
    let time = auto_time_grid(&s, &space, &q, top, top, &cfg, 50).map_err(e)?;
    let g = Grids::new(space, time);
    let (mut count, mut worst, mut feasibility) = (0, 0.0f64, 0.0f64);
    let mut prev: Option<(Trajectory, Trajectory)> = None;
    for &p in &schedule {
        let (upper_bar, rep_u) = solve_lower_reflected(&s, &g, &q, p, &cfg).map_err(e)?;
        let (lower_bar, rep_l) = solve_upper_reflected(&s, &g, &q, p, &cfg).map_err(e)?;
        feasibility = feasibility.max(rep_u.max_lower_violation()).max(rep_l.max_upper_violation());
        if let Some((pu, pl)) = &prev {
            let (k1, w1) = violations(&upper_bar, pu, 1e-10);
            let (k2, w2) = violations(pl, &lower_bar, 1e-10);
            count += k1 + k2;
            worst = worst.max(w1).max(w2);
        }
        prev = Some((upper_bar, lower_bar));
    }
    ensure(
        count == 0 && feasibility <= 1e-10,
        format!(
            "penalties 1..{top} at 101x{}, ordering violations {count} (worst {worst:.2e}), feasibility {feasibility:.2e} (tol 1e-10)",
            g.time.steps()
        ),
    )
}

fn ordering() -> Outcome {
    let cfg = SchemeConfig::default();
    let mut worst = f64::NEG_INFINITY;
    let mut parts = Vec::new();
    for name in SHIPPED {
        let s = problem(name);
        let g = smoke_grids(&s);
        let q = quadrature(&s);
        let (upper, _) = solve_minmax(&s, &g, &q, SolveMode::Direct, &cfg).map_err(e)?;
        let (lower, _) = solve_maxmin(&s, &g, &q, SolveMode::Direct, &cfg).map_err(e)?;
        let (_, w) = violations(&lower, &upper, 1e-8);
        worst = worst.max(w);
        parts.push(format!("{name} {w:.2e}"));
    }
    ensure(
        worst <= 1e-8,
        format!("max(lower - upper): {} (tol 1e-8)", parts.join(", ")),
    )
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let cfg = SchemeConfig::default();
    let mut instances: Vec<_> = SHIPPED.iter().map(|n| (n.to_string(), problem(n))).collect();
    instances.push(("switching_3x3".into(), fixture("switching_3x3")));
    let mut worst = 0.0f64;
    for (_, s) in &instances {
        let g = grids(s, -2.0, 2.0, 41, 20);
        let q = quadrature(s);
        let game = build_discrete_game(s, &g, &q, &cfg).map_err(e)?;
        let (mm, _) = solve_minmax(s, &g, &q, SolveMode::Direct, &cfg).map_err(e)?;
        let (xm, _) = solve_maxmin(s, &g, &q, SolveMode::Direct, &cfg).map_err(e)?;
        worst = worst.max(mm.max_abs_diff(&backward_induction(&game, Order::MinMax, &cfg).map_err(e)?));
        worst = worst.max(xm.max_abs_diff(&backward_induction(&game, Order::MaxMin, &cfg).map_err(e)?));
    }
    within(start.elapsed(), 10.0)?;
    ensure(
        worst <= 1e-10,
        format!("{} instances at 41x20, max |solver - oracle| {worst:.2e} (tol 1e-10)", instances.len()),
    )
}

fn feynman_kac() -> Outcome {
    let start = Instant::now();
    let cfg = SchemeConfig::default();
    let s = problem("two_atom_jump_1d");
    let q = quadrature(&s);
    let g = smoke_grids(&s);
    let batch = simulate_paths(&s, &q, &[0.0], 10_000, 50, DEFAULT_SEED, Exec::Parallel).map_err(e)?;
    let mut parts = Vec::new();
    let mut passed = true;
    for p in [1.0, 8.0] {
        let (traj, _) = solve_penalized(&s, &g, &q, p, p, &cfg).map_err(e)?;
        let bc = BsdeConfig {
            n: p,
            m: p,
            ..Default::default()
        };
        let est = solve_bsde_regression(&batch, &s, &q, &bc).map_err(e)?;
        let rep = feynman_kac_check(&traj, &g.space, &s, &est, DEFAULT_BIAS_ALLOWANCE).map_err(e)?;
        passed &= rep.passed;
        let ratio = rep.entries.iter().map(|x| x.difference / x.threshold).fold(0.0, f64::max);
        parts.push(format!("n=m={p}: worst diff/threshold {ratio:.2}"));
    }

    let c = 0.4;
    let closed = ProblemSpec::from_json(&format!(
        r#"{{"modes": {{"m1": 1, "m2": 1}}, "horizon": 1.0, "drift": "0", "volatility": [["0.2"]],
            "jump_amplitude": "e", "jump_weights": [["1"]], "drivers": [["{c}"]], "terminal": [["0"]],
            "levy": {{"atoms": [{{"mark": 0.4, "weight": 1.0}}, {{"mark": -0.4, "weight": 1.0}}]}}}}"#
    ))
    .map_err(e)?;
    let cq = quadrature(&closed);
    let (traj, _) = solve_penalized(&closed, &g, &cq, 0.0, 0.0, &cfg).map_err(e)?;
    let cb = simulate_paths(&closed, &cq, &[0.0], 10_000, 50, DEFAULT_SEED, Exec::Parallel).map_err(e)?;
    let est = solve_bsde_regression(&cb, &closed, &cq, &BsdeConfig::default()).map_err(e)?;
    let rep = feynman_kac_check(&traj, &g.space, &closed, &est, 0.0).map_err(e)?;
    let exact = c * closed.horizon;
    let err = (rep.entries[0].pde - exact).abs().max((rep.entries[0].mc - exact).abs());
    passed &= err <= 1e-8;
    parts.push(format!("constant driver error {err:.2e} (tol 1e-8)"));
    within(start.elapsed(), 120.0)?;
    ensure(passed, format!("P=1e4, N_t=50, {}", parts.join(", ")))
}

fn comparison() -> Outcome {
    let cfg = SchemeConfig::default();
    let s = problem("two_atom_jump_1d");
    let shifted = s.with_terminal_shift(1.0);
    if !s.drivers_y_independent() {
        return Err("drivers depend on y".into());
    }
    let xs: Vec<Vec<f64>> = (-30..=30).map(|k| vec![0.1 * k as f64]).collect();
    for spec in [&s, &shifted] {
        let r = validate_terminal_consistency(spec, &xs).map_err(e)?;
        if !r.passed {
            return Err(format!("terminal data inconsistent by {:.2e}", r.worst));
        }
    }
    let g = smoke_grids(&s);
    let q = quadrature(&s);
    let solve = |spec: &ProblemSpec, system: &str| -> Result<Trajectory, Error> {
        Ok(match system {
            "penalized" => solve_penalized(spec, &g, &q, 4.0, 4.0, &cfg)?.0,
            "minmax" => solve_minmax(spec, &g, &q, SolveMode::Direct, &cfg)?.0,
            _ => solve_maxmin(spec, &g, &q, SolveMode::Direct, &cfg)?.0,
        })
    };
    let mut count = 0;
    let mut worst = f64::NEG_INFINITY;
    for system in ["penalized", "minmax", "maxmin"] {
        let (k, w) = violations(&solve(&s, system).map_err(e)?, &solve(&shifted, system).map_err(e)?, 1e-10);
        count += k;
        worst = worst.max(w);
    }
    ensure(
        count == 0,
        format!("penalized/minmax/maxmin with h and h+1: violations {count}, max(v_h - v_h+1) {worst:.2e} (tol 1e-10)"),
    )
}

fn degenerate_reductions() -> Outcome {
    let cfg = SchemeConfig::default();
    // bounded data use the clamped boundary, affine data the linear one
    let scalar = |drift: &str, vol: &str, atoms: &str, driver: &str, terminal: &str, growth: f64| {
        ProblemSpec::from_json(&format!(
            r#"{{"modes": {{"m1": 1, "m2": 1}}, "horizon": 1.0, "drift": "{drift}", "volatility": [["{vol}"]],
                "jump_amplitude": "e", "jump_weights": [["1"]], "drivers": [["{driver}"]],
                "terminal": [["{terminal}"]], "levy": {{"atoms": {atoms}}}, "growth": {{"c": {growth}, "exponent": 1}}}}"#
        ))
        .map_err(e)
    };
    let atoms = r#"[{"mark": 0.4, "weight": 1.0}, {"mark": -0.4, "weight": 1.0}]"#;
    let c = 0.75;
    let s = scalar("0.1*x", "0.2", atoms, &c.to_string(), "0", 0.0)?;
    let g = smoke_grids(&s);
    let (traj, _) = solve_penalized(&s, &g, &quadrature(&s), 1.0, 1.0, &cfg).map_err(e)?;
    let mut const_err = 0.0f64;
    for f in &traj.levels {
        for v in &f.values[0] {
            const_err = const_err.max((v - c * (s.horizon - f.t)).abs());
        }
    }
    let s = scalar("0", "0", atoms, "0", "x", 1.0)?;
    let g = grids(&s, -4.0, 4.0, 81, 50);
    let (traj, _) = solve_penalized(&s, &g, &quadrature(&s), 1.0, 1.0, &cfg).map_err(e)?;
    let mut affine_err = 0.0f64;
    for f in &traj.levels {
        for (node, v) in f.values[0].iter().enumerate() {
            affine_err = affine_err.max((v - g.space.coord(0, node)).abs());
        }
    }
    ensure(
        const_err <= 1e-12 && affine_err <= 1e-10,
        format!("g=c: {const_err:.2e} (tol 1e-12), affine: {affine_err:.2e} (tol 1e-10)"),
    )
}

fn validators() -> Outcome {
    let xs: Vec<Vec<f64>> = (-10..=10).map(|k| vec![0.3 * k as f64]).collect();
    let free = cost_game(1.0, 1.0, [["0", "0"], ["0", "0"]]);
    let r = validate_non_free_loop(&free, &sample_points(&free, &xs, 3)).map_err(e)?;
    let cycle = r.witness.as_ref().and_then(|w| w.cycle.clone());
    let loop_ok = !r.passed && cycle.as_ref().is_some_and(|c| c.sum == 0.0 && c.pairs.len() >= 3);

    let strict = cost_game(1.0, 2.0, [["0", "0"], ["0", "0"]]);
    let strict_ok = validate_non_free_loop(&strict, &sample_points(&strict, &xs, 3)).map_err(e)?.passed;

    let bad = cost_game(1.0, 2.0, [["5", "0"], ["0", "0"]]);
    let r = validate_terminal_consistency(&bad, &xs).map_err(e)?;
    let a4_ok = !r.passed && r.worst == 4.0;
    let solver_refuses = matches!(
        solve_penalized(&bad, &grids(&bad, -1.0, 1.0, 5, 4), &quadrature(&bad), 1.0, 1.0, &SchemeConfig::default()),
        Err(Error::TerminalInconsistent { magnitude }) if magnitude == 4.0
    );
    let pairs = cycle.map(|c| format!("{:?}", c.pairs)).unwrap_or_default();
    ensure(
        loop_ok && strict_ok && a4_ok && solver_refuses,
        format!(
            "free loop {pairs}, strict costs accepted {strict_ok}, terminal violation {:.2} (expected 4), solver refuses {solver_refuses}",
            r.worst
        ),
    )
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("double monotonicity of the penalized solutions", double_monotonicity),
        ("monotone one-sided limits and obstacle feasibility", one_sided_limits),
        ("max-min below min-max", ordering),
        ("oracle equivalence", oracle_equivalence),
        ("Feynman-Kac cross-check", feynman_kac),
        ("comparison under shifted terminal data", comparison),
        ("degenerate reductions", degenerate_reductions),
        ("validator correctness", validators),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("criterion {}: PASS  {name}: {msg} [{secs:.2}s]", k + 1),
            Err(msg) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {msg} [{secs:.2}s]", k + 1);
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

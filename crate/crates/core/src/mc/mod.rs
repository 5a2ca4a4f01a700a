//! Monte-Carlo cross-validation of the grid solvers.
//!
//! [`simulate_paths`] runs an Euler scheme for the jump-diffusion on the
//! atoms of a Levy quadrature, [`solve_bsde_regression`] estimates the
//! penalized BSDE system along those paths by least-squares regression, and
//! [`feynman_kac_check`] compares the time-zero estimates with a grid
//! solution.

mod check;
mod paths;
mod regression;

pub use check::{feynman_kac_check, CheckEntry, CheckReport, DEFAULT_BIAS_ALLOWANCE, STDERR_MULTIPLE};
pub use paths::{simulate_paths, PathBatch};
pub use regression::{
    solve_bsde_regression, terminal_values, BsdeConfig, BsdeEstimate, RegressionBasis, MAX_CONDITION,
};

/// Seed used when none is given.
pub const DEFAULT_SEED: u64 = 20_240_917;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::{build_levy_quadrature, LevyQuadrature, SpatialGrid, TimeGrid};
    use crate::model::ProblemSpec;
    use crate::solver::{solve_penalized, Grids, SchemeConfig};
    use crate::Exec;

    fn scalar(drift: &str, vol: &str, atoms: &str, driver: &str, terminal: &str) -> ProblemSpec {
        ProblemSpec::from_json(&format!(
            r#"{{"modes": {{"m1": 1, "m2": 1}}, "horizon": 1.0, "drift": "{drift}", "volatility": [["{vol}"]],
                "jump_amplitude": "e", "jump_weights": [["1"]], "drivers": [["{driver}"]],
                "terminal": [["{terminal}"]], "levy": {{"atoms": {atoms}}}, "growth": {{"c": 1, "exponent": 1}}}}"#
        ))
        .unwrap()
    }

    fn quad(spec: &ProblemSpec) -> LevyQuadrature {
        build_levy_quadrature(&spec.levy, 8, None).unwrap()
    }

    #[test]
    fn frozen_dynamics() {
        let s = scalar("0", "0", "[]", "0", "x");
        let b = simulate_paths(&s, &quad(&s), &[0.7], 50, 10, 1, Exec::Sequential).unwrap();
        for p in 0..50 {
            for k in 0..=10 {
                assert_eq!(b.state(p, k), &[0.7]);
            }
        }
    }

    #[test]
    fn deterministic_drift() {
        let s = scalar("1", "0", "[]", "0", "x");
        let b = simulate_paths(&s, &quad(&s), &[0.25], 20, 50, 1, Exec::Sequential).unwrap();
        for p in 0..20 {
            assert!((b.state(p, 50)[0] - 1.25).abs() < 1e-12);
        }
    }

    #[test]
    fn poisson_jump_counts() {
        let lambda = 1.5;
        let s = scalar("0", "0", &format!(r#"[{{"mark": 1.0, "weight": {lambda}}}]"#), "0", "x");
        let paths = 10_000;
        let b = simulate_paths(&s, &quad(&s), &[0.0], paths, 50, 3, Exec::Parallel).unwrap();
        let mean = (0..paths).map(|p| b.jump_count(p) as f64).sum::<f64>() / paths as f64;
        let se = (lambda / paths as f64).sqrt();
        assert!((mean - lambda).abs() <= 4.0 * se, "mean {mean}");
    }

    #[test]
    fn compensated_jumps_are_a_martingale() {
        let s = scalar("0", "0", r#"[{"mark": 0.5, "weight": 2.0}, {"mark": -0.2, "weight": 1.0}]"#, "0", "x");
        let q = quad(&s);
        let b = simulate_paths(&s, &q, &[0.3], 10_000, 50, 11, Exec::Parallel).unwrap();
        let xs: Vec<f64> = (0..b.paths).map(|p| b.state(p, 50)[0]).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        assert!((mean - 0.3).abs() <= 4.0 * (var / xs.len() as f64).sqrt());

        let est = solve_bsde_regression(&b, &s, &q, &BsdeConfig::default()).unwrap();
        assert!((est.y0[0] - 0.3).abs() <= 4.0 * est.stderr[0], "{est:?}");
    }

    #[test]
    fn constant_driver_is_exact() {
        let s = scalar("0.1", "0.3", r#"[{"mark": 0.4, "weight": 1.0}]"#, "0.7", "0");
        let q = quad(&s);
        let b = simulate_paths(&s, &q, &[0.0], 2000, 50, 5, Exec::Parallel).unwrap();
        let est = solve_bsde_regression(&b, &s, &q, &BsdeConfig::default()).unwrap();
        assert!((est.y0[0] - 0.7).abs() < 1e-10, "{}", est.y0[0]);
        assert!(est.stderr[0] < 1e-10);
    }

    #[test]
    fn zero_paths_is_an_error() {
        let s = scalar("0", "0.2", "[]", "0", "x");
        assert!(simulate_paths(&s, &quad(&s), &[0.0], 0, 10, 1, Exec::Sequential).is_err());
    }

    #[test]
    fn z_dependent_drivers_are_rejected() {
        let s = scalar("0", "0.2", "[]", "z0", "x");
        let q = quad(&s);
        let b = simulate_paths(&s, &q, &[0.0], 10, 5, 1, Exec::Sequential).unwrap();
        assert!(matches!(
            solve_bsde_regression(&b, &s, &q, &BsdeConfig::default()),
            Err(crate::Error::Unsupported(_))
        ));
    }

    #[test]
    fn seeded_runs_are_reproducible() {
        let s = scalar("0.2*x", "0.3", r#"[{"mark": 0.4, "weight": 1.0}]"#, "0.1*y", "max(x, 0)");
        let q = quad(&s);
        let a = simulate_paths(&s, &q, &[0.1], 3000, 20, 9, Exec::Parallel).unwrap();
        let b = simulate_paths(&s, &q, &[0.1], 3000, 20, 9, Exec::Sequential).unwrap();
        assert_eq!(a, b);
        let cfg = BsdeConfig::default();
        let ea = solve_bsde_regression(&a, &s, &q, &cfg).unwrap();
        let eb = solve_bsde_regression(&b, &s, &q, &BsdeConfig { exec: Exec::Sequential, ..cfg }).unwrap();
        assert_eq!(ea, eb);
        let c = simulate_paths(&s, &q, &[0.1], 3000, 20, 10, Exec::Parallel).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn terminal_values_are_the_payoff() {
        let s = scalar("0", "0.3", "[]", "0", "x*x");
        let b = simulate_paths(&s, &quad(&s), &[0.5], 100, 10, 2, Exec::Sequential).unwrap();
        let h = terminal_values(&b, &s).unwrap();
        for p in 0..100 {
            assert_eq!(h[0][p], b.state(p, 10)[0].powi(2));
        }
    }

    fn obstacle_game() -> ProblemSpec {
        ProblemSpec::from_json(
            r#"{"modes": {"m1": 2, "m2": 1}, "horizon": 1.0, "drift": "0", "volatility": [["0.2"]],
                "drivers": [["0"], ["2"]], "lower_costs": [[null, 0.1], [0.1, null]],
                "terminal": [["x"], ["x"]]}"#,
        )
        .unwrap()
    }

    fn check_with(n_pde: f64, n_mc: f64) -> CheckReport {
        let s = obstacle_game();
        let q = quad(&s);
        let space = SpatialGrid::uniform_1d(-2.0, 2.0, 41).unwrap();
        let grids = Grids::new(space.clone(), TimeGrid::new(1.0, 50).unwrap());
        let (traj, _) = solve_penalized(&s, &grids, &q, n_pde, 0.0, &SchemeConfig::default()).unwrap();
        let b = simulate_paths(&s, &q, &[0.0], 4000, 50, DEFAULT_SEED, Exec::Parallel).unwrap();
        let est = solve_bsde_regression(&b, &s, &q, &BsdeConfig { n: n_mc, ..Default::default() }).unwrap();
        feynman_kac_check(&traj, &space, &s, &est, DEFAULT_BIAS_ALLOWANCE).unwrap()
    }

    #[test]
    fn matching_penalties_pass_and_mismatched_fail() {
        assert!(check_with(20.0, 20.0).passed);
        assert!(!check_with(0.0, 20.0).passed);
    }

    #[test]
    fn raising_n_does_not_lower_the_estimate() {
        let s = ProblemSpec::load(concat!(env!("CARGO_MANIFEST_DIR"), "/../../problems/two_atom_jump_1d.json")).unwrap();
        let q = quad(&s);
        let b = simulate_paths(&s, &q, &[0.0], 4000, 50, DEFAULT_SEED, Exec::Parallel).unwrap();
        let mut prev: Option<BsdeEstimate> = None;
        for n in [0.0, 1.0, 2.0, 4.0, 8.0] {
            let est = solve_bsde_regression(&b, &s, &q, &BsdeConfig { n, ..Default::default() }).unwrap();
            if let Some(p) = &prev {
                for (a, (b, se)) in p.y0.iter().zip(est.y0.iter().zip(&est.stderr)) {
                    assert!(*b >= a - 4.0 * se, "n = {n}: {b} < {a}");
                }
            }
            prev = Some(est);
        }
    }

    #[test]
    fn path_dump_has_one_row_per_level() {
        let s = scalar("0", "0.3", r#"[{"mark": 0.4, "weight": 5.0}]"#, "0", "x");
        let b = simulate_paths(&s, &quad(&s), &[0.0], 3, 4, 2, Exec::Sequential).unwrap();
        let mut out = Vec::new();
        b.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 1 + 3 * 5);
        assert!(text.starts_with("path,level,t,x0,jumps"));
    }
}

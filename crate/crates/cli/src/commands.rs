use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use swgame::mc::{feynman_kac_check, simulate_paths, solve_bsde_regression, BsdeConfig, CheckReport, RegressionBasis};
use swgame::model::{validate_all, ValidationReport};
use swgame::oracle::{backward_induction, build_discrete_game_with, Order, Perturbation, MAX_ORACLE_NODES};
use swgame::solver::{
    solve_lower_reflected, solve_maxmin, solve_minmax, solve_penalized, solve_upper_reflected, Grids, SchemeConfig,
    SolveMode, SolverReport, Trajectory,
};

use crate::config::{Format, Loaded, RunConfig, SystemKind};
use crate::error::{CliError, CliResult};

/// Flags shared by every command.
#[derive(Debug, Clone, Default)]
pub struct Options {
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub formats: Vec<Format>,
    pub override_a4: bool,
    /// Oracle stencil perturbation for negative-control runs of `check`.
    pub perturb_node: Option<usize>,
}

/// Mass moved by the `check` perturbation hook.
const PERTURBATION: f64 = 0.05;

struct Run {
    loaded: Loaded,
    scheme: SchemeConfig,
    out: PathBuf,
    formats: Vec<Format>,
}

impl Run {
    fn new(opts: &Options) -> CliResult<Self> {
        let loaded = RunConfig::load(&opts.config)?;
        let mut scheme = loaded.config.scheme.clone();
        scheme.override_a4 |= opts.override_a4;
        let out = match (&opts.out, &loaded.config.out) {
            (Some(o), _) => o.clone(),
            (None, Some(o)) => opts.config.parent().unwrap_or(Path::new(".")).join(o),
            (None, None) => PathBuf::from("out"),
        };
        let formats = if !opts.formats.is_empty() {
            opts.formats.clone()
        } else {
            loaded.config.formats.clone().unwrap_or_else(|| vec![Format::Csv])
        };
        Ok(Run {
            loaded,
            scheme,
            out,
            formats,
        })
    }

    fn out_dir(&self) -> CliResult<&Path> {
        std::fs::create_dir_all(&self.out).map_err(|e| CliError::io(&self.out, e))?;
        Ok(&self.out)
    }

    fn create(&self, name: &str) -> CliResult<(PathBuf, BufWriter<File>)> {
        let path = self.out_dir()?.join(name);
        let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        Ok((path, BufWriter::new(file)))
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<PathBuf> {
        let (path, mut w) = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value).map_err(|source| CliError::Config {
            path: path.clone(),
            source,
        })?;
        writeln!(w).and_then(|_| w.flush()).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    fn grids(&self, n: f64, m: f64) -> CliResult<Grids> {
        self.loaded.grids(&self.scheme, n, m)
    }

    fn validate(&self) -> CliResult<Vec<ValidationReport>> {
        let l = &self.loaded;
        Ok(validate_all(&l.spec, &l.quadrature, &l.sample_xs(), l.config.validate.times)?)
    }

    /// Runs the validators and refuses to continue on a failure, except a
    /// terminal-consistency failure when it has been overridden.
    fn require_valid(&self) -> CliResult<()> {
        let reports = self.validate()?;
        let blocking: Vec<&ValidationReport> = reports
            .iter()
            .filter(|r| !r.passed && !(self.scheme.override_a4 && is_terminal_check(r)))
            .collect();
        if blocking.is_empty() {
            return Ok(());
        }
        self.write_json("validation.json", &reports)?;
        let names: Vec<String> = blocking.iter().map(|r| format!("{} (worst {:.3e})", r.assumption, r.worst)).collect();
        Err(CliError::Failed(format!("validation failed: {}", names.join(", "))))
    }
}

fn is_terminal_check(r: &ValidationReport) -> bool {
    r.assumption.starts_with("A4")
}

pub fn validate(opts: &Options) -> CliResult<()> {
    let run = Run::new(opts)?;
    let reports = run.validate()?;
    let text = serde_json::to_string_pretty(&reports).expect("reports serialize");
    println!("{text}");
    if opts.out.is_some() || run.loaded.config.out.is_some() {
        run.write_json("validation.json", &reports)?;
    }
    for r in &reports {
        let status = if r.passed { "PASS" } else { "FAIL" };
        eprintln!("{status} {} (checked {}, worst {:.3e})", r.assumption, r.checked, r.worst);
    }
    if reports.iter().all(|r| r.passed) {
        Ok(())
    } else {
        Err(CliError::Failed("one or more assumptions are violated".into()))
    }
}

fn penalties_for_grid(cfg: &crate::config::SolveConfig, scheme: &SchemeConfig) -> (f64, f64) {
    let top = |s: &[f64]| s.iter().cloned().fold(0.0, f64::max);
    match (cfg.system, cfg.mode) {
        (SystemKind::Penalized, _) => (cfg.n, cfg.m),
        (SystemKind::LowerReflected, _) => (0.0, cfg.m),
        (SystemKind::UpperReflected, _) => (cfg.n, 0.0),
        (SystemKind::Minmax, SolveMode::Limit) => (0.0, top(&scheme.m_schedule)),
        (SystemKind::Maxmin, SolveMode::Limit) => (top(&scheme.n_schedule), 0.0),
        (_, SolveMode::Direct) => (0.0, 0.0),
    }
}

fn run_solver(run: &Run, grids: &Grids) -> CliResult<(Trajectory, SolverReport)> {
    let l = &run.loaded;
    let c = &l.config.solve;
    let (s, q, cfg) = (&l.spec, &l.quadrature, &run.scheme);
    Ok(match c.system {
        SystemKind::Penalized => solve_penalized(s, grids, q, c.n, c.m, cfg)?,
        SystemKind::LowerReflected => solve_lower_reflected(s, grids, q, c.m, cfg)?,
        SystemKind::UpperReflected => solve_upper_reflected(s, grids, q, c.n, cfg)?,
        SystemKind::Minmax => solve_minmax(s, grids, q, c.mode, cfg)?,
        SystemKind::Maxmin => solve_maxmin(s, grids, q, c.mode, cfg)?,
    })
}

pub fn solve(opts: &Options) -> CliResult<()> {
    let run = Run::new(opts)?;
    run.require_valid()?;
    let l = &run.loaded;
    let (n, m) = penalties_for_grid(&l.config.solve, &run.scheme);
    let grids = run.grids(n, m)?;
    let steps = grids.time.steps();
    let levels = l.config.solve.levels.clone().unwrap_or_else(|| vec![0, steps]);
    if let Some(bad) = levels.iter().find(|&&k| k > steps) {
        return Err(CliError::Usage(format!("level {bad} is beyond the {steps} time steps")));
    }
    run.out_dir()?;
    let (traj, report) = run_solver(&run, &grids)?;

    run.write_json("report.json", &report)?;
    for format in &run.formats {
        match format {
            Format::Csv => {
                for &k in &levels {
                    let (path, mut w) = run.create(&format!("value_level_{k}.csv"))?;
                    traj.levels[k].write_csv(&grids.space, &mut w)?;
                    w.flush().map_err(|e| CliError::io(&path, e))?;
                    let (path, mut w) = run.create(&format!("plot_level_{k}.csv"))?;
                    traj.write_plot_csv(k, &l.spec, &grids.space, &mut w)?;
                    w.flush().map_err(|e| CliError::io(&path, e))?;
                }
            }
            Format::Json => {
                let selected: Vec<_> = levels.iter().map(|&k| &traj.levels[k]).collect();
                run.write_json(
                    "values.json",
                    &serde_json::json!({ "grid": &grids.space, "levels": selected }),
                )?;
            }
            Format::Bin => {
                let (path, mut w) = run.create("trajectory.bin")?;
                traj.write_binary(&grids.space, &mut w)?;
                w.flush().map_err(|e| CliError::io(&path, e))?;
            }
        }
    }
    println!(
        "{} solve: {} nodes x {} steps, max residual {:.3e}, {:.2}s; outputs in {}",
        report.system,
        grids.space.len(),
        steps,
        report.max_residual(),
        report.wall_clock_seconds,
        run.out.display()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct SweepReport {
    n: Vec<f64>,
    m: Vec<f64>,
    nodes: usize,
    steps: usize,
    tolerance: f64,
    /// `gaps_n[a][c] = |v(n_{a+1}, m_c) - v(n_a, m_c)|_inf`.
    gaps_n: Vec<Vec<f64>>,
    /// `gaps_m[a][c] = |v(n_a, m_{c+1}) - v(n_a, m_c)|_inf`.
    gaps_m: Vec<Vec<f64>>,
    /// Entries breaking "increasing in n, decreasing in m" by more than
    /// the tolerance, over all ordered pairs of the lattice.
    violations: usize,
    worst_excess: f64,
}

fn count_excess(a: &Trajectory, b: &Trajectory, tol: f64) -> (usize, f64) {
    let mut count = 0;
    let mut worst = f64::NEG_INFINITY;
    for (fa, fb) in a.levels.iter().zip(&b.levels) {
        for (ra, rb) in fa.values.iter().zip(&fb.values) {
            for (x, y) in ra.iter().zip(rb) {
                worst = worst.max(x - y);
                count += usize::from(x - y > tol);
            }
        }
    }
    (count, worst)
}

fn check_schedule(s: &[f64], what: &str) -> CliResult<()> {
    if s.is_empty() {
        return Err(CliError::Usage(format!("sweep.{what} is empty")));
    }
    if s.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || s.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CliError::Usage(format!(
            "sweep.{what} must be finite, non-negative and strictly increasing"
        )));
    }
    Ok(())
}

#[allow(clippy::needless_range_loop)]
pub fn sweep(opts: &Options) -> CliResult<()> {
    let run = Run::new(opts)?;
    let sw = run.loaded.config.sweep.clone();
    check_schedule(&sw.n, "n")?;
    check_schedule(&sw.m, "m")?;
    run.require_valid()?;
    let l = &run.loaded;
    let grids = run.grids(*sw.n.last().unwrap(), *sw.m.last().unwrap())?;
    run.out_dir()?;
    let mut sols = Vec::with_capacity(sw.n.len());
    for &n in &sw.n {
        let mut row = Vec::with_capacity(sw.m.len());
        for &m in &sw.m {
            row.push(solve_penalized(&l.spec, &grids, &l.quadrature, n, m, &run.scheme)?.0);
        }
        sols.push(row);
    }
    let (nn, nm) = (sw.n.len(), sw.m.len());
    let gaps_n = (0..nn.saturating_sub(1))
        .map(|a| (0..nm).map(|c| sols[a + 1][c].max_abs_diff(&sols[a][c])).collect())
        .collect();
    let gaps_m = (0..nn)
        .map(|a| (0..nm.saturating_sub(1)).map(|c| sols[a][c + 1].max_abs_diff(&sols[a][c])).collect())
        .collect();
    let (mut violations, mut worst) = (0, f64::NEG_INFINITY);
    for a in 0..nn {
        for b in a + 1..nn {
            for c in 0..nm {
                let (k, w) = count_excess(&sols[a][c], &sols[b][c], sw.tolerance);
                violations += k;
                worst = worst.max(w);
            }
        }
    }
    for c in 0..nm {
        for d in c + 1..nm {
            for a in 0..nn {
                let (k, w) = count_excess(&sols[a][d], &sols[a][c], sw.tolerance);
                violations += k;
                worst = worst.max(w);
            }
        }
    }
    let report = SweepReport {
        n: sw.n.clone(),
        m: sw.m.clone(),
        nodes: grids.space.len(),
        steps: grids.time.steps(),
        tolerance: sw.tolerance,
        gaps_n,
        gaps_m,
        violations,
        worst_excess: worst,
    };
    run.write_json("sweep.json", &report)?;
    if run.formats.contains(&Format::Csv) {
        let (path, mut w) = run.create("sweep_gaps.csv")?;
        let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
            writeln!(w, "direction,n,m,gap")?;
            for (a, row) in report.gaps_n.iter().enumerate() {
                for (c, g) in row.iter().enumerate() {
                    writeln!(w, "n,{},{},{g}", sw.n[a], sw.m[c])?;
                }
            }
            for (a, row) in report.gaps_m.iter().enumerate() {
                for (c, g) in row.iter().enumerate() {
                    writeln!(w, "m,{},{},{g}", sw.n[a], sw.m[c])?;
                }
            }
            w.flush()
        };
        write(&mut w).map_err(|e| CliError::io(&path, e))?;
    }
    println!(
        "sweep over {nn} x {nm} penalties on {} nodes x {} steps: {violations} monotonicity violations (tol {:.0e})",
        report.nodes, report.steps, sw.tolerance
    );
    if violations == 0 {
        Ok(())
    } else {
        Err(CliError::Failed(format!("{violations} monotonicity violations")))
    }
}

#[derive(Debug, Serialize)]
struct OracleCheck {
    nodes: usize,
    steps: usize,
    tolerance: f64,
    minmax_difference: f64,
    maxmin_difference: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    perturbed_node: Option<usize>,
    passed: bool,
}

#[derive(Debug, Serialize)]
struct CheckSummary {
    seed: u64,
    oracle: OracleCheck,
    #[serde(skip_serializing_if = "Option::is_none")]
    feynman_kac: Option<CheckReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    skipped: Option<String>,
    passed: bool,
}

fn oracle_check(run: &Run, perturb: Option<usize>) -> CliResult<OracleCheck> {
    let l = &run.loaded;
    let c = &l.config.check;
    let space = l.config.grid.space(l.spec.dim, &c.oracle_nodes)?;
    if space.len() > MAX_ORACLE_NODES {
        return Err(CliError::Usage(format!(
            "oracle grid has {} nodes, at most {MAX_ORACLE_NODES} are supported",
            space.len()
        )));
    }
    if let Some(node) = perturb {
        if node + 1 >= space.len() {
            return Err(CliError::Usage(format!("perturbed node {node} is outside the oracle grid")));
        }
    }
    let time = swgame::discretization::TimeGrid::new(l.spec.horizon, c.oracle_steps)?;
    let grids = Grids::new(space, time);
    let perturbation = perturb.map(|node| Perturbation {
        node,
        delta: PERTURBATION,
    });
    let game = build_discrete_game_with(&l.spec, &grids, &l.quadrature, &run.scheme, perturbation)?;
    let (mm, _) = solve_minmax(&l.spec, &grids, &l.quadrature, SolveMode::Direct, &run.scheme)?;
    let (xm, _) = solve_maxmin(&l.spec, &grids, &l.quadrature, SolveMode::Direct, &run.scheme)?;
    let minmax_difference = mm.max_abs_diff(&backward_induction(&game, Order::MinMax, &run.scheme)?);
    let maxmin_difference = xm.max_abs_diff(&backward_induction(&game, Order::MaxMin, &run.scheme)?);
    Ok(OracleCheck {
        nodes: grids.space.len(),
        steps: c.oracle_steps,
        tolerance: c.oracle_tolerance,
        minmax_difference,
        maxmin_difference,
        perturbed_node: perturb,
        passed: minmax_difference <= c.oracle_tolerance && maxmin_difference <= c.oracle_tolerance,
    })
}

pub fn check(opts: &Options) -> CliResult<()> {
    let run = Run::new(opts)?;
    run.require_valid()?;
    let l = &run.loaded;
    let c = &l.config.check;
    let seed = l.seed(opts.seed);
    run.out_dir()?;
    let oracle = oracle_check(&run, opts.perturb_node)?;

    let (feynman_kac, skipped) = if l.spec.drivers_z_independent() {
        let x0 = match &c.x0 {
            Some(x) => x.clone(),
            None => (0..l.spec.dim)
                .map(|d| 0.5 * (l.space.lower()[d] + l.space.upper()[d]))
                .collect(),
        };
        let grids = run.grids(c.n, c.m)?;
        let (traj, _) = solve_penalized(&l.spec, &grids, &l.quadrature, c.n, c.m, &run.scheme)?;
        let batch = simulate_paths(&l.spec, &l.quadrature, &x0, c.paths, c.steps, seed, run.scheme.exec)?;
        let cfg = BsdeConfig {
            n: c.n,
            m: c.m,
            basis: RegressionBasis::polynomial(c.basis_degree),
            picard: c.picard,
            exec: run.scheme.exec,
        };
        let est = solve_bsde_regression(&batch, &l.spec, &l.quadrature, &cfg)?;
        (Some(feynman_kac_check(&traj, &grids.space, &l.spec, &est, c.bias_allowance)?), None)
    } else {
        (None, Some("drivers depend on z; the regression estimate is not available".to_string()))
    };
    let passed = oracle.passed && feynman_kac.as_ref().is_none_or(|r| r.passed);
    let summary = CheckSummary {
        seed,
        oracle,
        feynman_kac,
        skipped,
        passed,
    };
    run.write_json("check.json", &summary)?;
    let o = &summary.oracle;
    println!(
        "oracle: {} (|minmax - oracle| {:.2e}, |maxmin - oracle| {:.2e}, tol {:.0e})",
        if o.passed { "PASS" } else { "FAIL" },
        o.minmax_difference,
        o.maxmin_difference,
        o.tolerance
    );
    match &summary.feynman_kac {
        Some(r) => {
            let worst = r.entries.iter().map(|e| e.difference / e.threshold).fold(0.0, f64::max);
            println!(
                "feynman-kac: {} ({} paths, seed {seed}, worst difference/threshold {worst:.2})",
                if r.passed { "PASS" } else { "FAIL" },
                r.paths
            );
        }
        None => println!("feynman-kac: SKIPPED ({})", summary.skipped.as_deref().unwrap_or_default()),
    }
    if passed {
        Ok(())
    } else {
        Err(CliError::Failed("cross-checks failed".into()))
    }
}

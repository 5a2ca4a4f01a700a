//! Backward-in-time monotone solvers.
//!
//! All systems share one explicit step (see [`Engine::explicit_update`]):
//!
//! ```text
//! u = v_{k+1} + dt [Lbar v_{k+1} + I(v_{k+1}) + g(t_{k+1}, x, v_{k+1}, sigma^T D v_{k+1}, I_ij v_{k+1})
//!                  + n (v - L[v])^- - m (v - U[v])^+]
//! ```
//!
//! followed by a pointwise obstacle projection swept to its fixed point:
//! none for the penalized system, `max(L, u)` for the lower-reflected one,
//! `max(L, min(U, u))` for min-max and `min(U, max(L, u))` for max-min. The
//! upper-reflected system is solved on the negated instance.

mod config;
mod engine;
mod output;

pub use config::{doubling_schedule, SchemeConfig, SolveMode, Stepping};
pub use engine::{project_node, projection_residual, Engine, Projection};
pub use output::{CflReport, ScheduleReport, SolverReport, Trajectory, BINARY_MAGIC, BINARY_VERSION};

use std::time::Instant;

use crate::discretization::{LevyQuadrature, SpatialGrid, TimeGrid, ValueField};
use crate::error::{Error, Result};
use crate::model::ProblemSpec;

/// Space and time discretization of one solve.
#[derive(Debug, Clone, PartialEq)]
pub struct Grids {
    pub space: SpatialGrid,
    pub time: TimeGrid,
}

impl Grids {
    pub fn new(space: SpatialGrid, time: TimeGrid) -> Self {
        Grids { space, time }
    }
}

/// Which discrete system a trajectory is meant to solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum System {
    Penalized { n: f64, m: f64 },
    LowerReflected { m: f64 },
    UpperReflected { n: f64 },
    MinMax,
    MaxMin,
}

/// Smallest uniform time grid (at least `min_steps` steps) on which the
/// explicit scheme satisfies the CFL bound for penalties up to
/// `(n_max, m_max)`.
pub fn auto_time_grid(
    spec: &ProblemSpec,
    space: &SpatialGrid,
    quadrature: &LevyQuadrature,
    n_max: f64,
    m_max: f64,
    cfg: &SchemeConfig,
    min_steps: usize,
) -> Result<TimeGrid> {
    let probe = Engine::new(spec, space, TimeGrid::new(spec.horizon, 1)?, quadrature, cfg)?;
    let samples: Vec<f64> = (0..=32).map(|k| spec.horizon * k as f64 / 32.0).collect();
    let rate = probe.rate_at_times(&samples, n_max, m_max)?.rate;
    let mut time = TimeGrid::for_rate(spec.horizon, rate, cfg.cfl_safety, min_steps)?;
    // the sampled rate can miss peaks of time-dependent coefficients
    for _ in 0..64 {
        let engine = Engine::new(spec, space, time, quadrature, cfg)?;
        let r = engine.cfl(n_max, m_max)?;
        if r.product <= r.safety {
            return Ok(time);
        }
        let steps = ((time.steps() as f64) * r.product / r.safety).ceil() as usize + 1;
        time = TimeGrid::new(spec.horizon, steps)?;
    }
    Err(Error::InvalidParameter("could not size a time grid satisfying the CFL bound".into()))
}

/// One explicit penalized step from level `k + 1` to `k`; the CFL bound is
/// checked before any arithmetic.
#[allow(clippy::too_many_arguments)]
pub fn step_penalized(
    spec: &ProblemSpec,
    grids: &Grids,
    quadrature: &LevyQuadrature,
    next: &ValueField,
    k: usize,
    n: f64,
    m: f64,
    cfg: &SchemeConfig,
) -> Result<ValueField> {
    check_penalties(n, m)?;
    let engine = Engine::new(spec, &grids.space, grids.time, quadrature, cfg)?;
    engine.check_cfl(n, m)?;
    if k >= grids.time.steps() {
        return Err(Error::InvalidParameter(format!("step index {k} outside the time grid")));
    }
    Ok(engine.step(next, k, n, m, Projection::None)?.0)
}

fn check_penalties(n: f64, m: f64) -> Result<()> {
    if !(n >= 0.0 && n.is_finite() && m >= 0.0 && m.is_finite()) {
        return Err(Error::NumericDomain(format!(
            "penalty parameters must be finite and non-negative (n = {n}, m = {m})"
        )));
    }
    Ok(())
}

/// Penalized system with fixed `(n, m)`.
pub fn solve_penalized(
    spec: &ProblemSpec,
    grids: &Grids,
    quadrature: &LevyQuadrature,
    n: f64,
    m: f64,
    cfg: &SchemeConfig,
) -> Result<(Trajectory, SolverReport)> {
    check_penalties(n, m)?;
    let engine = Engine::new(spec, &grids.space, grids.time, quadrature, cfg)?;
    engine.run("penalized", n, m, Projection::None)
}

/// Lower obstacle enforced exactly, upper obstacle penalized with `m`.
pub fn solve_lower_reflected(
    spec: &ProblemSpec,
    grids: &Grids,
    quadrature: &LevyQuadrature,
    m: f64,
    cfg: &SchemeConfig,
) -> Result<(Trajectory, SolverReport)> {
    check_penalties(0.0, m)?;
    let engine = Engine::new(spec, &grids.space, grids.time, quadrature, cfg)?;
    let (traj, mut report) = engine.run("lower-reflected", 0.0, m, Projection::Lower)?;
    report.n = None;
    Ok((traj, report))
}

/// Maps a report on the negated instance back to the original one.
fn undo_negation(mut report: SolverReport, system: &str) -> SolverReport {
    std::mem::swap(&mut report.lower_violation, &mut report.upper_violation);
    std::mem::swap(&mut report.n, &mut report.m);
    report.system = system.to_string();
    report
}

/// Upper obstacle enforced exactly, lower obstacle penalized with `n`.
/// Solved as `-v^T` where `v` is the lower-reflected solution of the
/// negated instance.
pub fn solve_upper_reflected(
    spec: &ProblemSpec,
    grids: &Grids,
    quadrature: &LevyQuadrature,
    n: f64,
    cfg: &SchemeConfig,
) -> Result<(Trajectory, SolverReport)> {
    let dual = spec.negated();
    let (traj, report) = solve_lower_reflected(&dual, grids, quadrature, n, cfg)?;
    Ok((traj.negated_transpose(), undo_negation(report, "upper-reflected")))
}

/// Runs one-sided reflected solves over `schedule`. `lower` selects the
/// lower-reflected family (decreasing in the penalty), otherwise the
/// upper-reflected family (increasing).
fn schedule_limit(
    spec: &ProblemSpec,
    grids: &Grids,
    quadrature: &LevyQuadrature,
    schedule: &[f64],
    lower: bool,
    cfg: &SchemeConfig,
    system: &str,
) -> Result<(Trajectory, SolverReport)> {
    let start = Instant::now();
    let dual;
    let target = if lower {
        spec
    } else {
        dual = spec.negated();
        &dual
    };
    let engine = Engine::new(target, &grids.space, grids.time, quadrature, cfg)?;
    let max_pen = schedule.iter().cloned().fold(0.0, f64::max);
    // the whole schedule shares one grid: reject before solving anything
    engine.check_cfl(0.0, max_pen)?;

    let mut gaps = Vec::new();
    let mut ordering = 0.0f64;
    let mut prev: Option<(Trajectory, SolverReport)> = None;
    let mut converged = false;
    let mut used = Vec::new();
    for &pen in schedule {
        let (traj, report) = engine.run(system, 0.0, pen, Projection::Lower)?;
        used.push(pen);
        if let Some((p, _)) = &prev {
            // on the dual both families are lower-reflected, decreasing in the penalty
            ordering = ordering.max(traj.max_excess_over(p).max(0.0));
            let gap = traj.max_abs_diff(p);
            gaps.push(gap);
            if gap < cfg.schedule_tol * (1.0 + traj.sup_norm()) {
                converged = true;
                prev = Some((traj, report));
                break;
            }
        }
        prev = Some((traj, report));
    }
    let (traj, mut report) = prev.expect("schedule is non-empty");
    let tolerance = cfg.schedule_tol * (1.0 + traj.sup_norm());
    if !converged && cfg.strict_schedule {
        let last_gaps = gaps.iter().rev().take(2).rev().cloned().collect();
        return Err(Error::ScheduleNonConvergence { last_gaps, tolerance });
    }
    report.schedule = Some(ScheduleReport {
        penalties: used,
        gaps,
        tolerance,
        converged,
        ordering_violation: ordering,
    });
    report.wall_clock_seconds = start.elapsed().as_secs_f64();
    if lower {
        report.n = None;
        Ok((traj, report))
    } else {
        Ok((traj.negated_transpose(), undo_negation(report, system)))
    }
}

/// The min-max system (lower obstacle has priority).
pub fn solve_minmax(
    spec: &ProblemSpec,
    grids: &Grids,
    quadrature: &LevyQuadrature,
    mode: SolveMode,
    cfg: &SchemeConfig,
) -> Result<(Trajectory, SolverReport)> {
    match mode {
        SolveMode::Direct => {
            let engine = Engine::new(spec, &grids.space, grids.time, quadrature, cfg)?;
            let (traj, mut report) = engine.run("minmax", 0.0, 0.0, Projection::MinMax)?;
            report.n = None;
            report.m = None;
            Ok((traj, report))
        }
        SolveMode::Limit => schedule_limit(spec, grids, quadrature, &cfg.m_schedule, true, cfg, "minmax"),
    }
}

/// The max-min system (upper obstacle has priority).
pub fn solve_maxmin(
    spec: &ProblemSpec,
    grids: &Grids,
    quadrature: &LevyQuadrature,
    mode: SolveMode,
    cfg: &SchemeConfig,
) -> Result<(Trajectory, SolverReport)> {
    match mode {
        SolveMode::Direct => {
            let engine = Engine::new(spec, &grids.space, grids.time, quadrature, cfg)?;
            let (traj, mut report) = engine.run("maxmin", 0.0, 0.0, Projection::MaxMin)?;
            report.n = None;
            report.m = None;
            Ok((traj, report))
        }
        SolveMode::Limit => schedule_limit(spec, grids, quadrature, &cfg.n_schedule, false, cfg, "maxmin"),
    }
}

/// Recomputes the discrete equation residual of `traj` at every level.
/// The terminal level's residual is `|v(T) - h|_inf`.
pub fn residual_report(
    traj: &Trajectory,
    spec: &ProblemSpec,
    grids: &Grids,
    quadrature: &LevyQuadrature,
    system: System,
    cfg: &SchemeConfig,
) -> Result<SolverReport> {
    let start = Instant::now();
    if traj.levels.len() != grids.time.steps() + 1 {
        return Err(Error::InvalidParameter(format!(
            "trajectory has {} levels, time grid expects {}",
            traj.levels.len(),
            grids.time.steps() + 1
        )));
    }
    let (target, traj_owned, name, n, m, kind) = match system {
        System::Penalized { n, m } => (None, None, "penalized", n, m, Projection::None),
        System::LowerReflected { m } => (None, None, "lower-reflected", 0.0, m, Projection::Lower),
        System::UpperReflected { n } => (
            Some(spec.negated()),
            Some(traj.negated_transpose()),
            "upper-reflected",
            0.0,
            n,
            Projection::Lower,
        ),
        System::MinMax => (None, None, "minmax", 0.0, 0.0, Projection::MinMax),
        System::MaxMin => (None, None, "maxmin", 0.0, 0.0, Projection::MaxMin),
    };
    let spec_used = target.as_ref().unwrap_or(spec);
    let traj_used = traj_owned.as_ref().unwrap_or(traj);
    let engine = Engine::new(spec_used, &grids.space, grids.time, quadrature, cfg)?;
    let steps = grids.time.steps();
    let h = engine.terminal_field()?;
    let mut residuals = vec![0.0; steps + 1];
    let mut lower_violation = vec![0.0; steps + 1];
    let mut upper_violation = vec![0.0; steps + 1];
    residuals[steps] = traj_used.terminal().max_abs_diff(&h);
    let (lv, uv, _) = engine.level_diagnostics(traj_used.terminal(), None, kind)?;
    lower_violation[steps] = lv;
    upper_violation[steps] = uv;
    for k in 0..steps {
        let next = &traj_used.levels[k + 1];
        let pde = cfg
            .exec
            .try_map(grids.space.len(), |node| engine.explicit_update(next, node, n, m))?;
        let pde = if cfg.stepping == Stepping::Imex {
            // recompute through the full step so the implicit part is included
            let (_, pde, _) = engine.step(next, k, n, m, Projection::None)?;
            pde
        } else {
            pde
        };
        let (lv, uv, res) = engine.level_diagnostics(&traj_used.levels[k], Some(&pde), kind)?;
        residuals[k] = res;
        lower_violation[k] = lv;
        upper_violation[k] = uv;
    }
    let report = SolverReport {
        system: name.to_string(),
        n: None,
        m: None,
        nodes: grids.space.len(),
        steps,
        cfl: None,
        residuals,
        lower_violation,
        upper_violation,
        sweeps: Vec::new(),
        terminal_inconsistency: engine.terminal_inconsistency()?,
        schedule: None,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    Ok(match system {
        System::UpperReflected { n } => {
            let mut r = undo_negation(report, name);
            r.n = Some(n);
            r
        }
        System::Penalized { n, m } => SolverReport { n: Some(n), m: Some(m), ..report },
        System::LowerReflected { m } => SolverReport { m: Some(m), ..report },
        _ => report,
    })
}

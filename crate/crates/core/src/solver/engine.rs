//! The backward stepping loop shared by every system.

use std::time::Instant;

use super::{CflReport, SchemeConfig, SolverReport, Stepping, Trajectory};
use crate::discretization::{
    diffusion_diagonal, LevyQuadrature, Operators, SpatialGrid, TimeGrid, ValueField, MAX_DIM,
};
use crate::error::{Error, Result};
use crate::model::{
    lower_obstacle, penalty_term, upper_obstacle, validate_terminal_consistency, CostSnapshot, ProblemSpec,
};

/// Obstacle handling after the PDE update of each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Projection {
    None,
    /// `v = max(L[v], u)`.
    Lower,
    /// `v = min(U[v], u)`.
    Upper,
    /// `v = max(L[v], min(U[v], u))`: lower obstacle has priority.
    MinMax,
    /// `v = min(U[v], max(L[v], u))`: upper obstacle has priority.
    MaxMin,
}

#[inline]
fn project_one(u: f64, lo: f64, up: f64, kind: Projection) -> f64 {
    match kind {
        Projection::None => u,
        Projection::Lower => lo.max(u),
        Projection::Upper => up.min(u),
        Projection::MinMax => lo.max(up.min(u)),
        Projection::MaxMin => up.min(lo.max(u)),
    }
}

/// Residual of the discrete obstacle equation; zero exactly at the fixed
/// point of the corresponding projection.
#[inline]
pub fn projection_residual(v: f64, u: f64, lo: f64, up: f64, kind: Projection) -> f64 {
    match kind {
        Projection::None => v - u,
        Projection::Lower => (v - lo).min(v - u),
        Projection::Upper => (v - up).max(v - u),
        Projection::MinMax => (v - lo).min((v - up).max(v - u)),
        Projection::MaxMin => (v - up).max((v - lo).min(v - u)),
    }
}

/// Gauss-Seidel sweeps of the projection at one node. Pairs are visited in
/// lexicographic order, then in reverse, alternately. Returns the number of
/// sweeps performed, the last of which moved nothing by more than `tol`.
pub fn project_node(
    u: &[f64],
    costs: &CostSnapshot,
    kind: Projection,
    tol: f64,
    max_sweeps: usize,
) -> std::result::Result<(Vec<f64>, usize), f64> {
    let mut v = u.to_vec();
    if kind == Projection::None {
        return Ok((v, 0));
    }
    let modes = costs.modes;
    let np = modes.pair_count();
    let mut last = f64::INFINITY;
    for sweep in 0..max_sweeps {
        let mut change = 0.0f64;
        for s in 0..np {
            let p = if sweep % 2 == 0 { s } else { np - 1 - s };
            let (i, j) = modes.unpair(p);
            let lo = lower_obstacle(&v, costs, i, j);
            let up = upper_obstacle(&v, costs, i, j);
            let new = project_one(u[p], lo, up, kind);
            change = change.max((new - v[p]).abs());
            v[p] = new;
        }
        last = change;
        if change <= tol {
            return Ok((v, sweep + 1));
        }
    }
    Err(last)
}

pub struct Engine<'a> {
    pub spec: &'a ProblemSpec,
    pub grid: &'a SpatialGrid,
    pub time: TimeGrid,
    pub ops: Operators<'a>,
    pub cfg: &'a SchemeConfig,
    lipschitz: f64,
}

fn finite(v: f64, t: f64, node: usize, (i, j): (usize, usize), term: &'static str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteUpdate { t, node, i, j, term })
    }
}

impl<'a> Engine<'a> {
    pub fn new(
        spec: &'a ProblemSpec,
        grid: &'a SpatialGrid,
        time: TimeGrid,
        quadrature: &'a LevyQuadrature,
        cfg: &'a SchemeConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if (time.horizon() - spec.horizon).abs() > 1e-12 * spec.horizon {
            return Err(Error::InvalidParameter(format!(
                "time grid horizon {} differs from the problem horizon {}",
                time.horizon(),
                spec.horizon
            )));
        }
        if cfg.stepping == Stepping::Imex && grid.dim() != 1 {
            return Err(Error::Unsupported("IMEX stepping is implemented for one space dimension".into()));
        }
        let ops = Operators::new(spec, grid, quadrature)?;
        let mut engine = Engine {
            spec,
            grid,
            time,
            ops,
            cfg,
            lipschitz: 0.0,
        };
        engine.lipschitz = engine.probe_lipschitz()?;
        Ok(engine)
    }

    fn coords(&self, node: usize) -> [f64; MAX_DIM] {
        let mut x = [0.0; MAX_DIM];
        self.grid.node_coords(node, &mut x);
        x
    }

    /// Finite-difference estimate of the driver sensitivity entering the
    /// CFL bound, maxed with the declared constant.
    fn probe_lipschitz(&self) -> Result<f64> {
        let spec = self.spec;
        let (k, d) = (spec.dim, spec.brownian_dim);
        let np = spec.modes.pair_count();
        let mut sigma = vec![0.0; k * d];
        let mut best = spec.driver_lipschitz.unwrap_or(0.0);
        let z0 = vec![0.0; d];
        for node in 0..self.grid.len() {
            let x = self.coords(node);
            let x = &x[..k];
            let h: Vec<f64> = spec.modes.pairs().map(|(i, j)| spec.terminal(i, j, x)).collect::<Result<_>>()?;
            for t in [0.0, 0.5 * spec.horizon, spec.horizon] {
                spec.vol(t, x, &mut sigma)?;
                let zscale: Vec<f64> = (0..d)
                    .map(|s| (0..k).map(|r| sigma[r * d + s].abs() / self.grid.spacing()[r]).sum())
                    .collect();
                for y in [h.clone(), vec![0.0; np]] {
                    for (i, j) in spec.modes.pairs() {
                        let p = spec.modes.pair(i, j);
                        let g0 = spec.driver(i, j, t, x, &y, &z0, 0.0)?;
                        let mut lip = 0.0;
                        for a in 0..np {
                            let eps = 1e-6 * (1.0 + y[a].abs());
                            let mut y2 = y.clone();
                            y2[a] += eps;
                            lip += ((spec.driver(i, j, t, x, &y2, &z0, 0.0)? - g0) / eps).abs();
                        }
                        let eps = 1e-6;
                        let dq = (spec.driver(i, j, t, x, &y, &z0, eps)? - g0) / eps;
                        let mass: f64 = (0..self.ops.atom_count()).map(|a| self.ops.gamma_weight(node, p, a)).sum();
                        lip += dq.abs() * mass;
                        for s in 0..d {
                            let mut z = z0.clone();
                            z[s] = eps;
                            let dz = (spec.driver(i, j, t, x, &y, &z, 0.0)? - g0) / eps;
                            lip += dz.abs() * zscale[s];
                        }
                        best = best.max(lip);
                    }
                }
            }
        }
        Ok(best)
    }

    /// CFL rate over the given times: `sum_d 2 a_dd / dx^2` (explicit
    /// stepping only) `+ sum_d (|b_d| + |c_d|) / dx + Lambda + n + m + Lip_g`.
    pub fn rate_at_times(&self, times: &[f64], n: f64, m: f64) -> Result<CflReport> {
        let spec = self.spec;
        let (k, d) = (spec.dim, spec.brownian_dim);
        let mut b = vec![0.0; k];
        let mut sigma = vec![0.0; k * d];
        let mut diffusion = 0.0f64;
        let mut drift = 0.0f64;
        let mut local = 0.0f64;
        for &t in times {
            for node in 0..self.grid.len() {
                let x = self.coords(node);
                spec.drift(t, &x[..k], &mut b)?;
                spec.vol(t, &x[..k], &mut sigma)?;
                let a = diffusion_diagonal(&sigma, k, d)?;
                let sj = self.ops.small_diffusion(node);
                let c = self.ops.compensator(node);
                let (mut df, mut dr) = (0.0, 0.0);
                for r in 0..k {
                    let hh = self.grid.spacing()[r];
                    df += 2.0 * (a[r] + sj[r]) / (hh * hh);
                    dr += (b[r].abs() + c[r].abs()) / hh;
                }
                if self.cfg.stepping == Stepping::Imex {
                    df = 0.0;
                }
                if df + dr > local {
                    local = df + dr;
                    diffusion = df;
                    drift = dr;
                }
            }
        }
        let jump = self.ops.jump_intensity_scale();
        let rate = local + jump + n + m + self.lipschitz;
        Ok(CflReport {
            dt: 0.0,
            rate,
            product: 0.0,
            safety: self.cfg.cfl_safety,
            diffusion,
            drift,
            jump_intensity: jump,
            penalty: n + m,
            driver_lipschitz: self.lipschitz,
        })
    }

    /// CFL data on this engine's time grid (coefficients at every `t_{k+1}`).
    pub fn cfl(&self, n: f64, m: f64) -> Result<CflReport> {
        let times: Vec<f64> = (1..=self.time.steps()).map(|k| self.time.t(k)).collect();
        let mut r = self.rate_at_times(&times, n, m)?;
        r.dt = self.time.dt();
        r.product = r.dt * r.rate;
        Ok(r)
    }

    pub fn check_cfl(&self, n: f64, m: f64) -> Result<CflReport> {
        let r = self.cfl(n, m)?;
        if !(r.product <= r.safety) {
            return Err(Error::Cfl {
                dt: r.dt,
                rate: r.rate,
                product: r.product,
                safety: r.safety,
            });
        }
        Ok(r)
    }

    pub fn terminal_field(&self) -> Result<ValueField> {
        let spec = self.spec;
        let k = spec.dim;
        let rows = self.cfg.exec.try_map(self.grid.len(), |node| {
            let x = self.coords(node);
            spec.modes.pairs().map(|(i, j)| spec.terminal(i, j, &x[..k])).collect::<Result<Vec<f64>>>()
        })?;
        Ok(ValueField::from_node_rows(self.time.horizon(), spec.modes, &rows))
    }

    pub fn terminal_inconsistency(&self) -> Result<f64> {
        let xs: Vec<Vec<f64>> = (0..self.grid.len()).map(|n| self.grid.node_point(n)).collect();
        let r = validate_terminal_consistency(self.spec, &xs)?;
        Ok(if r.passed { 0.0 } else { r.worst })
    }

    /// PDE update at one node from level `next` (time `t_{k+1}`): returns
    /// `v_{k+1} + dt [Lbar v + I(v) + g + penalties]` for every pair. The
    /// diffusion is left out under IMEX stepping.
    pub fn explicit_update(&self, next: &ValueField, node: usize, n: f64, m: f64) -> Result<Vec<f64>> {
        let spec = self.spec;
        let (k, d) = (spec.dim, spec.brownian_dim);
        let t = next.t;
        let dt = self.time.dt();
        let x = self.coords(node);
        let x = &x[..k];
        let mut b = [0.0; MAX_DIM];
        spec.drift(t, x, &mut b[..k])?;
        let mut sigma = [0.0; MAX_DIM * MAX_DIM];
        spec.vol(t, x, &mut sigma[..k * d])?;
        let mut a = diffusion_diagonal(&sigma[..k * d], k, d)?;
        if self.cfg.stepping == Stepping::Imex {
            a = [0.0; MAX_DIM];
        }
        let costs = spec.cost_snapshot(t, x)?;
        let y = next.at_node(node);
        let mut out = Vec::with_capacity(y.len());
        let mut z = [0.0; MAX_DIM * MAX_DIM];
        for (i, j) in spec.modes.pairs() {
            let p = spec.modes.pair(i, j);
            let surface = &next.values[p];
            let mut lin = self.ops.local_generator_diag(surface, node, &b[..k], &a[..k]);
            lin += self.ops.nonlocal_generator_upwind(surface, node);
            if self.cfg.stepping == Stepping::Imex {
                // small-jump diffusion joins the implicit part
                lin -= (0..k)
                    .map(|r| 0.5 * self.ops.small_diffusion(node)[r] * self.ops.second_difference(surface, node, r))
                    .sum::<f64>();
            }
            let lin = finite(lin, t, node, (i, j), "generator")?;
            let grad = self.ops.central_gradient(surface, node);
            for s in 0..d {
                z[s] = (0..k).map(|r| sigma[r * d + s] * grad[r]).sum();
            }
            let q = finite(self.ops.nonlocal_driver_term(surface, node, p), t, node, (i, j), "jump term")?;
            let g = spec.driver(i, j, t, x, &y, &z[..d], q)?;
            let g = finite(g, t, node, (i, j), "driver")?;
            let pen = penalty_term(y[p], lower_obstacle(&y, &costs, i, j), upper_obstacle(&y, &costs, i, j), n, m);
            let pen = finite(pen, t, node, (i, j), "penalty")?;
            out.push(finite(y[p] + dt * (lin + g + pen), t, node, (i, j), "update")?);
        }
        Ok(out)
    }

    /// Implicit diffusion solve for every pair (1-D, Thomas algorithm).
    fn implicit_diffusion(&self, t: f64, rows: &mut [Vec<f64>]) -> Result<()> {
        let spec = self.spec;
        let nodes = self.grid.len();
        let h = self.grid.spacing()[0];
        let dt = self.time.dt();
        let d = spec.brownian_dim;
        let mut alpha = vec![0.0; nodes];
        let mut sigma = vec![0.0; d];
        for (node, al) in alpha.iter_mut().enumerate() {
            let x = self.coords(node);
            spec.vol(t, &x[..1], &mut sigma)?;
            let a: f64 = sigma.iter().map(|s| s * s).sum::<f64>() + self.ops.small_diffusion(node)[0];
            *al = 0.5 * a / (h * h) * dt;
        }
        let np = spec.modes.pair_count();
        let (lo_off, hi_off) = (self.ops.ghost_offset(0, 0, -1), self.ops.ghost_offset(nodes - 1, 0, 1));
        let mut diag = vec![0.0; nodes];
        let mut rhs = vec![0.0; nodes];
        let mut cp = vec![0.0; nodes];
        for p in 0..np {
            for node in 0..nodes {
                diag[node] = 1.0 + 2.0 * alpha[node];
                rhs[node] = rows[node][p];
            }
            diag[0] -= alpha[0];
            rhs[0] += alpha[0] * lo_off;
            diag[nodes - 1] -= alpha[nodes - 1];
            rhs[nodes - 1] += alpha[nodes - 1] * hi_off;
            // sub-diagonal and super-diagonal are -alpha[node]
            cp[0] = -alpha[0] / diag[0];
            rhs[0] /= diag[0];
            for node in 1..nodes {
                let den = diag[node] + alpha[node] * cp[node - 1];
                cp[node] = -alpha[node] / den;
                rhs[node] = (rhs[node] + alpha[node] * rhs[node - 1]) / den;
            }
            for node in (0..nodes - 1).rev() {
                rhs[node] -= cp[node] * rhs[node + 1];
            }
            for node in 0..nodes {
                rows[node][p] = rhs[node];
            }
        }
        Ok(())
    }

    /// One backward step from level `k + 1` to level `k`. Returns the new
    /// field, the PDE values before projection and the sweeps used.
    pub fn step(
        &self,
        next: &ValueField,
        k: usize,
        n: f64,
        m: f64,
        kind: Projection,
    ) -> Result<(ValueField, Vec<Vec<f64>>, usize)> {
        let spec = self.spec;
        let nodes = self.grid.len();
        let t = self.time.t(k);
        let mut pde = self.cfg.exec.try_map(nodes, |node| self.explicit_update(next, node, n, m))?;
        if self.cfg.stepping == Stepping::Imex {
            self.implicit_diffusion(next.t, &mut pde)?;
        }
        let projected = self.cfg.exec.try_map(nodes, |node| {
            let x = self.coords(node);
            let costs = spec.cost_snapshot(t, &x[..spec.dim])?;
            project_node(&pde[node], &costs, kind, self.cfg.sweep_tol, self.cfg.max_sweeps).map_err(|residual| {
                Error::SweepNonConvergence {
                    t,
                    sweeps: self.cfg.max_sweeps,
                    residual,
                }
            })
        })?;
        let sweeps = projected.iter().map(|(_, s)| *s).max().unwrap_or(0);
        let rows: Vec<Vec<f64>> = projected.into_iter().map(|(v, _)| v).collect();
        Ok((ValueField::from_node_rows(t, spec.modes, &rows), pde, sweeps))
    }

    /// Obstacle violation norms and the projection residual of `field`
    /// against the PDE values `pde`.
    pub fn level_diagnostics(&self, field: &ValueField, pde: Option<&[Vec<f64>]>, kind: Projection) -> Result<(f64, f64, f64)> {
        let spec = self.spec;
        let per_node = self.cfg.exec.try_map(self.grid.len(), |node| {
            let x = self.coords(node);
            let costs = spec.cost_snapshot(field.t, &x[..spec.dim])?;
            let v = field.at_node(node);
            let (mut lv, mut uv, mut res) = (0.0f64, 0.0f64, 0.0f64);
            for (i, j) in spec.modes.pairs() {
                let p = spec.modes.pair(i, j);
                let lo = lower_obstacle(&v, &costs, i, j);
                let up = upper_obstacle(&v, &costs, i, j);
                if lo.is_finite() {
                    lv = lv.max(lo - v[p]);
                }
                if up.is_finite() {
                    uv = uv.max(v[p] - up);
                }
                if let Some(pde) = pde {
                    res = res.max(projection_residual(v[p], pde[node][p], lo, up, kind).abs());
                }
            }
            Ok::<_, Error>((lv, uv, res))
        })?;
        Ok(per_node
            .into_iter()
            .fold((0.0, 0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1), a.2.max(b.2))))
    }

    /// Full backward solve.
    pub fn run(&self, system: &str, n: f64, m: f64, kind: Projection) -> Result<(Trajectory, SolverReport)> {
        let start = Instant::now();
        let inconsistency = self.terminal_inconsistency()?;
        if inconsistency > 0.0 && !self.cfg.override_a4 {
            return Err(Error::TerminalInconsistent { magnitude: inconsistency });
        }
        let cfl = self.check_cfl(n, m)?;
        let steps = self.time.steps();
        let mut levels = vec![self.terminal_field()?];
        let (lv, uv, _) = self.level_diagnostics(&levels[0], None, kind)?;
        let mut residuals = vec![0.0];
        let mut lower_violation = vec![lv];
        let mut upper_violation = vec![uv];
        let mut sweeps = Vec::with_capacity(steps);
        for k in (0..steps).rev() {
            let (field, pde, used) = self.step(levels.last().expect("non-empty"), k, n, m, kind)?;
            let (lv, uv, res) = self.level_diagnostics(&field, Some(&pde), kind)?;
            residuals.push(res);
            lower_violation.push(lv);
            upper_violation.push(uv);
            sweeps.push(used);
            levels.push(field);
        }
        levels.reverse();
        residuals.reverse();
        lower_violation.reverse();
        upper_violation.reverse();
        sweeps.reverse();
        let report = SolverReport {
            system: system.to_string(),
            n: Some(n),
            m: Some(m),
            nodes: self.grid.len(),
            steps,
            cfl: Some(cfl),
            residuals,
            lower_violation,
            upper_violation,
            sweeps,
            terminal_inconsistency: inconsistency,
            schedule: None,
            wall_clock_seconds: start.elapsed().as_secs_f64(),
        };
        Ok((Trajectory { levels }, report))
    }
}

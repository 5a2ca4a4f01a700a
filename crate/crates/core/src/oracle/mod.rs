//! Brute-force reference solver.
//!
//! The explicit scheme is rewritten as a finite-state Markov game: every
//! backward step is a dense transition matrix `P = I + dt A` over the grid
//! nodes, an additive vector from the growth extrapolation, and a running
//! reward `dt g`. The tables are assembled here from the model directly,
//! without the solver's operator code, so that a stencil bug on either side
//! shows up as a disagreement.

use nalgebra::{DMatrix, DVector};

use crate::discretization::{LevyQuadrature, ValueField};
use crate::error::{Error, Result};
use crate::model::{CostSnapshot, GrowthBound, ModeSet, ProblemSpec};
use crate::solver::{Grids, SchemeConfig, Stepping, Trajectory};

/// Largest node count the dense tables accept.
pub const MAX_ORACLE_NODES: usize = 2048;

/// Obstacle priority used by [`backward_induction`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Order {
    /// Lower obstacle has priority: `max(L, min(U, u))`.
    MinMax,
    /// Upper obstacle has priority: `min(U, max(L, u))`.
    MaxMin,
}

/// Test hook: moves `delta` of probability mass from the self-loop of
/// `node` to its successor along the first axis, at every step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Perturbation {
    pub node: usize,
    pub delta: f64,
}

/// A dense linear functional `rows * v + offset`, one row per node.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMap {
    pub matrix: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl DenseMap {
    fn zeros(nodes: usize) -> Self {
        DenseMap {
            matrix: DMatrix::zeros(nodes, nodes),
            offset: DVector::zeros(nodes),
        }
    }

    /// Applies the map to every column of `v`.
    pub fn apply(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = &self.matrix * v;
        for mut col in out.column_iter_mut() {
            col += &self.offset;
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct DiscreteGame {
    pub spec: ProblemSpec,
    pub modes: ModeSet,
    pub points: Vec<Vec<f64>>,
    pub times: Vec<f64>,
    pub dt: f64,
    /// `kernels[k]` maps level `k + 1` to the expected continuation at `k`.
    pub kernels: Vec<DenseMap>,
    /// Per pair: the jump increments `sum gamma w (v(x + beta) - v(x))`.
    pub jump_terms: Vec<DenseMap>,
    /// Per axis: central differences.
    pub gradients: Vec<DenseMap>,
    /// `vols[k][node]`, row-major k x d at time `t_{k+1}`.
    pub vols: Vec<Vec<Vec<f64>>>,
    /// `costs[k][node]` at time `t_k`, `k = 0..=N`.
    pub costs: Vec<Vec<CostSnapshot>>,
    /// `terminal[pair][node]`.
    pub terminal: Vec<Vec<f64>>,
}

/// `(node, weight)` pairs of the multilinear interpolation at `x`, plus the
/// growth extrapolation constant.
fn interpolation_weights(grids: &Grids, growth: &GrowthBound, x: &[f64]) -> (Vec<(usize, f64)>, f64) {
    let g = &grids.space;
    let mut offset = 0.0;
    let mut axes: Vec<[(usize, f64); 2]> = Vec::new();
    for (d, &xq) in x.iter().enumerate() {
        let (lo, hi, n) = (g.lower()[d], g.upper()[d], g.counts()[d]);
        let xb = xq.max(lo).min(hi);
        if xb != xq && xb != 0.0 && growth.c != 0.0 {
            offset += xb.signum() * growth.c * (xq.abs().powf(growth.exponent) - xb.abs().powf(growth.exponent));
        }
        let s = (xb - lo) / g.spacing()[d];
        let mut cell = (s.floor().max(0.0) as usize).min(n - 2);
        let mut f = s - cell as f64;
        if f < 1e-10 {
            f = 0.0;
        }
        if f > 1.0 - 1e-10 {
            if cell + 2 < n {
                cell += 1;
                f = 0.0;
            } else {
                f = 1.0;
            }
        }
        axes.push([(cell, 1.0 - f), (cell + 1, f)]);
    }
    let mut out: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 1.0)];
    for axis in &axes {
        let mut grown = Vec::new();
        for (idx, w) in &out {
            for &(i, wa) in axis {
                if wa != 0.0 {
                    let mut idx = idx.clone();
                    idx.push(i);
                    grown.push((idx, w * wa));
                }
            }
        }
        out = grown;
    }
    (out.into_iter().map(|(idx, w)| (g.flat_index(&idx), w)).collect(), offset)
}

/// Adds `weight` times "the value one step from `node` along `d` in
/// direction `dir`" to row `node` of `map`; beyond the box the boundary
/// value is extended with the growth term.
fn add_neighbour(map: &mut DenseMap, grids: &Grids, growth: &GrowthBound, node: usize, d: usize, dir: i32, weight: f64) {
    let g = &grids.space;
    match g.neighbour(node, d, dir) {
        Some(nb) => map.matrix[(node, nb)] += weight,
        None => {
            map.matrix[(node, node)] += weight;
            let x = g.node_point(node)[d];
            let xq = x + dir as f64 * g.spacing()[d];
            if growth.c != 0.0 && x != 0.0 {
                let ghost = x.signum() * growth.c * (xq.abs().powf(growth.exponent) - x.abs().powf(growth.exponent));
                map.offset[node] += weight * ghost;
            }
        }
    }
}

/// Upwind first difference along `d` times `speed`.
fn add_upwind(map: &mut DenseMap, grids: &Grids, growth: &GrowthBound, node: usize, d: usize, speed: f64, scale: f64) {
    let h = grids.space.spacing()[d];
    if speed > 0.0 {
        add_neighbour(map, grids, growth, node, d, 1, scale * speed / h);
        map.matrix[(node, node)] -= scale * speed / h;
    } else if speed < 0.0 {
        add_neighbour(map, grids, growth, node, d, -1, -scale * speed / h);
        map.matrix[(node, node)] += scale * speed / h;
    }
}

pub fn build_discrete_game(
    spec: &ProblemSpec,
    grids: &Grids,
    quadrature: &LevyQuadrature,
    scheme: &SchemeConfig,
) -> Result<DiscreteGame> {
    build_discrete_game_with(spec, grids, quadrature, scheme, None)
}

/// [`build_discrete_game`] with an optional stencil perturbation.
pub fn build_discrete_game_with(
    spec: &ProblemSpec,
    grids: &Grids,
    quadrature: &LevyQuadrature,
    scheme: &SchemeConfig,
    perturbation: Option<Perturbation>,
) -> Result<DiscreteGame> {
    if scheme.stepping != Stepping::Explicit {
        return Err(Error::Unsupported("the oracle reproduces explicit stepping only".into()));
    }
    let g = &grids.space;
    let nodes = g.len();
    if nodes > MAX_ORACLE_NODES {
        return Err(Error::InvalidParameter(format!(
            "{nodes} nodes exceed the oracle limit of {MAX_ORACLE_NODES}"
        )));
    }
    if g.dim() != spec.dim {
        return Err(Error::InvalidParameter("grid and problem dimensions differ".into()));
    }
    let (k, d, l) = (spec.dim, spec.brownian_dim, spec.mark_dim);
    let modes = spec.modes;
    let growth = spec.growth;
    let steps = grids.time.steps();
    let dt = grids.time.dt();
    let times = grids.time.times();
    let points: Vec<Vec<f64>> = (0..nodes).map(|n| g.node_point(n)).collect();

    // time-independent parts: jumps, small-jump diffusion, compensator
    let mut jump_generator = DenseMap::zeros(nodes);
    let mut jump_terms: Vec<DenseMap> = (0..modes.pair_count()).map(|_| DenseMap::zeros(nodes)).collect();
    let mut gradients: Vec<DenseMap> = (0..k).map(|_| DenseMap::zeros(nodes)).collect();
    let mut beta = vec![0.0; k];
    let mut jac = vec![0.0; k * l];
    for (node, x) in points.iter().enumerate() {
        let mut comp = vec![0.0; k];
        for atom in &quadrature.atoms {
            spec.jump_amplitude(x, &atom.mark, &mut beta)?;
            let target: Vec<f64> = x.iter().zip(&beta).map(|(a, b)| a + b).collect();
            let (weights, off) = interpolation_weights(grids, &growth, &target);
            for (c, b) in comp.iter_mut().zip(&beta) {
                *c -= atom.weight * b;
            }
            for &(nb, w) in &weights {
                jump_generator.matrix[(node, nb)] += atom.weight * w;
            }
            jump_generator.matrix[(node, node)] -= atom.weight;
            jump_generator.offset[node] += atom.weight * off;
            for (i, j) in modes.pairs() {
                let gw = spec.jump_weight(i, j, x, &atom.mark)? * atom.weight;
                if gw == 0.0 {
                    continue;
                }
                let map = &mut jump_terms[modes.pair(i, j)];
                for &(nb, w) in &weights {
                    map.matrix[(node, nb)] += gw * w;
                }
                map.matrix[(node, node)] -= gw;
                map.offset[node] += gw * off;
            }
        }
        for (dd, &c) in comp.iter().enumerate() {
            add_upwind(&mut jump_generator, grids, &growth, node, dd, c, 1.0);
        }
        if quadrature.small_jump_moment > 0.0 {
            spec.small_jump_jacobian(x, &mut jac)?;
            for dd in 0..k {
                let s: f64 = (0..l).map(|e| jac[dd * l + e] * jac[dd * l + e]).sum::<f64>();
                let a = quadrature.small_jump_moment / l as f64 * s;
                let h2 = g.spacing()[dd] * g.spacing()[dd];
                add_neighbour(&mut jump_generator, grids, &growth, node, dd, 1, 0.5 * a / h2);
                add_neighbour(&mut jump_generator, grids, &growth, node, dd, -1, 0.5 * a / h2);
                jump_generator.matrix[(node, node)] -= a / h2;
            }
        }
        for (dd, map) in gradients.iter_mut().enumerate() {
            let h = g.spacing()[dd];
            add_neighbour(map, grids, &growth, node, dd, 1, 0.5 / h);
            add_neighbour(map, grids, &growth, node, dd, -1, -0.5 / h);
        }
    }

    let mut kernels = Vec::with_capacity(steps);
    let mut vols = Vec::with_capacity(steps);
    let mut b = vec![0.0; k];
    for step in 0..steps {
        let t = times[step + 1];
        let mut gen = jump_generator.clone();
        let mut vol_rows = Vec::with_capacity(nodes);
        for (node, x) in points.iter().enumerate() {
            spec.drift(t, x, &mut b)?;
            let mut sigma = vec![0.0; k * d];
            spec.vol(t, x, &mut sigma)?;
            for dd in 0..k {
                add_upwind(&mut gen, grids, &growth, node, dd, b[dd], 1.0);
                let a: f64 = (0..d).map(|s| sigma[dd * d + s] * sigma[dd * d + s]).sum();
                for other in 0..k {
                    if other != dd {
                        let cross: f64 = (0..d).map(|s| sigma[dd * d + s] * sigma[other * d + s]).sum();
                        if cross.abs() > 1e-12 * (1.0 + a.abs()) {
                            return Err(Error::Unsupported("non-diagonal diffusion".into()));
                        }
                    }
                }
                let h2 = g.spacing()[dd] * g.spacing()[dd];
                add_neighbour(&mut gen, grids, &growth, node, dd, 1, 0.5 * a / h2);
                add_neighbour(&mut gen, grids, &growth, node, dd, -1, 0.5 * a / h2);
                gen.matrix[(node, node)] -= a / h2;
            }
            vol_rows.push(sigma);
        }
        let mut kernel = DenseMap {
            matrix: DMatrix::identity(nodes, nodes) + gen.matrix * dt,
            offset: gen.offset * dt,
        };
        if let Some(p) = perturbation {
            if p.node < nodes {
                let nb = (p.node + 1).min(nodes - 1);
                kernel.matrix[(p.node, p.node)] -= p.delta;
                kernel.matrix[(p.node, nb)] += p.delta;
            }
        }
        let worst = kernel.matrix.iter().cloned().fold(f64::INFINITY, f64::min);
        if worst < 0.0 {
            let rate = (1.0 - worst) / dt;
            return Err(Error::Cfl {
                dt,
                rate,
                product: dt * rate,
                safety: 1.0,
            });
        }
        kernels.push(kernel);
        vols.push(vol_rows);
    }

    let costs = times
        .iter()
        .map(|&t| points.iter().map(|x| spec.cost_snapshot(t, x)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let terminal = modes
        .pairs()
        .map(|(i, j)| points.iter().map(|x| spec.terminal(i, j, x)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    Ok(DiscreteGame {
        spec: spec.clone(),
        modes,
        points,
        times,
        dt,
        kernels,
        jump_terms,
        gradients,
        vols,
        costs,
        terminal,
    })
}

impl DiscreteGame {
    pub fn nodes(&self) -> usize {
        self.points.len()
    }

    pub fn steps(&self) -> usize {
        self.kernels.len()
    }

    /// Largest `|sum_j P_ij - 1|` over all kernels.
    pub fn normalization_error(&self) -> f64 {
        self.kernels
            .iter()
            .flat_map(|kern| kern.matrix.row_iter().map(|r| (r.sum() - 1.0).abs()).collect::<Vec<_>>())
            .fold(0.0, f64::max)
    }
}

fn lower_bound(v: &[f64], costs: &CostSnapshot, modes: ModeSet, i: usize, j: usize) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for other in (0..modes.m1).filter(|&o| o != i) {
        best = best.max(v[other * modes.m2 + j] - costs.lower_cost(i, other));
    }
    best
}

fn upper_bound(v: &[f64], costs: &CostSnapshot, modes: ModeSet, i: usize, j: usize) -> f64 {
    let mut best = f64::INFINITY;
    for other in (0..modes.m2).filter(|&o| o != j) {
        best = best.min(v[i * modes.m2 + other] + costs.upper_cost(j, other));
    }
    best
}

/// Exact dynamic programming over the game. Level `k` is
/// `project(P_k v_{k+1} + offset_k + dt g)`, with the projection iterated to
/// its fixed point using the solver's sweep order and tolerance.
pub fn backward_induction(game: &DiscreteGame, order: Order, scheme: &SchemeConfig) -> Result<Trajectory> {
    let modes = game.modes;
    let (nodes, np) = (game.nodes(), modes.pair_count());
    let spec = &game.spec;
    let (k, d) = (spec.dim, spec.brownian_dim);
    let mut value = DMatrix::from_fn(nodes, np, |n, p| game.terminal[p][n]);
    let mut levels = vec![to_field(&value, *game.times.last().expect("non-empty"), modes)];
    for step in (0..game.steps()).rev() {
        let t_next = game.times[step + 1];
        let t = game.times[step];
        let cont = game.kernels[step].apply(&value);
        let grads: Vec<DMatrix<f64>> = game.gradients.iter().map(|g| g.apply(&value)).collect();
        let mut next = DMatrix::zeros(nodes, np);
        for n in 0..nodes {
            let y: Vec<f64> = value.row(n).iter().cloned().collect();
            let sigma = &game.vols[step][n];
            let mut u = vec![0.0; np];
            for (i, j) in modes.pairs() {
                let p = modes.pair(i, j);
                let z: Vec<f64> = (0..d).map(|s| (0..k).map(|r| sigma[r * d + s] * grads[r][(n, p)]).sum()).collect();
                let jt = &game.jump_terms[p];
                let q = jt.matrix.row(n).dot(&value.column(p).transpose()) + jt.offset[n];
                let reward = spec.driver(i, j, t_next, &game.points[n], &y, &z, q)?;
                u[p] = cont[(n, p)] + game.dt * reward;
            }
            let costs = &game.costs[step][n];
            let mut v = u.clone();
            let mut settled = false;
            for sweep in 0..scheme.max_sweeps {
                let mut moved = 0.0f64;
                let visit: Vec<usize> = if sweep % 2 == 0 { (0..np).collect() } else { (0..np).rev().collect() };
                for p in visit {
                    let (i, j) = modes.unpair(p);
                    let lo = lower_bound(&v, costs, modes, i, j);
                    let up = upper_bound(&v, costs, modes, i, j);
                    let new = match order {
                        Order::MinMax => lo.max(up.min(u[p])),
                        Order::MaxMin => up.min(lo.max(u[p])),
                    };
                    moved = moved.max((new - v[p]).abs());
                    v[p] = new;
                }
                if moved <= scheme.sweep_tol {
                    settled = true;
                    break;
                }
            }
            if !settled {
                return Err(Error::SweepNonConvergence {
                    t,
                    sweeps: scheme.max_sweeps,
                    residual: f64::NAN,
                });
            }
            for p in 0..np {
                next[(n, p)] = v[p];
            }
        }
        value = next;
        levels.push(to_field(&value, t, modes));
    }
    levels.reverse();
    Ok(Trajectory { levels })
}

fn to_field(v: &DMatrix<f64>, t: f64, modes: ModeSet) -> ValueField {
    ValueField {
        t,
        modes,
        values: v.column_iter().map(|c| c.iter().cloned().collect()).collect(),
    }
}

//! Interconnected obstacles and the penalized driver.

use super::{ModeSet, ProblemSpec};
use crate::discretization::LevyQuadrature;
use crate::error::{Error, Result};

/// Switching costs of both players evaluated at one `(t, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSnapshot {
    pub modes: ModeSet,
    /// Row-major `m1 x m1`, diagonal unused.
    pub lower: Vec<f64>,
    /// Row-major `m2 x m2`, diagonal unused.
    pub upper: Vec<f64>,
}

impl CostSnapshot {
    pub fn constant(modes: ModeSet, lower: f64, upper: f64) -> Self {
        CostSnapshot {
            modes,
            lower: vec![lower; modes.m1 * modes.m1],
            upper: vec![upper; modes.m2 * modes.m2],
        }
    }

    #[inline]
    pub fn lower_cost(&self, i: usize, k: usize) -> f64 {
        self.lower[i * self.modes.m1 + k]
    }

    #[inline]
    pub fn upper_cost(&self, j: usize, l: usize) -> f64 {
        self.upper[j * self.modes.m2 + l]
    }
}

/// `L^{ij} = max_{k != i} (y^{kj} - lower_{ik})`, or `-inf` when the
/// maximizer has a single mode.
#[inline]
pub fn lower_obstacle(y: &[f64], costs: &CostSnapshot, i: usize, j: usize) -> f64 {
    let modes = costs.modes;
    let mut best = f64::NEG_INFINITY;
    for k in 0..modes.m1 {
        if k != i {
            best = best.max(y[modes.pair(k, j)] - costs.lower_cost(i, k));
        }
    }
    best
}

/// `U^{ij} = min_{l != j} (y^{il} + upper_{jl})`, or `+inf` when the
/// minimizer has a single mode.
#[inline]
pub fn upper_obstacle(y: &[f64], costs: &CostSnapshot, i: usize, j: usize) -> f64 {
    let modes = costs.modes;
    let mut best = f64::INFINITY;
    for l in 0..modes.m2 {
        if l != j {
            best = best.min(y[modes.pair(i, l)] + costs.upper_cost(j, l));
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct Obstacles {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

pub fn eval_obstacles(y: &[f64], costs: &CostSnapshot) -> Obstacles {
    let modes = costs.modes;
    let mut lower = Vec::with_capacity(modes.pair_count());
    let mut upper = Vec::with_capacity(modes.pair_count());
    for (i, j) in modes.pairs() {
        lower.push(lower_obstacle(y, costs, i, j));
        upper.push(upper_obstacle(y, costs, i, j));
    }
    Obstacles { lower, upper }
}

/// `n (y - L)^- - m (y - U)^+`; an infinite obstacle contributes nothing.
#[inline]
pub fn penalty_term(y: f64, lower: f64, upper: f64, n: f64, m: f64) -> f64 {
    let mut p = 0.0;
    if n > 0.0 && lower.is_finite() && y < lower {
        p += n * (lower - y);
    }
    if m > 0.0 && upper.is_finite() && y > upper {
        p -= m * (y - upper);
    }
    p
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::NumericDomain(format!("{what} contains non-finite value {v}")));
    }
    Ok(())
}

/// Penalized driver `g^{ij}(t,x,y,z,q) + n (y^{ij} - L^{ij})^- - m (y^{ij} - U^{ij})^+`.
#[allow(clippy::too_many_arguments)]
pub fn eval_penalized_driver(
    spec: &ProblemSpec,
    (i, j): (usize, usize),
    n: f64,
    m: f64,
    t: f64,
    x: &[f64],
    y: &[f64],
    z: &[f64],
    q: f64,
) -> Result<f64> {
    if !(n >= 0.0 && n.is_finite() && m >= 0.0 && m.is_finite()) {
        return Err(Error::NumericDomain(format!(
            "penalty parameters must be finite and non-negative (n = {n}, m = {m})"
        )));
    }
    check_finite(&[t], "t")?;
    check_finite(x, "x")?;
    check_finite(y, "y")?;
    check_finite(z, "z")?;
    check_finite(&[q], "q")?;
    let costs = spec.cost_snapshot(t, x)?;
    let g = spec.driver(i, j, t, x, y, z, q)?;
    let own = y[spec.modes.pair(i, j)];
    let lo = lower_obstacle(y, &costs, i, j);
    let up = upper_obstacle(y, &costs, i, j);
    Ok(g + penalty_term(own, lo, up, n, m))
}

/// `f^{ij}(t,x,y,z,u) = g^{ij}(t,x,y,z, sum_k u(e_k) gamma^{ij}(x,e_k) w_k)`.
#[allow(clippy::too_many_arguments)]
pub fn eval_f_ij(
    spec: &ProblemSpec,
    (i, j): (usize, usize),
    t: f64,
    x: &[f64],
    y: &[f64],
    z: &[f64],
    u: impl Fn(&[f64]) -> f64,
    quadrature: &LevyQuadrature,
) -> Result<f64> {
    let mut q = 0.0;
    for atom in &quadrature.atoms {
        let gamma = spec.jump_weight(i, j, x, &atom.mark)?;
        q += u(&atom.mark) * gamma * atom.weight;
    }
    spec.driver(i, j, t, x, y, z, q)
}

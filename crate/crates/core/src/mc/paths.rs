use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::discretization::LevyQuadrature;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::ProblemSpec;

/// Simulated Euler paths of the controlled-free state process.
///
/// Path `p` draws from the ChaCha8 stream `p` of `seed`, so a batch is
/// reproducible regardless of how paths are scheduled.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBatch {
    pub x0: Vec<f64>,
    pub dim: usize,
    pub brownian_dim: usize,
    pub paths: usize,
    pub steps: usize,
    pub horizon: f64,
    pub seed: u64,
    /// `[(path * (steps + 1) + level) * dim + d]`
    states: Vec<f64>,
    /// `[(path * steps + step) * brownian_dim + s]`
    increments: Vec<f64>,
    /// Atom indices of the jumps of step `(path, step)` are
    /// `jump_atoms[jump_offsets[c]..jump_offsets[c + 1]]`, `c = path * steps + step`.
    jump_offsets: Vec<usize>,
    jump_atoms: Vec<u32>,
}

struct OnePath {
    states: Vec<f64>,
    increments: Vec<f64>,
    jumps: Vec<Vec<u32>>,
}

impl PathBatch {
    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, level: usize) -> f64 {
        if level == self.steps {
            self.horizon
        } else {
            self.horizon * level as f64 / self.steps as f64
        }
    }

    pub fn state(&self, path: usize, level: usize) -> &[f64] {
        let at = (path * (self.steps + 1) + level) * self.dim;
        &self.states[at..at + self.dim]
    }

    pub fn increment(&self, path: usize, step: usize) -> &[f64] {
        let at = (path * self.steps + step) * self.brownian_dim;
        &self.increments[at..at + self.brownian_dim]
    }

    /// Atom indices of the jumps during step `step` of `path`.
    pub fn jumps(&self, path: usize, step: usize) -> &[u32] {
        let c = path * self.steps + step;
        &self.jump_atoms[self.jump_offsets[c]..self.jump_offsets[c + 1]]
    }

    pub fn jump_count(&self, path: usize) -> usize {
        let c = path * self.steps;
        self.jump_offsets[c + self.steps] - self.jump_offsets[c]
    }

    /// `path,level,t,x0..,jumps` with the atom indices of the step ending at
    /// `level` separated by `;`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let xs: Vec<String> = (0..self.dim).map(|d| format!("x{d}")).collect();
        writeln!(w, "path,level,t,{},jumps", xs.join(","))?;
        for p in 0..self.paths {
            for level in 0..=self.steps {
                let x: Vec<String> = self.state(p, level).iter().map(|v| v.to_string()).collect();
                let jumps: Vec<String> = if level == 0 {
                    Vec::new()
                } else {
                    self.jumps(p, level - 1).iter().map(|a| a.to_string()).collect()
                };
                writeln!(w, "{p},{level},{},{},{}", self.time(level), x.join(","), jumps.join(";"))?;
            }
        }
        Ok(())
    }
}

/// Euler scheme
///
/// ```text
/// X_{k+1} = X_k + b dt + sigma dB + sum_jumps beta(X_k, e) - dt sum_a w_a beta(X_k, e_a)
/// ```
///
/// with the jumps of atom `a` drawn Poisson(`w_a dt`) per step. A folded
/// small-jump variance adds an independent Gaussian term with the diagonal
/// covariance `(s_delta / l) J J^T dt`.
pub fn simulate_paths(
    spec: &ProblemSpec,
    quadrature: &LevyQuadrature,
    x0: &[f64],
    paths: usize,
    steps: usize,
    seed: u64,
    exec: Exec,
) -> Result<PathBatch> {
    let (k, d, l) = (spec.dim, spec.brownian_dim, spec.mark_dim);
    if paths == 0 || steps == 0 {
        return Err(Error::InvalidParameter(format!(
            "simulation needs at least one path and one step (got {paths} paths, {steps} steps)"
        )));
    }
    if x0.len() != k || x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(format!("x0 must be {k} finite coordinates")));
    }
    let total = quadrature.total_weight();
    if !total.is_finite() {
        return Err(Error::NonIntegrable(format!("total jump intensity {total} is not finite")));
    }
    let dt = spec.horizon / steps as f64;
    let sqrt_dt = dt.sqrt();
    let poissons = quadrature
        .atoms
        .iter()
        .map(|a| {
            let lambda = a.weight * dt;
            if lambda > 0.0 {
                Poisson::new(lambda)
                    .map(Some)
                    .map_err(|e| Error::InvalidParameter(format!("jump intensity {lambda}: {e}")))
            } else {
                Ok(None)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let small = quadrature.small_jump_moment / l.max(1) as f64;

    let one = |p: usize| -> Result<OnePath> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(p as u64);
        let mut states = Vec::with_capacity((steps + 1) * k);
        states.extend_from_slice(x0);
        let mut increments = Vec::with_capacity(steps * d);
        let mut jumps = Vec::with_capacity(steps);
        let mut x = x0.to_vec();
        let mut b = vec![0.0; k];
        let mut sigma = vec![0.0; k * d];
        let mut beta = vec![0.0; k];
        let mut jac = vec![0.0; k * l];
        let mut dx = vec![0.0; k];
        for step in 0..steps {
            let t = spec.horizon * step as f64 / steps as f64;
            spec.drift(t, &x, &mut b)?;
            spec.vol(t, &x, &mut sigma)?;
            let db: Vec<f64> = (0..d).map(|_| sqrt_dt * rng.sample::<f64, _>(StandardNormal)).collect();
            for r in 0..k {
                dx[r] = b[r] * dt + (0..d).map(|s| sigma[r * d + s] * db[s]).sum::<f64>();
            }
            let mut step_jumps = Vec::new();
            for (a, (atom, dist)) in quadrature.atoms.iter().zip(&poissons).enumerate() {
                spec.jump_amplitude(&x, &atom.mark, &mut beta)?;
                for r in 0..k {
                    dx[r] -= dt * atom.weight * beta[r];
                }
                if let Some(dist) = dist {
                    let count = dist.sample(&mut rng) as usize;
                    for _ in 0..count {
                        for r in 0..k {
                            dx[r] += beta[r];
                        }
                        step_jumps.push(a as u32);
                    }
                }
            }
            if small > 0.0 {
                spec.small_jump_jacobian(&x, &mut jac)?;
                for r in 0..k {
                    let var: f64 = small * (0..l).map(|e| jac[r * l + e] * jac[r * l + e]).sum::<f64>();
                    dx[r] += (var * dt).sqrt() * rng.sample::<f64, _>(StandardNormal);
                }
            }
            for r in 0..k {
                x[r] += dx[r];
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericDomain(format!("path {p} left the finite range at step {step}")));
            }
            states.extend_from_slice(&x);
            increments.extend_from_slice(&db);
            jumps.push(step_jumps);
        }
        Ok(OnePath {
            states,
            increments,
            jumps,
        })
    };
    let simulated = exec.try_map(paths, one)?;

    let mut states = Vec::with_capacity(paths * (steps + 1) * k);
    let mut increments = Vec::with_capacity(paths * steps * d);
    let mut jump_offsets = Vec::with_capacity(paths * steps + 1);
    let mut jump_atoms = Vec::new();
    jump_offsets.push(0);
    for path in simulated {
        states.extend(path.states);
        increments.extend(path.increments);
        for js in path.jumps {
            jump_atoms.extend(js);
            jump_offsets.push(jump_atoms.len());
        }
    }
    Ok(PathBatch {
        x0: x0.to_vec(),
        dim: k,
        brownian_dim: d,
        paths,
        steps,
        horizon: spec.horizon,
        seed,
        states,
        increments,
        jump_offsets,
        jump_atoms,
    })
}

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::PathBatch;
use crate::discretization::LevyQuadrature;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::{eval_penalized_driver, ModeSet, ProblemSpec};

/// Coordinates with a sample spread below this are treated as constant.
const MIN_SPREAD: f64 = 1e-12;
/// Normal equations with a larger eigenvalue ratio are rejected.
pub const MAX_CONDITION: f64 = 1e12;
/// Paths per block of the normal-equation assembly. Blocks are summed in
/// index order, so results do not depend on the thread count.
const BLOCK: usize = 512;

/// Polynomials in each standardized coordinate, `1, z_d, ..., z_d^degree`
/// (no cross terms).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegressionBasis {
    pub degree: usize,
}

impl Default for RegressionBasis {
    fn default() -> Self {
        RegressionBasis { degree: 3 }
    }
}

impl RegressionBasis {
    pub fn polynomial(degree: usize) -> Self {
        RegressionBasis { degree }
    }

    /// Number of basis functions in dimension `dim`.
    pub fn len(&self, dim: usize) -> usize {
        1 + dim * self.degree
    }
}

/// The basis after standardizing on one cross-section of states.
#[derive(Debug, Clone)]
struct FittedBasis {
    degree: usize,
    mean: Vec<f64>,
    scale: Vec<f64>,
    /// Coordinates that vary across paths.
    active: Vec<usize>,
}

impl FittedBasis {
    fn new(basis: RegressionBasis, xs: &[&[f64]]) -> Self {
        let dim = xs[0].len();
        let n = xs.len() as f64;
        let mut mean = vec![0.0; dim];
        let mut scale = vec![1.0; dim];
        let mut active = Vec::new();
        for d in 0..dim {
            let mu = xs.iter().map(|x| x[d]).sum::<f64>() / n;
            let var = xs.iter().map(|x| (x[d] - mu).powi(2)).sum::<f64>() / n;
            mean[d] = mu;
            if var.sqrt() > MIN_SPREAD * (1.0 + mu.abs()) && basis.degree > 0 {
                scale[d] = var.sqrt();
                active.push(d);
            }
        }
        FittedBasis {
            degree: basis.degree,
            mean,
            scale,
            active,
        }
    }

    fn len(&self) -> usize {
        1 + self.active.len() * self.degree
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
        let mut c = 1;
        for &d in &self.active {
            let z = (x[d] - self.mean[d]) / self.scale[d];
            let mut p = 1.0;
            for _ in 0..self.degree {
                p *= z;
                out[c] = p;
                c += 1;
            }
        }
    }

    fn predict(&self, coef: &[f64], x: &[f64], buf: &mut [f64]) -> f64 {
        self.eval(x, buf);
        buf.iter().zip(coef).map(|(a, b)| a * b).sum()
    }
}

/// Least-squares coefficients for every column of `targets` (one column per
/// pair) on the same design.
fn fit(
    basis: &FittedBasis,
    xs: &[&[f64]],
    targets: &[Vec<f64>],
    step: usize,
    exec: Exec,
) -> Result<Vec<Vec<f64>>> {
    let nb = basis.len();
    let np = targets.len();
    let blocks = xs.len().div_ceil(BLOCK);
    let partial = exec.map(blocks, |b| {
        let mut gram = DMatrix::<f64>::zeros(nb, nb);
        let mut rhs = DMatrix::<f64>::zeros(nb, np);
        let mut phi = vec![0.0; nb];
        for path in b * BLOCK..((b + 1) * BLOCK).min(xs.len()) {
            basis.eval(xs[path], &mut phi);
            for r in 0..nb {
                for c in 0..=r {
                    gram[(r, c)] += phi[r] * phi[c];
                }
                for p in 0..np {
                    rhs[(r, p)] += phi[r] * targets[p][path];
                }
            }
        }
        (gram, rhs)
    });
    let mut gram = DMatrix::<f64>::zeros(nb, nb);
    let mut rhs = DMatrix::<f64>::zeros(nb, np);
    for (g, r) in partial {
        gram += g;
        rhs += r;
    }
    for r in 0..nb {
        for c in 0..r {
            gram[(c, r)] = gram[(r, c)];
        }
    }
    let eig = SymmetricEigen::new(gram.clone()).eigenvalues;
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v.abs())));
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::SingularRegression { step, condition });
    }
    let chol = gram.cholesky().ok_or(Error::SingularRegression { step, condition })?;
    Ok((0..np)
        .map(|p| {
            let col: DVector<f64> = rhs.column(p).into_owned();
            chol.solve(&col).iter().cloned().collect()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BsdeConfig {
    pub n: f64,
    pub m: f64,
    pub basis: RegressionBasis,
    /// Fixed-point passes for the coupling through `y` at each step.
    pub picard: usize,
    pub exec: Exec,
}

impl Default for BsdeConfig {
    fn default() -> Self {
        BsdeConfig {
            n: 0.0,
            m: 0.0,
            basis: RegressionBasis::default(),
            picard: 2,
            exec: Exec::default(),
        }
    }
}

/// Time-zero estimates of the penalized BSDE system started at `x0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BsdeEstimate {
    pub modes: ModeSet,
    pub x0: Vec<f64>,
    pub n: f64,
    pub m: f64,
    pub paths: usize,
    pub steps: usize,
    /// Per pair, row-major over `(i, j)`.
    pub y0: Vec<f64>,
    pub stderr: Vec<f64>,
}

impl BsdeEstimate {
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.y0[self.modes.pair(i, j)]
    }
}

/// `h^{ij}(X_T)` on every path, `[pair][path]`.
pub fn terminal_values(batch: &PathBatch, spec: &ProblemSpec) -> Result<Vec<Vec<f64>>> {
    spec.modes
        .pairs()
        .map(|(i, j)| (0..batch.paths).map(|p| spec.terminal(i, j, batch.state(p, batch.steps))).collect())
        .collect()
}

/// Backward regression:
///
/// ```text
/// C_k(x)  = regression of Y_{k+1} on the basis at X_k
/// q_k     = sum_a w_a gamma(X_k, e_a) [C_k(X_k + beta_a) - C_k(X_k)]
/// Y_k     = C_k(X_k) + dt f^{n,m}(t_k, X_k, Y_k, 0, q_k)
/// ```
///
/// with the coupling of `Y_k` resolved by `picard` fixed-point passes
/// started from `C_k(X_k)`. At `k = 0` every path sits at `x0` and the
/// regression reduces to a sample mean. The standard error is that of the
/// pathwise sums `h(X_T) + sum_k dt f_k`, which have the same mean but keep
/// the terminal sampling noise. Only drivers that ignore `z` are supported.
pub fn solve_bsde_regression(
    batch: &PathBatch,
    spec: &ProblemSpec,
    quadrature: &LevyQuadrature,
    cfg: &BsdeConfig,
) -> Result<BsdeEstimate> {
    if batch.paths == 0 {
        return Err(Error::InvalidParameter("no paths to regress on".into()));
    }
    if batch.dim != spec.dim || batch.brownian_dim != spec.brownian_dim {
        return Err(Error::InvalidParameter("path batch does not match the problem dimensions".into()));
    }
    if cfg.picard == 0 {
        return Err(Error::InvalidParameter("at least one fixed-point pass is needed".into()));
    }
    if !spec.drivers_z_independent() {
        return Err(Error::Unsupported(
            "regression estimates need drivers that do not depend on z".into(),
        ));
    }
    let modes = spec.modes;
    let np = modes.pair_count();
    let k = spec.dim;
    let dt = batch.dt();
    let zero_z = vec![0.0; spec.brownian_dim];
    let mut y = terminal_values(batch, spec)?;
    // pathwise sums h(X_T) + sum_k dt f_k: same mean as the estimate but
    // with the sampling noise the regressions smooth away
    let mut pathwise = y.clone();

    for step in (0..batch.steps).rev() {
        let t = batch.time(step);
        let xs: Vec<&[f64]> = (0..batch.paths).map(|p| batch.state(p, step)).collect();
        let basis = FittedBasis::new(cfg.basis, &xs);
        let coef = fit(&basis, &xs, &y, step, cfg.exec)?;
        let rows = cfg.exec.try_map(batch.paths, |path| {
            let x = xs[path];
            let mut buf = vec![0.0; basis.len()];
            let cont: Vec<f64> = coef.iter().map(|c| basis.predict(c, x, &mut buf)).collect();
            let mut q = vec![0.0; np];
            let mut beta = vec![0.0; k];
            let mut target = vec![0.0; k];
            for atom in &quadrature.atoms {
                spec.jump_amplitude(x, &atom.mark, &mut beta)?;
                for r in 0..k {
                    target[r] = x[r] + beta[r];
                }
                for (i, j) in modes.pairs() {
                    let p = modes.pair(i, j);
                    let gw = spec.jump_weight(i, j, x, &atom.mark)? * atom.weight;
                    if gw != 0.0 {
                        q[p] += gw * (basis.predict(&coef[p], &target, &mut buf) - cont[p]);
                    }
                }
            }
            let mut cur = cont.clone();
            let mut increments = vec![0.0; np];
            for _ in 0..cfg.picard {
                let mut next = vec![0.0; np];
                for (i, j) in modes.pairs() {
                    let p = modes.pair(i, j);
                    let f = eval_penalized_driver(spec, (i, j), cfg.n, cfg.m, t, x, &cur, &zero_z, q[p])?;
                    increments[p] = dt * f;
                    next[p] = cont[p] + increments[p];
                }
                cur = next;
            }
            Ok::<_, Error>((cur, increments))
        })?;
        for p in 0..np {
            for (path, (v, inc)) in rows.iter().enumerate() {
                y[p][path] = v[p];
                pathwise[p][path] += inc[p];
            }
        }
    }
    let stderr = pathwise
        .iter()
        .map(|col| {
            let n = col.len() as f64;
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            (var / n).sqrt()
        })
        .collect();
    // every path starts at x0, so all entries agree up to rounding
    let y0 = y.iter().map(|col| col.iter().sum::<f64>() / col.len() as f64).collect();
    Ok(BsdeEstimate {
        modes,
        x0: batch.x0.clone(),
        n: cfg.n,
        m: cfg.m,
        paths: batch.paths,
        steps: batch.steps,
        y0,
        stderr,
    })
}

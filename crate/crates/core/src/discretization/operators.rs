//! Discrete local and non-local operators on value surfaces.
//!
//! Everything that depends only on the state (jump targets, their
//! interpolation stencils, the weights `gamma^{ij} w_k`, the compensator
//! drift and the small-jump diffusion) is tabulated once per node.

use super::{growth_offset, interp_stencil, InterpStencil, LevyQuadrature, SpatialGrid, MAX_DIM};
use crate::error::{Error, Result};
use crate::model::ProblemSpec;

/// Small- and large-jump parts of a non-local term.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NonlocalSplit {
    pub small: f64,
    pub large: f64,
}

impl NonlocalSplit {
    pub fn total(&self) -> f64 {
        self.small + self.large
    }
}

#[derive(Debug, Clone)]
pub struct Operators<'a> {
    pub spec: &'a ProblemSpec,
    pub grid: &'a SpatialGrid,
    pub quadrature: &'a LevyQuadrature,
    atom_norms: Vec<f64>,
    /// `[node * atoms + k]`
    targets: Vec<InterpStencil>,
    /// `[node * atoms + k]`, first `dim` entries used.
    betas: Vec<[f64; MAX_DIM]>,
    /// `[(node * pairs + p) * atoms + k]` = `gamma^{p}(x, e_k) w_k`.
    gamma_w: Vec<f64>,
    compensator: Vec<[f64; MAX_DIM]>,
    small_diffusion: Vec<[f64; MAX_DIM]>,
    /// Ghost offsets for the neighbours beyond the box, `[node][d][dir]`
    /// with dir 0 = backward, 1 = forward.
    ghost: Vec<[[f64; 2]; MAX_DIM]>,
}

/// Fails unless `a` (row-major k x k) is diagonal up to rounding.
fn diagonal_of(a: &[f64], k: usize, what: &str) -> Result<[f64; MAX_DIM]> {
    let mut diag = [0.0; MAX_DIM];
    let scale = (0..k).map(|d| a[d * k + d].abs()).fold(0.0, f64::max);
    for r in 0..k {
        diag[r] = a[r * k + r];
        for c in 0..k {
            if r != c && a[r * k + c].abs() > 1e-12 * (1.0 + scale) {
                return Err(Error::Unsupported(format!(
                    "{what} has off-diagonal entries; only diagonal diffusion is discretized"
                )));
            }
        }
    }
    Ok(diag)
}

/// `a = sigma sigma^T` for a row-major k x d matrix, keeping the diagonal.
pub fn diffusion_diagonal(sigma: &[f64], k: usize, d: usize) -> Result<[f64; MAX_DIM]> {
    let mut a = [0.0; MAX_DIM * MAX_DIM];
    for r in 0..k {
        for c in 0..k {
            a[r * k + c] = (0..d).map(|s| sigma[r * d + s] * sigma[c * d + s]).sum();
        }
    }
    diagonal_of(&a[..k * k], k, "sigma sigma^T")
}

impl<'a> Operators<'a> {
    pub fn new(spec: &'a ProblemSpec, grid: &'a SpatialGrid, quadrature: &'a LevyQuadrature) -> Result<Self> {
        let k = spec.dim;
        if grid.dim() != k {
            return Err(Error::InvalidParameter(format!(
                "grid has dimension {}, problem has {k}",
                grid.dim()
            )));
        }
        if let Some(l) = quadrature.mark_dim() {
            if l != spec.mark_dim {
                return Err(Error::InvalidParameter(format!(
                    "quadrature marks have dimension {l}, problem has {}",
                    spec.mark_dim
                )));
            }
        }
        let na = quadrature.atoms.len();
        let np = spec.modes.pair_count();
        let nodes = grid.len();
        let l = spec.mark_dim;
        let mut targets = Vec::with_capacity(nodes * na);
        let mut betas = Vec::with_capacity(nodes * na);
        let mut gamma_w = Vec::with_capacity(nodes * np * na);
        let mut compensator = Vec::with_capacity(nodes);
        let mut small_diffusion = Vec::with_capacity(nodes);
        let mut ghost = Vec::with_capacity(nodes);
        let atom_norms = quadrature
            .atoms
            .iter()
            .map(|a| a.mark.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();

        let mut x = [0.0; MAX_DIM];
        let mut target = [0.0; MAX_DIM];
        let mut jac = vec![0.0; k * l];
        for node in 0..nodes {
            grid.node_coords(node, &mut x);
            let mut c = [0.0; MAX_DIM];
            for atom in &quadrature.atoms {
                let mut beta = [0.0; MAX_DIM];
                spec.jump_amplitude(&x[..k], &atom.mark, &mut beta[..k])?;
                for d in 0..k {
                    target[d] = x[d] + beta[d];
                    c[d] -= atom.weight * beta[d];
                }
                targets.push(interp_stencil(grid, &spec.growth, &target[..k]));
                betas.push(beta);
            }
            for (i, j) in spec.modes.pairs() {
                for atom in &quadrature.atoms {
                    let g = spec.jump_weight(i, j, &x[..k], &atom.mark)?;
                    gamma_w.push(g * atom.weight);
                }
            }
            compensator.push(c);

            let mut sj = [0.0; MAX_DIM];
            if quadrature.small_jump_moment > 0.0 {
                spec.small_jump_jacobian(&x[..k], &mut jac)?;
                let s = quadrature.small_jump_moment / l as f64;
                let mut a = vec![0.0; k * k];
                for r in 0..k {
                    for cc in 0..k {
                        a[r * k + cc] = s * (0..l).map(|e| jac[r * l + e] * jac[cc * l + e]).sum::<f64>();
                    }
                }
                sj = diagonal_of(&a, k, "small-jump diffusion")?;
            }
            small_diffusion.push(sj);

            let mut gh = [[0.0; 2]; MAX_DIM];
            let idx = grid.multi_index(node);
            for d in 0..k {
                let h = grid.spacing()[d];
                if idx[d] == 0 {
                    gh[d][0] = growth_offset(&spec.growth, x[d], x[d] - h);
                }
                if idx[d] + 1 == grid.counts()[d] {
                    gh[d][1] = growth_offset(&spec.growth, x[d], x[d] + h);
                }
            }
            ghost.push(gh);
        }
        Ok(Operators {
            spec,
            grid,
            quadrature,
            atom_norms,
            targets,
            betas,
            gamma_w,
            compensator,
            small_diffusion,
            ghost,
        })
    }

    pub fn atom_count(&self) -> usize {
        self.quadrature.atoms.len()
    }

    pub fn jump_target(&self, node: usize, k: usize) -> &InterpStencil {
        &self.targets[node * self.atom_count() + k]
    }

    pub fn jump_beta(&self, node: usize, k: usize) -> &[f64] {
        &self.betas[node * self.atom_count() + k][..self.grid.dim()]
    }

    /// `gamma^{p}(x_node, e_k) w_k` for atom `k`.
    pub fn gamma_weight(&self, node: usize, pair: usize, k: usize) -> f64 {
        let na = self.atom_count();
        self.gamma_w[(node * self.spec.modes.pair_count() + pair) * na + k]
    }

    /// Compensator drift `c(x) = -sum_k w_k beta(x, e_k)`.
    pub fn compensator(&self, node: usize) -> &[f64] {
        &self.compensator[node][..self.grid.dim()]
    }

    /// Diagonal of the small-jump diffusion `(s_delta / l) J J^T`.
    pub fn small_diffusion(&self, node: usize) -> &[f64] {
        &self.small_diffusion[node][..self.grid.dim()]
    }

    /// Constant added to a ghost neighbour beyond the box.
    pub fn ghost_offset(&self, node: usize, d: usize, dir: i32) -> f64 {
        self.ghost[node][d][(dir > 0) as usize]
    }

    /// Value one step along `d`; beyond the box the growth extrapolation of
    /// the boundary value.
    #[inline]
    pub fn neighbour_value(&self, surface: &[f64], node: usize, d: usize, dir: i32) -> f64 {
        match self.grid.neighbour(node, d, dir) {
            Some(nb) => surface[nb],
            None => surface[node] + self.ghost_offset(node, d, dir),
        }
    }

    /// One-sided differences taken in the direction of `velocity`.
    pub fn upwind_gradient(&self, surface: &[f64], node: usize, velocity: &[f64]) -> [f64; MAX_DIM] {
        let mut g = [0.0; MAX_DIM];
        for d in 0..self.grid.dim() {
            let h = self.grid.spacing()[d];
            g[d] = if velocity[d] > 0.0 {
                (self.neighbour_value(surface, node, d, 1) - surface[node]) / h
            } else {
                (surface[node] - self.neighbour_value(surface, node, d, -1)) / h
            };
        }
        g
    }

    pub fn central_gradient(&self, surface: &[f64], node: usize) -> [f64; MAX_DIM] {
        let mut g = [0.0; MAX_DIM];
        for d in 0..self.grid.dim() {
            let h = self.grid.spacing()[d];
            g[d] = (self.neighbour_value(surface, node, d, 1) - self.neighbour_value(surface, node, d, -1)) / (2.0 * h);
        }
        g
    }

    #[inline]
    pub fn second_difference(&self, surface: &[f64], node: usize, d: usize) -> f64 {
        let h = self.grid.spacing()[d];
        (self.neighbour_value(surface, node, d, 1) - 2.0 * surface[node] + self.neighbour_value(surface, node, d, -1))
            / (h * h)
    }

    /// `b . D v + 1/2 sum_d a_dd D_dd v` with upwinded first differences;
    /// `a_diag` is the diagonal of `sigma sigma^T`.
    pub fn local_generator_diag(&self, surface: &[f64], node: usize, b: &[f64], a_diag: &[f64]) -> f64 {
        let grad = self.upwind_gradient(surface, node, b);
        let mut s = 0.0;
        for d in 0..self.grid.dim() {
            s += b[d] * grad[d] + 0.5 * a_diag[d] * self.second_difference(surface, node, d);
        }
        s
    }

    /// Local generator with drift `b` and row-major k x d volatility `sigma`.
    pub fn local_generator(&self, surface: &[f64], node: usize, b: &[f64], sigma: &[f64]) -> Result<f64> {
        let a = diffusion_diagonal(sigma, self.spec.dim, self.spec.brownian_dim)?;
        Ok(self.local_generator_diag(surface, node, b, &a[..self.grid.dim()]))
    }

    /// Non-local generator split at radius `split`: atoms with `|e| < split`
    /// and the small-jump diffusion form the small part. `grad` is the
    /// gradient used in the compensator.
    pub fn nonlocal_generator_split(&self, surface: &[f64], node: usize, grad: &[f64], split: f64) -> NonlocalSplit {
        let k = self.grid.dim();
        let na = self.atom_count();
        let here = surface[node];
        let mut out = NonlocalSplit::default();
        for a in 0..na {
            let st = &self.targets[node * na + a];
            let beta = &self.betas[node * na + a];
            let mut lin = 0.0;
            for d in 0..k {
                lin += grad[d] * beta[d];
            }
            let term = self.quadrature.atoms[a].weight * (st.apply(surface) - here - lin);
            if self.atom_norms[a] < split {
                out.small += term;
            } else {
                out.large += term;
            }
        }
        let sj = &self.small_diffusion[node];
        for d in 0..k {
            if sj[d] != 0.0 {
                out.small += 0.5 * sj[d] * self.second_difference(surface, node, d);
            }
        }
        out
    }

    pub fn nonlocal_generator(&self, surface: &[f64], node: usize, grad: &[f64]) -> f64 {
        self.nonlocal_generator_split(surface, node, grad, self.quadrature.cutoff).total()
    }

    /// Non-local generator with the compensator upwinded along `c(x)`.
    pub fn nonlocal_generator_upwind(&self, surface: &[f64], node: usize) -> f64 {
        let grad = self.upwind_gradient(surface, node, self.compensator(node));
        self.nonlocal_generator(surface, node, &grad)
    }

    /// `q = sum_k [v(x + beta_k) - v(x)] gamma^{ij}(x, e_k) w_k`, split at `split`.
    pub fn nonlocal_driver_term_split(&self, surface: &[f64], node: usize, pair: usize, split: f64) -> NonlocalSplit {
        let na = self.atom_count();
        let here = surface[node];
        let base = (node * self.spec.modes.pair_count() + pair) * na;
        let mut out = NonlocalSplit::default();
        for a in 0..na {
            let gw = self.gamma_w[base + a];
            if gw == 0.0 {
                continue;
            }
            let term = (self.targets[node * na + a].apply(surface) - here) * gw;
            if self.atom_norms[a] < split {
                out.small += term;
            } else {
                out.large += term;
            }
        }
        out
    }

    pub fn nonlocal_driver_term(&self, surface: &[f64], node: usize, pair: usize) -> f64 {
        self.nonlocal_driver_term_split(surface, node, pair, self.quadrature.cutoff).total()
    }

    /// `Lambda = sum_k w_k sup gamma + sum_k w_k` over the tabulated nodes.
    pub fn jump_intensity_scale(&self) -> f64 {
        let na = self.atom_count();
        let np = self.spec.modes.pair_count();
        let mut sup_gw = vec![0.0f64; na];
        for node in 0..self.grid.len() {
            for p in 0..np {
                for (a, s) in sup_gw.iter_mut().enumerate() {
                    *s = s.max(self.gamma_w[(node * np + p) * na + a]);
                }
            }
        }
        sup_gw.iter().sum::<f64>() + self.quadrature.total_weight()
    }

    /// Largest `sum_k gamma^{ij} w_k` over nodes and pairs.
    pub fn max_gamma_mass(&self) -> f64 {
        let na = self.atom_count();
        if na == 0 {
            return 0.0;
        }
        self.gamma_w
            .chunks(na)
            .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

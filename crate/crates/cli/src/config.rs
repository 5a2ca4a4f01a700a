use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use swgame::discretization::{build_levy_quadrature, LevyQuadrature, SpatialGrid, TimeGrid};
use swgame::mc::DEFAULT_SEED;
use swgame::model::ProblemSpec;
use swgame::solver::{auto_time_grid, doubling_schedule, Grids, SchemeConfig, SolveMode};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    Bin,
}

/// One run of a command. Paths are relative to the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: PathBuf,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    #[serde(default)]
    pub scheme: SchemeConfig,
    #[serde(default)]
    pub validate: ValidateConfig,
    #[serde(default)]
    pub solve: SolveConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub check: CheckConfig,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub formats: Option<Vec<Format>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Nodes per axis (`N_x`), at least 3.
    pub nodes: Vec<usize>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Time steps `N_t`; sized from the CFL bound when absent.
    pub steps: Option<usize>,
    /// Lower bound for the automatic step count.
    pub min_steps: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            nodes: vec![101],
            lower: vec![-3.0],
            upper: vec![3.0],
            steps: None,
            min_steps: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureConfig {
    /// Cells per side for density-based measures.
    pub n_atoms: usize,
    /// Overrides the small-jump cutoff of the problem file.
    pub delta: Option<f64>,
    /// Overrides the truncation radius of the problem file.
    pub radius: Option<f64>,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            n_atoms: 32,
            delta: None,
            radius: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateConfig {
    /// Sample times per point for the time-dependent checks.
    pub times: usize,
    /// Largest number of grid nodes used as sample points.
    pub max_points: usize,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        ValidateConfig {
            times: 5,
            max_points: 401,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    Penalized,
    LowerReflected,
    UpperReflected,
    #[default]
    Minmax,
    Maxmin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveConfig {
    pub system: SystemKind,
    pub mode: SolveMode,
    pub n: f64,
    pub m: f64,
    /// Time levels to write; defaults to the first and last.
    pub levels: Option<Vec<usize>>,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            system: SystemKind::default(),
            mode: SolveMode::default(),
            n: 1.0,
            m: 1.0,
            levels: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub n: Vec<f64>,
    pub m: Vec<f64>,
    pub tolerance: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let s: Vec<f64> = doubling_schedule().into_iter().take(4).collect();
        SweepConfig {
            n: s.clone(),
            m: s,
            tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckConfig {
    /// Starting point of the simulated paths; the box centre when absent.
    pub x0: Option<Vec<f64>>,
    pub paths: usize,
    pub steps: usize,
    pub n: f64,
    pub m: f64,
    pub basis_degree: usize,
    pub picard: usize,
    pub bias_allowance: f64,
    /// Nodes per axis of the oracle grid (same box as `grid`).
    pub oracle_nodes: Vec<usize>,
    pub oracle_steps: usize,
    pub oracle_tolerance: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            x0: None,
            paths: 10_000,
            steps: 50,
            n: 1.0,
            m: 1.0,
            basis_degree: 3,
            picard: 2,
            bias_allowance: swgame::mc::DEFAULT_BIAS_ALLOWANCE,
            oracle_nodes: vec![41],
            oracle_steps: 20,
            oracle_tolerance: 1e-10,
        }
    }
}

/// A config with its problem loaded and the discretization resolved.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    pub spec: ProblemSpec,
    pub quadrature: LevyQuadrature,
    pub space: SpatialGrid,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Loaded> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let config: RunConfig = serde_json::from_str(&text).map_err(|source| CliError::Config {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let problem_path = base.join(&config.problem);
        let mut spec = ProblemSpec::load(&problem_path).map_err(|source| CliError::Problem {
            path: problem_path.clone(),
            source,
        })?;
        config.scheme.validate()?;
        if let Some(delta) = config.quadrature.delta {
            if !(0.0..1.0).contains(&delta) {
                return Err(CliError::Usage(format!("quadrature.delta must lie in [0, 1) (got {delta})")));
            }
            spec.levy.cutoff = delta;
        }
        let quadrature = build_levy_quadrature(&spec.levy, config.quadrature.n_atoms, config.quadrature.radius)?;
        let space = config.grid.space(spec.dim, &config.grid.nodes)?;
        Ok(Loaded {
            config,
            spec,
            quadrature,
            space,
        })
    }
}

impl GridConfig {
    /// The box with `nodes` per axis.
    pub fn space(&self, dim: usize, nodes: &[usize]) -> CliResult<SpatialGrid> {
        if nodes.len() != dim || self.lower.len() != dim || self.upper.len() != dim {
            return Err(CliError::Usage(format!(
                "grid needs {dim} entries in nodes, lower and upper to match the problem dimension"
            )));
        }
        if let Some(n) = nodes.iter().find(|&&n| n < 3) {
            return Err(CliError::Usage(format!("grid needs at least 3 nodes per axis (got {n})")));
        }
        Ok(SpatialGrid::new(self.lower.clone(), self.upper.clone(), nodes.to_vec())?)
    }
}

impl Loaded {
    pub fn seed(&self, flag: Option<u64>) -> u64 {
        flag.or(self.config.seed).unwrap_or(DEFAULT_SEED)
    }

    /// Space-time grids for penalties up to `(n, m)`: the configured step
    /// count if any, otherwise the smallest CFL-stable one.
    pub fn grids(&self, scheme: &SchemeConfig, n: f64, m: f64) -> CliResult<Grids> {
        let time = match self.config.grid.steps {
            Some(0) => return Err(CliError::Usage("grid.steps must be at least 1".into())),
            Some(steps) => TimeGrid::new(self.spec.horizon, steps)?,
            None => auto_time_grid(
                &self.spec,
                &self.space,
                &self.quadrature,
                n,
                m,
                scheme,
                self.config.grid.min_steps.max(1),
            )?,
        };
        Ok(Grids::new(self.space.clone(), time))
    }

    /// Grid nodes used as validator sample points, thinned evenly to at
    /// most `validate.max_points`.
    pub fn sample_xs(&self) -> Vec<Vec<f64>> {
        let total = self.space.len();
        let keep = self.config.validate.max_points.clamp(1, total);
        (0..keep)
            .map(|k| {
                let node = if keep == 1 { 0 } else { k * (total - 1) / (keep - 1) };
                self.space.node_point(node)
            })
            .collect()
    }
}

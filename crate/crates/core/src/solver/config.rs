use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stepping {
    /// Fully explicit monotone scheme.
    #[default]
    Explicit,
    /// Diffusion implicit (tridiagonal, 1-D only), everything else explicit.
    Imex,
}

/// How the bilateral systems are solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveMode {
    /// Backward induction with the bilateral projection at every step.
    #[default]
    Direct,
    /// Limit of one-sided reflected solves over a penalty schedule.
    Limit,
}

/// `{1, 2, 4, ..., 256}`.
pub fn doubling_schedule() -> Vec<f64> {
    (0..=8).map(|k| (1u32 << k) as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchemeConfig {
    pub stepping: Stepping,
    /// Upper bound for `dt * rate`, in `(0, 1]`.
    pub cfl_safety: f64,
    /// Obstacle sweeps stop once no entry moves by more than this.
    pub sweep_tol: f64,
    pub max_sweeps: usize,
    /// Solve even when the terminal data violate the consistency condition.
    pub override_a4: bool,
    pub exec: Exec,
    /// Penalty schedule for the max-min limit (upper-reflected solves).
    pub n_schedule: Vec<f64>,
    /// Penalty schedule for the min-max limit (lower-reflected solves).
    pub m_schedule: Vec<f64>,
    /// Relative stopping gap of a schedule: `gap < tol (1 + |v|_inf)`.
    pub schedule_tol: f64,
    /// When false, an unconverged schedule returns its last iterate with
    /// `converged = false` instead of an error.
    pub strict_schedule: bool,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        SchemeConfig {
            stepping: Stepping::Explicit,
            cfl_safety: 0.9,
            sweep_tol: 1e-13,
            max_sweeps: 1000,
            override_a4: false,
            exec: Exec::default(),
            n_schedule: doubling_schedule(),
            m_schedule: doubling_schedule(),
            schedule_tol: 1e-6,
            strict_schedule: true,
        }
    }
}

fn check_schedule(s: &[f64], what: &str) -> Result<()> {
    if s.is_empty() {
        return Err(Error::InvalidParameter(format!("{what} is empty")));
    }
    if s.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || s.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter(format!(
            "{what} must be finite, non-negative and strictly increasing"
        )));
    }
    Ok(())
}

impl SchemeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "CFL safety factor must lie in (0, 1] (got {})",
                self.cfl_safety
            )));
        }
        if !(self.sweep_tol >= 0.0) || self.max_sweeps == 0 {
            return Err(Error::InvalidParameter("sweep tolerance must be >= 0 and max_sweeps >= 1".into()));
        }
        if !(self.schedule_tol > 0.0) {
            return Err(Error::InvalidParameter("schedule tolerance must be positive".into()));
        }
        check_schedule(&self.n_schedule, "n schedule")?;
        check_schedule(&self.m_schedule, "m schedule")
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }
}

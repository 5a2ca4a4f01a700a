use serde::{Deserialize, Serialize};

use super::BsdeEstimate;
use crate::discretization::{interpolate, SpatialGrid};
use crate::error::{Error, Result};
use crate::model::ProblemSpec;
use crate::solver::Trajectory;

/// Relative allowance for the time-discretization bias of both schemes.
pub const DEFAULT_BIAS_ALLOWANCE: f64 = 0.05;
/// Multiple of the standard error tolerated.
pub const STDERR_MULTIPLE: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckEntry {
    pub i: usize,
    pub j: usize,
    pub pde: f64,
    pub mc: f64,
    pub difference: f64,
    pub stderr: f64,
    pub threshold: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub x0: Vec<f64>,
    pub n: f64,
    pub m: f64,
    pub paths: usize,
    pub steps: usize,
    pub bias_allowance: f64,
    pub entries: Vec<CheckEntry>,
    pub passed: bool,
    pub note: String,
}

impl CheckReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Compares the grid solution at `(0, x0)` with the regression estimate.
/// Pair `(i, j)` passes when
/// `|v(0, x0) - Y_0| <= 4 stderr + bias_allowance (1 + |v(0, x0)|)`.
pub fn feynman_kac_check(
    pde: &Trajectory,
    grid: &SpatialGrid,
    spec: &ProblemSpec,
    estimate: &BsdeEstimate,
    bias_allowance: f64,
) -> Result<CheckReport> {
    let field = pde.initial();
    if field.modes != estimate.modes {
        return Err(Error::InvalidParameter("estimate and trajectory have different mode sets".into()));
    }
    let mut entries = Vec::new();
    for (i, j) in spec.modes.pairs() {
        let v = interpolate(field, grid, &spec.growth, (i, j), &estimate.x0);
        let y = estimate.value(i, j);
        let se = estimate.stderr[spec.modes.pair(i, j)];
        let threshold = STDERR_MULTIPLE * se + bias_allowance * (1.0 + v.abs());
        let difference = (v - y).abs();
        entries.push(CheckEntry {
            i,
            j,
            pde: v,
            mc: y,
            difference,
            stderr: se,
            threshold,
            passed: difference <= threshold,
        });
    }
    Ok(CheckReport {
        x0: estimate.x0.clone(),
        n: estimate.n,
        m: estimate.m,
        paths: estimate.paths,
        steps: estimate.steps,
        bias_allowance,
        passed: entries.iter().all(|e| e.passed),
        entries,
        note: "thresholds are engineering allowances for discretization bias, not error bounds".into(),
    })
}

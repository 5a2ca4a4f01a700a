use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::discretization::{SpatialGrid, ValueField};
use crate::error::{Error, Result};
use crate::model::{eval_obstacles, ModeSet, ProblemSpec};

/// Value fields at every level `t_0 = 0, ..., t_N = T` of a time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub levels: Vec<ValueField>,
}

impl Trajectory {
    pub fn initial(&self) -> &ValueField {
        &self.levels[0]
    }

    pub fn terminal(&self) -> &ValueField {
        self.levels.last().expect("trajectory has at least one level")
    }

    pub fn times(&self) -> Vec<f64> {
        self.levels.iter().map(|f| f.t).collect()
    }

    pub fn max_abs_diff(&self, other: &Trajectory) -> f64 {
        self.levels
            .iter()
            .zip(&other.levels)
            .fold(0.0, |m, (a, b)| m.max(a.max_abs_diff(b)))
    }

    /// `max (self - other)` over all levels, nodes and pairs.
    pub fn max_excess_over(&self, other: &Trajectory) -> f64 {
        self.levels
            .iter()
            .zip(&other.levels)
            .fold(f64::NEG_INFINITY, |m, (a, b)| m.max(a.max_excess_over(b)))
    }

    pub fn sup_norm(&self) -> f64 {
        self.levels.iter().fold(0.0, |m, f| m.max(f.sup_norm()))
    }

    pub fn negated_transpose(&self) -> Trajectory {
        Trajectory {
            levels: self.levels.iter().map(ValueField::negated_transpose).collect(),
        }
    }

    /// Plot data for one level: node coordinates then, per pair, the value
    /// and both obstacles (`L`, `U`; empty cells for absent obstacles).
    pub fn write_plot_csv<W: Write>(&self, level: usize, spec: &ProblemSpec, grid: &SpatialGrid, mut w: W) -> Result<()> {
        let field = &self.levels[level];
        let mut header: Vec<String> = (0..grid.dim()).map(|d| format!("x{d}")).collect();
        for (i, j) in spec.modes.pairs() {
            header.push(format!("v_{i}_{j}"));
            header.push(format!("L_{i}_{j}"));
            header.push(format!("U_{i}_{j}"));
        }
        writeln!(w, "{}", header.join(","))?;
        let show = |v: f64| if v.is_finite() { v.to_string() } else { String::new() };
        for node in 0..grid.len() {
            let x = grid.node_point(node);
            let y = field.at_node(node);
            let ob = eval_obstacles(&y, &spec.cost_snapshot(field.t, &x)?);
            let mut cells: Vec<String> = x.iter().map(|v| v.to_string()).collect();
            for p in 0..y.len() {
                cells.push(y[p].to_string());
                cells.push(show(ob.lower[p]));
                cells.push(show(ob.upper[p]));
            }
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }

    /// Binary snapshot, little-endian:
    ///
    /// ```text
    /// b"SWGV"  u32 version (= 1)
    /// u32 k  u32 m1  u32 m2
    /// k times: f64 lower, f64 upper, u64 count
    /// u64 levels
    /// per level: f64 t, then m1*m2 surfaces (pairs row-major),
    ///            each a row-major array of f64 node values
    /// ```
    pub fn write_binary<W: Write>(&self, grid: &SpatialGrid, mut w: W) -> Result<()> {
        let modes = self.initial().modes;
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&BINARY_VERSION.to_le_bytes())?;
        for v in [grid.dim(), modes.m1, modes.m2] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        for d in 0..grid.dim() {
            w.write_all(&grid.lower()[d].to_le_bytes())?;
            w.write_all(&grid.upper()[d].to_le_bytes())?;
            w.write_all(&(grid.counts()[d] as u64).to_le_bytes())?;
        }
        w.write_all(&(self.levels.len() as u64).to_le_bytes())?;
        for f in &self.levels {
            w.write_all(&f.t.to_le_bytes())?;
            for s in &f.values {
                for v in s {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<(SpatialGrid, Trajectory)> {
        fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
            let mut b = [0u8; N];
            r.read_exact(&mut b)?;
            Ok(b)
        }
        let bad = |m: &str| Error::InvalidParameter(format!("binary snapshot: {m}"));
        if &take::<4, _>(&mut r)? != BINARY_MAGIC {
            return Err(bad("bad magic"));
        }
        if u32::from_le_bytes(take(&mut r)?) != BINARY_VERSION {
            return Err(bad("unsupported version"));
        }
        let k = u32::from_le_bytes(take(&mut r)?) as usize;
        let m1 = u32::from_le_bytes(take(&mut r)?) as usize;
        let m2 = u32::from_le_bytes(take(&mut r)?) as usize;
        let (mut lo, mut hi, mut n) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..k {
            lo.push(f64::from_le_bytes(take(&mut r)?));
            hi.push(f64::from_le_bytes(take(&mut r)?));
            n.push(u64::from_le_bytes(take(&mut r)?) as usize);
        }
        let grid = SpatialGrid::new(lo, hi, n)?;
        let modes = ModeSet::new(m1, m2)?;
        let count = u64::from_le_bytes(take(&mut r)?) as usize;
        let mut levels = Vec::with_capacity(count);
        for _ in 0..count {
            let t = f64::from_le_bytes(take(&mut r)?);
            let mut f = ValueField::zeros(t, modes, grid.len());
            for s in f.values.iter_mut() {
                for v in s.iter_mut() {
                    *v = f64::from_le_bytes(take(&mut r)?);
                }
            }
            levels.push(f);
        }
        Ok((grid, Trajectory { levels }))
    }
}

pub const BINARY_MAGIC: &[u8; 4] = b"SWGV";
pub const BINARY_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CflReport {
    pub dt: f64,
    /// Total rate; the scheme requires `dt * rate <= safety`.
    pub rate: f64,
    pub product: f64,
    pub safety: f64,
    pub diffusion: f64,
    pub drift: f64,
    pub jump_intensity: f64,
    pub penalty: f64,
    pub driver_lipschitz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleReport {
    pub penalties: Vec<f64>,
    /// `gaps[s]` is the sup-norm distance between solves `s` and `s + 1`.
    pub gaps: Vec<f64>,
    pub tolerance: f64,
    pub converged: bool,
    /// Largest violation of the expected monotone ordering between
    /// consecutive schedule members (0 when ordered).
    pub ordering_violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub system: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
    pub nodes: usize,
    pub steps: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cfl: Option<CflReport>,
    /// Per level `k = 0..=N`: max absolute equation residual.
    pub residuals: Vec<f64>,
    /// Per level: `|(L[v] - v)^+|_inf`.
    pub lower_violation: Vec<f64>,
    /// Per level: `|(v - U[v])^+|_inf`.
    pub upper_violation: Vec<f64>,
    /// Per step `k = 0..N-1`: most obstacle sweeps needed at any node.
    pub sweeps: Vec<usize>,
    /// Worst terminal consistency violation found on the grid.
    pub terminal_inconsistency: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleReport>,
    pub wall_clock_seconds: f64,
}

impl SolverReport {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().cloned().fold(0.0, f64::max)
    }

    pub fn max_lower_violation(&self) -> f64 {
        self.lower_violation.iter().cloned().fold(0.0, f64::max)
    }

    pub fn max_upper_violation(&self) -> f64 {
        self.upper_violation.iter().cloned().fold(0.0, f64::max)
    }

    pub fn max_sweeps(&self) -> usize {
        self.sweeps.iter().cloned().max().unwrap_or(0)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

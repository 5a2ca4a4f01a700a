use std::io::Write;

use serde::{Deserialize, Serialize};

use super::SpatialGrid;
use crate::error::{Error, Result};
use crate::model::ModeSet;

/// The `m1 x m2` value surfaces at one time level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueField {
    pub t: f64,
    pub modes: ModeSet,
    /// `values[pair][node]`, pairs row-major.
    pub values: Vec<Vec<f64>>,
}

impl ValueField {
    pub fn zeros(t: f64, modes: ModeSet, nodes: usize) -> Self {
        ValueField {
            t,
            modes,
            values: vec![vec![0.0; nodes]; modes.pair_count()],
        }
    }

    /// Builds a field from per-node rows `rows[node][pair]`.
    pub fn from_node_rows(t: f64, modes: ModeSet, rows: &[Vec<f64>]) -> Self {
        let mut out = Self::zeros(t, modes, rows.len());
        for (node, row) in rows.iter().enumerate() {
            for (p, v) in row.iter().enumerate() {
                out.values[p][node] = *v;
            }
        }
        out
    }

    pub fn nodes(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn surface(&self, i: usize, j: usize) -> &[f64] {
        &self.values[self.modes.pair(i, j)]
    }

    /// All pair values at one node, row-major.
    pub fn at_node(&self, node: usize) -> Vec<f64> {
        self.values.iter().map(|s| s[node]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().flatten().all(|v| v.is_finite())
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &ValueField) -> f64 {
        self.values
            .iter()
            .flatten()
            .zip(other.values.iter().flatten())
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Largest `self - other` (positive where `self` exceeds `other`).
    pub fn max_excess_over(&self, other: &ValueField) -> f64 {
        self.values
            .iter()
            .flatten()
            .zip(other.values.iter().flatten())
            .fold(f64::NEG_INFINITY, |m, (a, b)| m.max(a - b))
    }

    /// Negates and transposes the mode matrix.
    pub fn negated_transpose(&self) -> ValueField {
        let modes = self.modes.transposed();
        let mut values = vec![Vec::new(); modes.pair_count()];
        for (i, j) in self.modes.pairs() {
            values[modes.pair(j, i)] = self.values[self.modes.pair(i, j)].iter().map(|v| -v).collect();
        }
        ValueField { t: self.t, modes, values }
    }

    /// CSV with columns `x0.., v_i_j..`, one row per node.
    pub fn write_csv<W: Write>(&self, grid: &SpatialGrid, mut w: W) -> Result<()> {
        if grid.len() != self.nodes() {
            return Err(Error::InvalidParameter(format!(
                "field has {} nodes, grid has {}",
                self.nodes(),
                grid.len()
            )));
        }
        let mut header: Vec<String> = (0..grid.dim()).map(|d| format!("x{d}")).collect();
        header.extend(self.modes.pairs().map(|(i, j)| format!("v_{i}_{j}")));
        writeln!(w, "{}", header.join(","))?;
        let mut x = vec![0.0; grid.dim()];
        for node in 0..grid.len() {
            grid.node_coords(node, &mut x);
            let mut cells: Vec<String> = x.iter().map(|v| v.to_string()).collect();
            cells.extend(self.values.iter().map(|s| s[node].to_string()));
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let g = SpatialGrid::uniform_1d(0.0, 1.0, 3).unwrap();
        let modes = ModeSet::new(1, 2).unwrap();
        let f = ValueField::from_node_rows(0.0, modes, &[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.5]]);
        let mut buf = Vec::new();
        f.write_csv(&g, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "x0,v_0_0,v_0_1\n0,1,2\n0.5,3,4\n1,5,6.5\n");
    }

    #[test]
    fn negated_transpose_roundtrip() {
        let modes = ModeSet::new(2, 3).unwrap();
        let rows: Vec<Vec<f64>> = (0..4).map(|n| (0..6).map(|p| (n * 6 + p) as f64).collect()).collect();
        let f = ValueField::from_node_rows(0.5, modes, &rows);
        let g = f.negated_transpose();
        assert_eq!(g.modes, modes.transposed());
        assert_eq!(g.surface(2, 1)[3], -f.surface(1, 2)[3]);
        assert_eq!(g.negated_transpose(), f);
    }
}

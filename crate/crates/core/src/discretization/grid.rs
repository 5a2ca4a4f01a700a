use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported state dimension.
pub const MAX_DIM: usize = 3;

/// A uniform box grid, row-major (last dimension fastest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialGrid {
    lower: Vec<f64>,
    upper: Vec<f64>,
    counts: Vec<usize>,
    spacing: Vec<f64>,
    strides: Vec<usize>,
}

impl SpatialGrid {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, counts: Vec<usize>) -> Result<Self> {
        let k = counts.len();
        if k == 0 || k > MAX_DIM || lower.len() != k || upper.len() != k {
            return Err(Error::InvalidParameter(format!(
                "grid needs 1..={MAX_DIM} dimensions with matching bounds (got {k} counts, {} lower, {} upper)",
                lower.len(),
                upper.len()
            )));
        }
        let mut spacing = Vec::with_capacity(k);
        for d in 0..k {
            if counts[d] < 3 {
                return Err(Error::InvalidParameter(format!(
                    "grid dimension {d}: need at least 3 nodes (got {})",
                    counts[d]
                )));
            }
            let h = (upper[d] - lower[d]) / (counts[d] - 1) as f64;
            if !(lower[d].is_finite() && upper[d].is_finite() && h > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "grid dimension {d}: bounds [{}, {}] do not form a non-empty box",
                    lower[d], upper[d]
                )));
            }
            spacing.push(h);
        }
        let mut strides = vec![1; k];
        for d in (0..k - 1).rev() {
            strides[d] = strides[d + 1] * counts[d + 1];
        }
        Ok(SpatialGrid {
            lower,
            upper,
            counts,
            spacing,
            strides,
        })
    }

    pub fn uniform_1d(lower: f64, upper: f64, n: usize) -> Result<Self> {
        Self::new(vec![lower], vec![upper], vec![n])
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    /// Total node count.
    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn stride(&self, d: usize) -> usize {
        self.strides[d]
    }

    /// Coordinate of index `i` along dimension `d`. The last node is the
    /// upper bound exactly.
    #[inline]
    pub fn coord(&self, d: usize, i: usize) -> f64 {
        if i + 1 == self.counts[d] {
            self.upper[d]
        } else {
            self.lower[d] + i as f64 * self.spacing[d]
        }
    }

    #[inline]
    pub fn multi_index(&self, node: usize) -> [usize; MAX_DIM] {
        let mut out = [0; MAX_DIM];
        let mut rest = node;
        for d in 0..self.dim() {
            out[d] = rest / self.strides[d];
            rest %= self.strides[d];
        }
        out
    }

    #[inline]
    pub fn flat_index(&self, idx: &[usize]) -> usize {
        (0..self.dim()).map(|d| idx[d] * self.strides[d]).sum()
    }

    /// Writes the coordinates of `node` into `out[..k]`.
    #[inline]
    pub fn node_coords(&self, node: usize, out: &mut [f64]) {
        let idx = self.multi_index(node);
        for d in 0..self.dim() {
            out[d] = self.coord(d, idx[d]);
        }
    }

    pub fn node_point(&self, node: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        self.node_coords(node, &mut x);
        x
    }

    /// Neighbour of `node` one step along `d` (`dir` = +1 or -1), if inside.
    #[inline]
    pub fn neighbour(&self, node: usize, d: usize, dir: i32) -> Option<usize> {
        let i = self.multi_index(node)[d];
        if dir > 0 {
            (i + 1 < self.counts[d]).then(|| node + self.strides[d])
        } else {
            (i > 0).then(|| node - self.strides[d])
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        (0..self.dim()).all(|d| x[d] >= self.lower[d] && x[d] <= self.upper[d])
    }
}

/// Uniform backward time grid `t_k = k T / N`, with `t_N = T` exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if steps == 0 || !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "time grid needs T > 0 and at least one step (got T = {horizon}, N = {steps})"
            )));
        }
        Ok(TimeGrid { horizon, steps })
    }

    /// Smallest grid with `dt * rate <= safety`, never coarser than `min_steps`.
    pub fn for_rate(horizon: f64, rate: f64, safety: f64, min_steps: usize) -> Result<Self> {
        if !(rate >= 0.0 && rate.is_finite()) || !(safety > 0.0 && safety <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "cannot size a time grid for rate {rate} and safety {safety}"
            )));
        }
        let mut steps = ((horizon * rate / safety).ceil() as usize).max(min_steps).max(1);
        // guard against rounding at the boundary
        while horizon / steps as f64 * rate > safety {
            steps += 1;
        }
        Self::new(horizon, steps)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    #[inline]
    pub fn t(&self, k: usize) -> f64 {
        if k >= self.steps {
            self.horizon
        } else {
            self.horizon * k as f64 / self.steps as f64
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.t(k)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_row_major() {
        let g = SpatialGrid::new(vec![0.0, -1.0], vec![1.0, 1.0], vec![3, 5]).unwrap();
        assert_eq!(g.len(), 15);
        assert_eq!(g.multi_index(7)[..2], [1, 2]);
        assert_eq!(g.flat_index(&[1, 2]), 7);
        assert_eq!(g.node_point(7), vec![0.5, 0.0]);
        assert_eq!(g.neighbour(7, 1, 1), Some(8));
        assert_eq!(g.neighbour(7, 0, -1), Some(2));
        assert_eq!(g.neighbour(14, 0, 1), None);
        assert_eq!(g.coord(1, 4), 1.0);
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(SpatialGrid::uniform_1d(0.0, 1.0, 2).is_err());
        assert!(SpatialGrid::uniform_1d(1.0, 1.0, 5).is_err());
        assert!(SpatialGrid::new(vec![0.0; 4], vec![1.0; 4], vec![3; 4]).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
    }

    #[test]
    fn last_time_is_horizon() {
        let tg = TimeGrid::new(0.3, 7).unwrap();
        assert_eq!(tg.t(7), 0.3);
        assert_eq!(tg.t(0), 0.0);
        assert_eq!(tg.times().len(), 8);
    }

    #[test]
    fn rate_sizing() {
        let tg = TimeGrid::for_rate(1.0, 90.0, 0.9, 10).unwrap();
        assert_eq!(tg.steps(), 100);
        assert!(tg.dt() * 90.0 <= 0.9);
        assert_eq!(TimeGrid::for_rate(1.0, 1.0, 0.9, 10).unwrap().steps(), 10);
    }
}

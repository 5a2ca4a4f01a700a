use super::{SpatialGrid, ValueField, MAX_DIM};
use crate::model::GrowthBound;

/// Off-grid evaluation as a fixed linear functional:
/// `value = sum_c weights[c] * v[nodes[c]] + offset`.
///
/// Weights are non-negative and sum to one; `offset` is the growth
/// extrapolation term and does not depend on the field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterpStencil {
    pub nodes: [usize; 1 << MAX_DIM],
    pub weights: [f64; 1 << MAX_DIM],
    pub len: usize,
    pub offset: f64,
}

impl InterpStencil {
    #[inline]
    pub fn apply(&self, surface: &[f64]) -> f64 {
        let mut s = 0.0;
        for c in 0..self.len {
            s += self.weights[c] * surface[self.nodes[c]];
        }
        s + self.offset
    }

    /// Weight the stencil puts on `node` (zero if absent).
    pub fn weight_on(&self, node: usize) -> f64 {
        (0..self.len).filter(|&c| self.nodes[c] == node).map(|c| self.weights[c]).sum()
    }
}

/// Growth term added when `xq` lies beyond the boundary projection `xb`
/// along one axis: `sign(xb) C (|xq|^g - |xb|^g)`.
#[inline]
pub fn growth_offset(growth: &GrowthBound, xb: f64, xq: f64) -> f64 {
    if growth.c == 0.0 || xb == xq {
        return 0.0;
    }
    let sign = if xb > 0.0 {
        1.0
    } else if xb < 0.0 {
        -1.0
    } else {
        0.0
    };
    sign * growth.c * (xq.abs().powf(growth.exponent) - xb.abs().powf(growth.exponent))
}

/// Multilinear stencil at `x`, with growth extrapolation outside the box.
pub fn interp_stencil(grid: &SpatialGrid, growth: &GrowthBound, x: &[f64]) -> InterpStencil {
    let k = grid.dim();
    let mut base = [0usize; MAX_DIM];
    let mut frac = [0.0f64; MAX_DIM];
    let mut offset = 0.0;
    for d in 0..k {
        let (lo, hi) = (grid.lower()[d], grid.upper()[d]);
        let xb = x[d].clamp(lo, hi);
        offset += growth_offset(growth, xb, x[d]);
        let n = grid.counts()[d];
        let s = (xb - lo) / grid.spacing()[d];
        let mut c = s.floor() as usize;
        if c >= n - 1 {
            c = n - 2;
        }
        let mut f = s - c as f64;
        // snap rounding noise so grid nodes reproduce stored values exactly
        if f < 1e-10 {
            f = 0.0;
        } else if f > 1.0 - 1e-10 {
            if c + 2 < n {
                c += 1;
                f = 0.0;
            } else {
                f = 1.0;
            }
        }
        base[d] = c;
        frac[d] = f.clamp(0.0, 1.0);
    }
    let mut st = InterpStencil {
        nodes: [0; 1 << MAX_DIM],
        weights: [0.0; 1 << MAX_DIM],
        len: 0,
        offset,
    };
    for corner in 0..(1usize << k) {
        let mut w = 1.0;
        let mut node = 0;
        for d in 0..k {
            let up = (corner >> (k - 1 - d)) & 1 == 1;
            w *= if up { frac[d] } else { 1.0 - frac[d] };
            node += (base[d] + up as usize) * grid.stride(d);
        }
        if w != 0.0 {
            st.nodes[st.len] = node;
            st.weights[st.len] = w;
            st.len += 1;
        }
    }
    st
}

/// Evaluates surface `(i, j)` of `field` at an arbitrary point.
pub fn interpolate(
    field: &ValueField,
    grid: &SpatialGrid,
    growth: &GrowthBound,
    (i, j): (usize, usize),
    x: &[f64],
) -> f64 {
    interp_stencil(grid, growth, x).apply(field.surface(i, j))
}

pub fn interpolate_surface(surface: &[f64], grid: &SpatialGrid, growth: &GrowthBound, x: &[f64]) -> f64 {
    interp_stencil(grid, growth, x).apply(surface)
}

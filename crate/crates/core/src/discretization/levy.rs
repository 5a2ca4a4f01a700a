use crate::error::{Error, Result};
use crate::model::{Atom, DensitySupport, LevyDensity, LevyMeasureSpec, LevyShape};

/// Atoms whose weight falls below this are dropped.
pub const MIN_ATOM_WEIGHT: f64 = 1e-14;

/// Finite-atom approximation of the Levy measure.
///
/// Every atom satisfies `|e_k| >= cutoff`; the mass below the cutoff is
/// carried only through its second moment `small_jump_moment`, which the
/// operators turn into a diffusion correction.
#[derive(Debug, Clone, PartialEq)]
pub struct LevyQuadrature {
    pub atoms: Vec<Atom>,
    pub cutoff: f64,
    /// `s_delta = int_{|e| < delta} |e|^2 n(de)`.
    pub small_jump_moment: f64,
}

fn norm(e: &[f64]) -> f64 {
    e.iter().map(|v| v * v).sum::<f64>().sqrt()
}

impl LevyQuadrature {
    pub fn empty() -> Self {
        LevyQuadrature {
            atoms: Vec::new(),
            cutoff: 0.0,
            small_jump_moment: 0.0,
        }
    }

    /// Atoms below the cutoff are folded into the small-jump moment;
    /// negligible weights are dropped.
    pub fn from_atoms(atoms: Vec<Atom>, cutoff: f64) -> Self {
        let mut kept = Vec::with_capacity(atoms.len());
        let mut moment = 0.0;
        for a in atoms {
            if a.weight < MIN_ATOM_WEIGHT {
                continue;
            }
            let r = norm(&a.mark);
            if r < cutoff {
                moment += a.weight * r * r;
            } else {
                kept.push(a);
            }
        }
        LevyQuadrature {
            atoms: kept,
            cutoff,
            small_jump_moment: moment,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty() && self.small_jump_moment == 0.0
    }

    /// `sum_k w_k`.
    pub fn total_weight(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).sum()
    }

    /// `sum_k w_k (1 ^ |e_k|^2)`.
    pub fn second_moment_proxy(&self) -> f64 {
        self.atoms
            .iter()
            .map(|a| {
                let r = norm(&a.mark);
                a.weight * (r * r).min(1.0)
            })
            .sum()
    }

    pub fn mark_dim(&self) -> Option<usize> {
        self.atoms.first().map(|a| a.mark.len())
    }
}

fn density_at(d: &LevyDensity, e: f64) -> Result<f64> {
    let v = d
        .expr
        .eval(&[e])
        .map_err(|err| Error::expr(format!("levy density at e = {e}"), err))?;
    if v < 0.0 {
        return Err(Error::NumericDomain(format!("levy density is negative at e = {e} ({v})")));
    }
    Ok(v)
}

fn sides(support: DensitySupport) -> &'static [f64] {
    match support {
        DensitySupport::Both => &[1.0, -1.0],
        DensitySupport::Positive => &[1.0],
        DensitySupport::Negative => &[-1.0],
    }
}

/// Midpoint rule for `int_0^delta e^2 f(+-e) de` with `cells` cells per side.
fn small_moment(d: &LevyDensity, delta: f64, cells: usize) -> Result<f64> {
    let h = delta / cells as f64;
    let mut s = 0.0;
    for &sign in sides(d.support) {
        for c in 0..cells {
            let e = (c as f64 + 0.5) * h;
            s += e * e * density_at(d, sign * e)? * h;
        }
    }
    Ok(s)
}

/// Turns a Levy measure description into atoms.
///
/// Atom lists pass through [`LevyQuadrature::from_atoms`]. A density on
/// scalar marks is discretized by the midpoint rule on
/// `delta <= |e| <= radius` with `n_atoms` cells per side of the support;
/// `radius` defaults to the one given with the density.
pub fn build_levy_quadrature(
    spec: &LevyMeasureSpec,
    n_atoms: usize,
    radius: Option<f64>,
) -> Result<LevyQuadrature> {
    let delta = spec.cutoff;
    match &spec.shape {
        LevyShape::Atoms(atoms) => Ok(LevyQuadrature::from_atoms(atoms.clone(), delta)),
        LevyShape::Density(d) => {
            let r = radius.unwrap_or(d.radius);
            if !(delta > 0.0 && r > delta && r.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "density quadrature needs radius > cutoff > 0 (got radius {r}, cutoff {delta})"
                )));
            }
            if n_atoms == 0 {
                return Err(Error::InvalidParameter("density quadrature needs n_atoms >= 1".into()));
            }
            let h = (r - delta) / n_atoms as f64;
            let mut atoms = Vec::new();
            for &sign in sides(d.support) {
                for c in 0..n_atoms {
                    let e = sign * (delta + (c as f64 + 0.5) * h);
                    let w = density_at(d, e)? * h;
                    atoms.push(Atom { mark: vec![e], weight: w });
                }
            }

            // Refinement sequence for the mass below the cutoff: increments of
            // a convergent midpoint sum shrink, a divergent one's do not.
            const BASE: usize = 1024;
            let s1 = small_moment(d, delta, BASE)?;
            let s2 = small_moment(d, delta, 2 * BASE)?;
            let s4 = small_moment(d, delta, 4 * BASE)?;
            let (d1, d2) = ((s2 - s1).abs(), (s4 - s2).abs());
            if !s4.is_finite() || (d2 > 1e-9 * (1.0 + s4.abs()) && d2 > 0.9 * d1) {
                return Err(Error::NonIntegrable(format!(
                    "int_{{|e|<{delta}}} |e|^2 n(de) does not settle under refinement \
                     ({s1:.6e}, {s2:.6e}, {s4:.6e})"
                )));
            }
            let quad = LevyQuadrature::from_atoms(atoms, delta);
            let proxy = quad.second_moment_proxy();
            if !proxy.is_finite() {
                return Err(Error::NonIntegrable(format!(
                    "sum w_k (1 ^ |e_k|^2) is not finite ({proxy})"
                )));
            }
            Ok(LevyQuadrature {
                small_jump_moment: quad.small_jump_moment + s4,
                ..quad
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::model::density_schema;

    fn density(expr: &str, radius: f64, cutoff: f64) -> LevyMeasureSpec {
        LevyMeasureSpec {
            shape: LevyShape::Density(LevyDensity {
                expr: parse(expr, &density_schema(1)).unwrap(),
                radius,
                support: DensitySupport::Positive,
            }),
            cutoff,
        }
    }

    #[test]
    fn atoms_pass_through() {
        let atoms = vec![
            Atom { mark: vec![1.0], weight: 0.5 },
            Atom { mark: vec![-1.0], weight: 0.5 },
        ];
        let spec = LevyMeasureSpec { shape: LevyShape::Atoms(atoms.clone()), cutoff: 0.0 };
        let q = build_levy_quadrature(&spec, 10, None).unwrap();
        assert_eq!(q.atoms, atoms);
        assert_eq!(q.small_jump_moment, 0.0);
    }

    #[test]
    fn empty_measure() {
        let q = build_levy_quadrature(&LevyMeasureSpec::none(), 10, None).unwrap();
        assert!(q.is_empty());
        assert_eq!(q.total_weight(), 0.0);
    }

    #[test]
    fn small_atoms_fold_into_moment() {
        let q = LevyQuadrature::from_atoms(
            vec![
                Atom { mark: vec![0.05], weight: 4.0 },
                Atom { mark: vec![0.5], weight: 1.0 },
                Atom { mark: vec![2.0], weight: 1e-16 },
            ],
            0.1,
        );
        assert_eq!(q.atoms.len(), 1);
        assert!((q.small_jump_moment - 0.01).abs() < 1e-15);
    }

    #[test]
    fn inverse_square_density_is_accepted() {
        let q = build_levy_quadrature(&density("e^(-2)", 1.0, 0.1), 400, None).unwrap();
        // sum w_k (1 ^ e_k^2) -> int_0.1^1 e^-2 e^2 de = 0.9
        assert!((q.second_moment_proxy() - 0.9).abs() < 1e-12);
        // mass below the cutoff: int_0^0.1 e^2 e^-2 de = 0.1
        assert!((q.small_jump_moment - 0.1).abs() < 1e-12);
        // total weight int_0.1^1 e^-2 = 9, midpoint rule slightly low
        assert!((q.total_weight() - 9.0).abs() < 0.01);
    }

    #[test]
    fn cubic_singularity_is_rejected() {
        let r = build_levy_quadrature(&density("e^(-3)", 1.0, 0.1), 100, None);
        assert!(matches!(r, Err(Error::NonIntegrable(_))), "{r:?}");
    }

    #[test]
    fn integrable_singularity_is_accepted() {
        // e^2 * e^-2.5 = e^-0.5 is integrable at 0
        let q = build_levy_quadrature(&density("e^(-2.5)", 1.0, 0.1), 100, None).unwrap();
        let exact = 2.0 * 0.1f64.sqrt();
        assert!((q.small_jump_moment - exact).abs() < 5e-3);
    }

    #[test]
    fn density_needs_positive_cutoff() {
        let r = build_levy_quadrature(&density("1", 1.0, 0.0), 100, None);
        assert!(matches!(r, Err(Error::InvalidParameter(_))));
    }
}

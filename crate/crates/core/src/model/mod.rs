//! Problem instances: modes, coefficients, switching costs and terminal data.
//!
//! A [`ProblemSpec`] is compiled from a JSON [`ProblemFile`] in which every
//! coefficient is an expression string. Variable names available to each
//! coefficient family:
//!
//! | coefficient                    | variables                                      |
//! |--------------------------------|------------------------------------------------|
//! | drift, volatility, costs       | `t`, `x0..` (`x` when k = 1)                   |
//! | jump amplitude, jump weights   | `x0..`, `e0..` (`e` when l = 1)                |
//! | drivers `g^{ij}`               | `t`, `x0..`, `y_k_l`, `y` (= `y_i_j`), `z0..` (`z` when d = 1), `q` |
//! | terminal `h^{ij}`              | `x0..`                                         |
//! | Levy density                   | `e`                                            |

mod file;
mod obstacles;
mod validate;

use crate::error::{Error, Result};
use crate::expr::{parse, BinOp, Expr, Schema};

pub use file::{
    AtomFile, DensityFile, DensitySupport, ExprSource, GrowthFile, LevyFile, ModesFile,
    OneOrMany, ProblemFile,
};
pub use obstacles::{
    eval_f_ij, eval_obstacles, eval_penalized_driver, lower_obstacle, penalty_term,
    upper_obstacle, CostSnapshot, Obstacles,
};
pub use validate::{
    sample_points, validate_all, validate_cost_signs, validate_driver_monotonicity,
    validate_jump_bounds, validate_non_free_loop, validate_non_free_loop_with,
    validate_terminal_consistency, LoopWitness, ValidationReport, Witness,
    DEFAULT_LOOP_TOLERANCE, MAX_LOOP_COUNT, MAX_MODE_PAIRS,
};

/// Largest slot count any coefficient schema may have.
pub const MAX_SLOTS: usize = 64;

/// Player mode counts: `m1` for the maximizer, `m2` for the minimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ModeSet {
    pub m1: usize,
    pub m2: usize,
}

impl ModeSet {
    pub fn new(m1: usize, m2: usize) -> Result<Self> {
        if m1 == 0 || m2 == 0 {
            return Err(Error::MalformedSpec(format!(
                "mode counts must be at least 1 (got m1 = {m1}, m2 = {m2})"
            )));
        }
        Ok(ModeSet { m1, m2 })
    }

    pub fn pair_count(&self) -> usize {
        self.m1 * self.m2
    }

    /// Flat row-major index of the pair `(i, j)`.
    #[inline]
    pub fn pair(&self, i: usize, j: usize) -> usize {
        i * self.m2 + j
    }

    #[inline]
    pub fn unpair(&self, p: usize) -> (usize, usize) {
        (p / self.m2, p % self.m2)
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.m1).flat_map(move |i| (0..self.m2).map(move |j| (i, j)))
    }

    pub fn transposed(&self) -> ModeSet {
        ModeSet {
            m1: self.m2,
            m2: self.m1,
        }
    }
}

/// Polynomial growth envelope `C (1 + |x|^gamma)` used when extrapolating
/// value surfaces beyond the computational box. A negative `c` only arises
/// on negated instances (see [`ProblemSpec::negated`]), where the
/// extrapolated tail is mirrored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthBound {
    pub c: f64,
    pub exponent: f64,
}

impl GrowthBound {
    pub fn new(c: f64, exponent: f64) -> Result<Self> {
        if !(c >= 0.0 && c.is_finite()) || !(exponent >= 0.0 && exponent.is_finite()) {
            return Err(Error::MalformedSpec(format!(
                "growth bound needs finite C >= 0 and exponent >= 0 (got {c}, {exponent})"
            )));
        }
        Ok(GrowthBound { c, exponent })
    }

    pub fn clamp() -> Self {
        GrowthBound {
            c: 0.0,
            exponent: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub mark: Vec<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevyDensity {
    pub expr: Expr,
    pub radius: f64,
    pub support: DensitySupport,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LevyShape {
    Atoms(Vec<Atom>),
    Density(LevyDensity),
}

/// The Levy measure as given by the user, before quadrature.
#[derive(Debug, Clone, PartialEq)]
pub struct LevyMeasureSpec {
    pub shape: LevyShape,
    pub cutoff: f64,
}

impl LevyMeasureSpec {
    pub fn none() -> Self {
        LevyMeasureSpec {
            shape: LevyShape::Atoms(Vec::new()),
            cutoff: 0.0,
        }
    }
}

/// A compiled switching-game instance. Immutable once built.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub modes: ModeSet,
    pub horizon: f64,
    /// State dimension k.
    pub dim: usize,
    /// Brownian dimension d.
    pub brownian_dim: usize,
    /// Mark dimension l.
    pub mark_dim: usize,
    pub drift: Vec<Expr>,
    /// Row-major k x d.
    pub vol: Vec<Expr>,
    pub jump_amplitude: Vec<Expr>,
    /// Per pair, row-major over `(i, j)`.
    pub jump_weights: Vec<Expr>,
    pub drivers: Vec<Expr>,
    /// `m1 x m1`, `None` on the diagonal.
    pub lower_costs: Vec<Option<Expr>>,
    /// `m2 x m2`, `None` on the diagonal.
    pub upper_costs: Vec<Option<Expr>>,
    pub terminal: Vec<Expr>,
    pub levy: LevyMeasureSpec,
    pub growth: GrowthBound,
    /// Optional user-declared Lipschitz constant of the drivers.
    pub driver_lipschitz: Option<f64>,
}

fn indexed(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|k| format!("{prefix}{k}")).collect()
}

fn with_scalar_alias(mut s: Schema, prefix: &str, n: usize) -> Schema {
    if n == 1 {
        s = s.with_alias(prefix, &format!("{prefix}0"));
    }
    s
}

/// Schema for drift, volatility and switching costs: `(t, x)`.
pub fn coefficient_schema(k: usize) -> Schema {
    let mut names = vec!["t".to_string()];
    names.extend(indexed("x", k));
    with_scalar_alias(Schema::new(names), "x", k)
}

/// Schema for jump amplitude and jump weights: `(x, e)`.
pub fn jump_schema(k: usize, l: usize) -> Schema {
    let mut names = indexed("x", k);
    names.extend(indexed("e", l));
    let s = with_scalar_alias(Schema::new(names), "x", k);
    with_scalar_alias(s, "e", l)
}

/// Schema for the driver of pair `(i, j)`: `(t, x, y, z, q)`.
pub fn driver_schema(k: usize, d: usize, modes: ModeSet, i: usize, j: usize) -> Schema {
    let mut names = vec!["t".to_string()];
    names.extend(indexed("x", k));
    for (a, b) in modes.pairs() {
        names.push(format!("y_{a}_{b}"));
    }
    names.extend(indexed("z", d));
    names.push("q".to_string());
    let s = with_scalar_alias(Schema::new(names), "x", k);
    let s = with_scalar_alias(s, "z", d);
    s.with_alias("y", &format!("y_{i}_{j}"))
}

pub fn terminal_schema(k: usize) -> Schema {
    with_scalar_alias(Schema::new(indexed("x", k)), "x", k)
}

pub fn density_schema(l: usize) -> Schema {
    with_scalar_alias(Schema::new(indexed("e", l)), "e", l)
}

fn compile(src: &ExprSource, schema: &Schema, context: impl Fn() -> String) -> Result<Expr> {
    let text = src.text();
    parse(&text, schema).map_err(|e| Error::expr(context(), e))
}

fn expect_len<T>(v: &[T], n: usize, what: &str) -> Result<()> {
    if v.len() != n {
        return Err(Error::MalformedSpec(format!(
            "{what}: expected {n} entries, found {}",
            v.len()
        )));
    }
    Ok(())
}

fn compile_matrix(
    rows: &[Vec<ExprSource>],
    m1: usize,
    m2: usize,
    what: &str,
    schema: impl Fn(usize, usize) -> Schema,
) -> Result<Vec<Expr>> {
    expect_len(rows, m1, what)?;
    let mut out = Vec::with_capacity(m1 * m2);
    for (i, row) in rows.iter().enumerate() {
        expect_len(row, m2, &format!("{what}[{i}]"))?;
        for (j, src) in row.iter().enumerate() {
            out.push(compile(src, &schema(i, j), || format!("{what}[{i}][{j}]"))?);
        }
    }
    Ok(out)
}

fn compile_costs(
    rows: &Option<Vec<Vec<Option<ExprSource>>>>,
    m: usize,
    what: &str,
    schema: &Schema,
) -> Result<Vec<Option<Expr>>> {
    let mut out = vec![None; m * m];
    if m == 1 {
        return Ok(out);
    }
    let rows = rows
        .as_ref()
        .ok_or_else(|| Error::MalformedSpec(format!("{what} required when the player has several modes")))?;
    expect_len(rows, m, what)?;
    for (a, row) in rows.iter().enumerate() {
        expect_len(row, m, &format!("{what}[{a}]"))?;
        for (b, src) in row.iter().enumerate() {
            if a == b {
                continue;
            }
            let src = src.as_ref().ok_or_else(|| {
                Error::MalformedSpec(format!("{what}[{a}][{b}] missing"))
            })?;
            out[a * m + b] = Some(compile(src, schema, || format!("{what}[{a}][{b}]"))?);
        }
    }
    Ok(out)
}

impl ProblemSpec {
    /// Compiles a parsed problem file, checking shapes and parsing every
    /// expression against its schema.
    pub fn from_file(file: &ProblemFile) -> Result<Self> {
        let modes = ModeSet::new(file.modes.m1, file.modes.m2)?;
        if !(file.horizon > 0.0 && file.horizon.is_finite()) {
            return Err(Error::MalformedSpec(format!(
                "horizon must be a positive finite time (got {})",
                file.horizon
            )));
        }
        let k = file.dim.unwrap_or(1);
        let d = file.brownian_dim.unwrap_or(k);
        let l = file.mark_dim.unwrap_or(1);
        if !(1..=3).contains(&k) || d == 0 || l == 0 {
            return Err(Error::MalformedSpec(format!(
                "dimensions must satisfy 1 <= k <= 3, d >= 1, l >= 1 (got k = {k}, d = {d}, l = {l})"
            )));
        }
        let driver_slots = 2 + k + modes.pair_count() + d;
        if driver_slots > MAX_SLOTS {
            return Err(Error::Capacity(format!(
                "driver schema needs {driver_slots} variables, limit is {MAX_SLOTS}"
            )));
        }
        let cs = coefficient_schema(k);
        let js = jump_schema(k, l);
        let ts = terminal_schema(k);

        let drift = file.drift.as_vec();
        expect_len(&drift, k, "drift")?;
        let drift = drift
            .iter()
            .enumerate()
            .map(|(a, s)| compile(s, &cs, || format!("drift[{a}]")))
            .collect::<Result<Vec<_>>>()?;

        expect_len(&file.volatility, k, "volatility")?;
        let mut vol = Vec::with_capacity(k * d);
        for (a, row) in file.volatility.iter().enumerate() {
            let row = row.as_vec();
            expect_len(&row, d, &format!("volatility[{a}]"))?;
            for (b, s) in row.iter().enumerate() {
                vol.push(compile(s, &cs, || format!("volatility[{a}][{b}]"))?);
            }
        }

        let jump_amplitude = match &file.jump_amplitude {
            Some(v) => {
                let v = v.as_vec();
                expect_len(&v, k, "jump_amplitude")?;
                v.iter()
                    .enumerate()
                    .map(|(a, s)| compile(s, &js, || format!("jump_amplitude[{a}]")))
                    .collect::<Result<Vec<_>>>()?
            }
            None => vec![Expr::num(0.0); k],
        };

        let jump_weights = match &file.jump_weights {
            Some(rows) => compile_matrix(rows, modes.m1, modes.m2, "jump_weights", |_, _| js.clone())?,
            None => vec![Expr::num(0.0); modes.pair_count()],
        };
        let drivers = compile_matrix(&file.drivers, modes.m1, modes.m2, "drivers", |i, j| {
            driver_schema(k, d, modes, i, j)
        })?;
        let terminal = compile_matrix(&file.terminal, modes.m1, modes.m2, "terminal", |_, _| ts.clone())?;
        let lower_costs = compile_costs(&file.lower_costs, modes.m1, "lower_costs", &cs)?;
        let upper_costs = compile_costs(&file.upper_costs, modes.m2, "upper_costs", &cs)?;

        let levy = match &file.levy {
            None => LevyMeasureSpec::none(),
            Some(lf) => {
                let cutoff = lf.cutoff.unwrap_or(0.0);
                if !(0.0..1.0).contains(&cutoff) {
                    return Err(Error::MalformedSpec(format!(
                        "small-jump cutoff must lie in [0, 1) (got {cutoff})"
                    )));
                }
                let shape = match (&lf.atoms, &lf.density) {
                    (Some(_), Some(_)) => {
                        return Err(Error::MalformedSpec(
                            "levy: give either atoms or a density, not both".into(),
                        ))
                    }
                    (Some(atoms), None) => {
                        let mut out = Vec::with_capacity(atoms.len());
                        for (a, atom) in atoms.iter().enumerate() {
                            let mark = atom.mark.as_vec();
                            expect_len(&mark, l, &format!("levy.atoms[{a}].mark"))?;
                            if !(atom.weight > 0.0 && atom.weight.is_finite())
                                || mark.iter().any(|v| !v.is_finite())
                            {
                                return Err(Error::MalformedSpec(format!(
                                    "levy.atoms[{a}]: weight must be positive and finite, marks finite"
                                )));
                            }
                            out.push(Atom {
                                mark,
                                weight: atom.weight,
                            });
                        }
                        LevyShape::Atoms(out)
                    }
                    (None, Some(df)) => {
                        if l != 1 {
                            return Err(Error::Unsupported(
                                "Levy densities are supported for scalar marks only".into(),
                            ));
                        }
                        let expr = compile(&df.expr, &density_schema(l), || "levy.density".into())?;
                        LevyShape::Density(LevyDensity {
                            expr,
                            radius: df.radius,
                            support: df.support.unwrap_or_default(),
                        })
                    }
                    (None, None) => LevyShape::Atoms(Vec::new()),
                };
                LevyMeasureSpec { shape, cutoff }
            }
        };

        let growth = match &file.growth {
            Some(g) => GrowthBound::new(g.c, g.exponent)?,
            None => GrowthBound::clamp(),
        };
        if let Some(lip) = file.driver_lipschitz {
            if !(lip >= 0.0 && lip.is_finite()) {
                return Err(Error::MalformedSpec("driver_lipschitz must be finite and >= 0".into()));
            }
        }

        Ok(ProblemSpec {
            modes,
            horizon: file.horizon,
            dim: k,
            brownian_dim: d,
            mark_dim: l,
            drift,
            vol,
            jump_amplitude,
            jump_weights,
            drivers,
            lower_costs,
            upper_costs,
            terminal,
            levy,
            growth,
            driver_lipschitz: file.driver_lipschitz,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ProblemFile = serde_json::from_str(text)?;
        Self::from_file(&file)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    // ---- coefficient evaluation ----

    fn tx_slots(&self, t: f64, x: &[f64]) -> [f64; MAX_SLOTS] {
        let mut s = [0.0; MAX_SLOTS];
        s[0] = t;
        s[1..=self.dim].copy_from_slice(&x[..self.dim]);
        s
    }

    pub fn drift(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        let s = self.tx_slots(t, x);
        for (a, e) in self.drift.iter().enumerate() {
            out[a] = e.eval(&s).map_err(|err| Error::expr(format!("drift[{a}]"), err))?;
        }
        Ok(())
    }

    /// Fills `out` (row-major k x d) with the volatility matrix.
    pub fn vol(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        let s = self.tx_slots(t, x);
        for (a, e) in self.vol.iter().enumerate() {
            out[a] = e.eval(&s).map_err(|err| Error::expr(format!("volatility[{a}]"), err))?;
        }
        Ok(())
    }

    fn xe_slots(&self, x: &[f64], e: &[f64]) -> [f64; MAX_SLOTS] {
        let mut s = [0.0; MAX_SLOTS];
        s[..self.dim].copy_from_slice(&x[..self.dim]);
        s[self.dim..self.dim + self.mark_dim].copy_from_slice(&e[..self.mark_dim]);
        s
    }

    pub fn jump_amplitude(&self, x: &[f64], e: &[f64], out: &mut [f64]) -> Result<()> {
        let s = self.xe_slots(x, e);
        for (a, ex) in self.jump_amplitude.iter().enumerate() {
            out[a] = ex
                .eval(&s)
                .map_err(|err| Error::expr(format!("jump_amplitude[{a}]"), err))?;
        }
        Ok(())
    }

    pub fn jump_weight(&self, i: usize, j: usize, x: &[f64], e: &[f64]) -> Result<f64> {
        let s = self.xe_slots(x, e);
        self.jump_weights[self.modes.pair(i, j)]
            .eval(&s)
            .map_err(|err| Error::expr(format!("jump_weights[{i}][{j}]"), err))
    }

    /// `g^{ij}(t, x, y, z, q)`; `y` is the full row-major mode matrix.
    #[allow(clippy::too_many_arguments)]
    pub fn driver(&self, i: usize, j: usize, t: f64, x: &[f64], y: &[f64], z: &[f64], q: f64) -> Result<f64> {
        let k = self.dim;
        let np = self.modes.pair_count();
        let d = self.brownian_dim;
        let mut s = [0.0; MAX_SLOTS];
        s[0] = t;
        s[1..=k].copy_from_slice(&x[..k]);
        s[1 + k..1 + k + np].copy_from_slice(&y[..np]);
        s[1 + k + np..1 + k + np + d].copy_from_slice(&z[..d]);
        s[1 + k + np + d] = q;
        self.drivers[self.modes.pair(i, j)]
            .eval(&s)
            .map_err(|err| Error::expr(format!("drivers[{i}][{j}]"), err))
    }

    /// Lower (maximizer) switching cost from mode `i` to `k`, `i != k`.
    pub fn lower_cost(&self, i: usize, k: usize, t: f64, x: &[f64]) -> Result<f64> {
        let m = self.modes.m1;
        match &self.lower_costs[i * m + k] {
            Some(e) => e
                .eval(&self.tx_slots(t, x))
                .map_err(|err| Error::expr(format!("lower_costs[{i}][{k}]"), err)),
            None => Ok(0.0),
        }
    }

    /// Upper (minimizer) switching cost from mode `j` to `l`, `j != l`.
    pub fn upper_cost(&self, j: usize, l: usize, t: f64, x: &[f64]) -> Result<f64> {
        let m = self.modes.m2;
        match &self.upper_costs[j * m + l] {
            Some(e) => e
                .eval(&self.tx_slots(t, x))
                .map_err(|err| Error::expr(format!("upper_costs[{j}][{l}]"), err)),
            None => Ok(0.0),
        }
    }

    pub fn terminal(&self, i: usize, j: usize, x: &[f64]) -> Result<f64> {
        let mut s = [0.0; MAX_SLOTS];
        s[..self.dim].copy_from_slice(&x[..self.dim]);
        self.terminal[self.modes.pair(i, j)]
            .eval(&s)
            .map_err(|err| Error::expr(format!("terminal[{i}][{j}]"), err))
    }

    /// Jacobian of the jump amplitude in the mark at `e = 0` (row-major
    /// k x l), by central differences. Drives the small-jump diffusion term.
    pub fn small_jump_jacobian(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        const H: f64 = 1e-6;
        let (k, l) = (self.dim, self.mark_dim);
        let mut e = vec![0.0; l];
        let mut plus = vec![0.0; k];
        let mut minus = vec![0.0; k];
        for c in 0..l {
            e[c] = H;
            self.jump_amplitude(x, &e, &mut plus)?;
            e[c] = -H;
            self.jump_amplitude(x, &e, &mut minus)?;
            e[c] = 0.0;
            for r in 0..k {
                out[r * l + c] = (plus[r] - minus[r]) / (2.0 * H);
            }
        }
        Ok(())
    }

    pub fn cost_snapshot(&self, t: f64, x: &[f64]) -> Result<CostSnapshot> {
        let (m1, m2) = (self.modes.m1, self.modes.m2);
        let mut lower = vec![0.0; m1 * m1];
        let mut upper = vec![0.0; m2 * m2];
        for a in 0..m1 {
            for b in 0..m1 {
                if a != b {
                    lower[a * m1 + b] = self.lower_cost(a, b, t, x)?;
                }
            }
        }
        for a in 0..m2 {
            for b in 0..m2 {
                if a != b {
                    upper[a * m2 + b] = self.upper_cost(a, b, t, x)?;
                }
            }
        }
        Ok(CostSnapshot {
            modes: self.modes,
            lower,
            upper,
        })
    }

    pub fn has_jumps(&self) -> bool {
        match &self.levy.shape {
            LevyShape::Atoms(a) => !a.is_empty(),
            LevyShape::Density(_) => true,
        }
    }

    /// True when no driver references `z`.
    pub fn drivers_z_independent(&self) -> bool {
        self.drivers
            .iter()
            .all(|g| !g.references(&|n: &str| n.starts_with('z')))
    }

    /// True when no driver references any entry of the value matrix.
    pub fn drivers_y_independent(&self) -> bool {
        self.drivers
            .iter()
            .all(|g| !g.references(&|n: &str| n.starts_with('y')))
    }

    // ---- transformations ----

    /// The dual instance obtained by negating the solution: modes are
    /// transposed (the minimizer becomes the maximizer), terminal data and
    /// drivers are negated, and the two cost families trade places. If `v`
    /// solves a system with lower obstacles for the dual, `-v^T` solves the
    /// corresponding upper-obstacle system for `self`.
    pub fn negated(&self) -> ProblemSpec {
        let modes = self.modes.transposed();
        let (k, d) = (self.dim, self.brownian_dim);
        let mut jump_weights = Vec::with_capacity(modes.pair_count());
        let mut drivers = Vec::with_capacity(modes.pair_count());
        let mut terminal = Vec::with_capacity(modes.pair_count());
        for (a, b) in modes.pairs() {
            // dual pair (a, b) is original pair (b, a)
            let orig = self.modes.pair(b, a);
            jump_weights.push(self.jump_weights[orig].clone());
            terminal.push(self.terminal[orig].clone().negate());
            let schema = driver_schema(k, d, modes, a, b);
            let rewritten = self.drivers[orig]
                .rewrite_vars(&|name: &str| -> std::result::Result<Expr, ()> {
                    let var = |n: &str| Expr::Var {
                        slot: schema.slot(n).expect("dual schema covers original names"),
                        name: n.to_string(),
                    };
                    if let Some(rest) = name.strip_prefix("y_") {
                        let mut it = rest.split('_');
                        let p: usize = it.next().and_then(|s| s.parse().ok()).ok_or(())?;
                        let q: usize = it.next().and_then(|s| s.parse().ok()).ok_or(())?;
                        Ok(var(&format!("y_{q}_{p}")).negate())
                    } else if name == "y" || name.starts_with('z') || name == "q" {
                        Ok(var(name).negate())
                    } else {
                        Ok(var(name))
                    }
                })
                .expect("driver variables follow the schema naming");
            drivers.push(rewritten.negate());
        }
        ProblemSpec {
            modes,
            horizon: self.horizon,
            dim: self.dim,
            brownian_dim: self.brownian_dim,
            mark_dim: self.mark_dim,
            drift: self.drift.clone(),
            vol: self.vol.clone(),
            jump_amplitude: self.jump_amplitude.clone(),
            jump_weights,
            drivers,
            lower_costs: self.upper_costs.clone(),
            upper_costs: self.lower_costs.clone(),
            terminal,
            levy: self.levy.clone(),
            growth: GrowthBound {
                c: -self.growth.c,
                exponent: self.growth.exponent,
            },
            driver_lipschitz: self.driver_lipschitz,
        }
    }

    /// Same instance with every terminal function shifted by `c`.
    pub fn with_terminal_shift(&self, c: f64) -> ProblemSpec {
        let mut out = self.clone();
        for h in out.terminal.iter_mut() {
            *h = Expr::binary(BinOp::Add, h.clone(), Expr::num(c));
        }
        out
    }

    /// Same instance with terminal data `h^{ij} + bump(x)` where `bump` is an
    /// expression over the terminal schema.
    pub fn with_terminal_bump(&self, bump: &str) -> Result<ProblemSpec> {
        let bump = parse(bump, &terminal_schema(self.dim)).map_err(|e| Error::expr("terminal bump", e))?;
        let mut out = self.clone();
        for h in out.terminal.iter_mut() {
            *h = Expr::binary(BinOp::Add, h.clone(), bump.clone());
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const TWO_BY_TWO: &str = r#"{
        "modes": {"m1": 2, "m2": 2},
        "horizon": 1.0,
        "drift": ["0.1*x"],
        "volatility": [["0.2"]],
        "jump_amplitude": ["e"],
        "jump_weights": [["0.5*min(1, abs(e))", "0"], ["0", "0.25*min(1, abs(e))"]],
        "drivers": [["x + 0.1*q + 0.05*y_1_0", "1 - y"], ["0.5*x + z", "q"]],
        "lower_costs": [[null, "0.3"], ["0.2", null]],
        "upper_costs": [[null, 0.25], [0.35, null]],
        "terminal": [["x", "x - 0.1"], ["x + 0.1", "x"]],
        "levy": {"atoms": [{"mark": 0.5, "weight": 1.0}, {"mark": -0.5, "weight": 1.0}]}
    }"#;

    #[test]
    fn compiles_and_evaluates() {
        let spec = ProblemSpec::from_json(TWO_BY_TWO).unwrap();
        assert_eq!(spec.modes.pair_count(), 4);
        let y = [1.0, 2.0, 3.0, 4.0];
        let g = spec.driver(0, 0, 0.0, &[2.0], &y, &[0.0], 1.0).unwrap();
        assert!((g - (2.0 + 0.1 + 0.15)).abs() < 1e-15);
        // own-component alias
        assert_eq!(spec.driver(0, 1, 0.0, &[0.0], &y, &[0.0], 0.0).unwrap(), -1.0);
        assert_eq!(spec.lower_cost(0, 1, 0.0, &[0.0]).unwrap(), 0.3);
        assert_eq!(spec.upper_cost(1, 0, 0.0, &[0.0]).unwrap(), 0.35);
        let mut jac = [0.0];
        spec.small_jump_jacobian(&[0.3], &mut jac).unwrap();
        assert!((jac[0] - 1.0).abs() < 1e-9);
        assert!(!spec.drivers_z_independent());
        assert!(!spec.drivers_y_independent());
    }

    #[test]
    fn rejects_bad_shapes() {
        let bad = TWO_BY_TWO.replace(r#""drift": ["0.1*x"]"#, r#""drift": ["0.1*x", "0"]"#);
        assert!(matches!(ProblemSpec::from_json(&bad), Err(Error::MalformedSpec(_))));
        let bad = TWO_BY_TWO.replace("0.5*x + z", "0.5*x + w");
        assert!(matches!(ProblemSpec::from_json(&bad), Err(Error::Expr { .. })));
        let bad = TWO_BY_TWO.replace(r#""m1": 2"#, r#""m1": 0"#);
        assert!(ProblemSpec::from_json(&bad).is_err());
    }

    #[test]
    fn negation_is_an_involution_on_values() {
        let spec = ProblemSpec::from_json(TWO_BY_TWO).unwrap();
        let dual = spec.negated();
        let back = dual.negated();
        assert_eq!(dual.modes, ModeSet { m1: 2, m2: 2 });
        let y = [0.3, -1.2, 2.5, 0.7];
        let z = [0.4];
        for (i, j) in spec.modes.pairs() {
            let g = spec.driver(i, j, 0.1, &[0.7], &y, &z, 0.2).unwrap();
            let gb = back.driver(i, j, 0.1, &[0.7], &y, &z, 0.2).unwrap();
            assert_eq!(g, gb);
            // dual driver at (j, i) evaluated on the negated transposed matrix
            let mut yt = [0.0; 4];
            for (a, b) in spec.modes.pairs() {
                yt[dual.modes.pair(b, a)] = -y[spec.modes.pair(a, b)];
            }
            let gd = dual.driver(j, i, 0.1, &[0.7], &yt, &[-0.4], -0.2).unwrap();
            assert!((gd + g).abs() < 1e-15);
            assert_eq!(
                dual.terminal(j, i, &[0.3]).unwrap(),
                -spec.terminal(i, j, &[0.3]).unwrap()
            );
        }
        assert_eq!(dual.lower_cost(0, 1, 0.0, &[0.0]).unwrap(), 0.25);
    }
}

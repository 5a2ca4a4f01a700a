//! Sampling validators for the standing assumptions on an instance.
//!
//! None of these is a proof: each check evaluates the coefficients at the
//! supplied sample points and reports the most adverse value it saw.

use serde::Serialize;

use super::{CostSnapshot, ProblemSpec};
use crate::discretization::LevyQuadrature;
use crate::error::{Error, Result};

/// Relative tolerance under which a loop sum counts as zero.
pub const DEFAULT_LOOP_TOLERANCE: f64 = 1e-9;
/// Largest `m1 * m2` the loop enumeration accepts.
pub const MAX_MODE_PAIRS: usize = 36;
/// Largest number of directed simple loops enumerated before giving up.
pub const MAX_LOOP_COUNT: usize = 5_000_000;

const TERMINAL_TOLERANCE: f64 = 1e-12;
const MAX_RECORDED: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoopWitness {
    /// The closed sequence of mode pairs, first pair repeated at the end.
    pub pairs: Vec<(usize, usize)>,
    pub sum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub t: f64,
    pub x: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pair: Option<(usize, usize)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cycle: Option<LoopWitness>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub assumption: String,
    pub passed: bool,
    /// Number of individual checks performed.
    pub checked: usize,
    pub violations: usize,
    /// Most adverse value found: the violation magnitude for inequality
    /// checks, the smallest absolute loop sum for the loop check.
    pub worst: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
    /// First few violations beyond the main witness.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub examples: Vec<Witness>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl ValidationReport {
    fn new(assumption: &str) -> Self {
        ValidationReport {
            assumption: assumption.to_string(),
            passed: true,
            checked: 0,
            violations: 0,
            worst: 0.0,
            witness: None,
            examples: Vec::new(),
            note: None,
        }
    }

    fn record(&mut self, w: Witness, magnitude: f64) {
        self.passed = false;
        self.violations += 1;
        if self.witness.is_none() || magnitude > self.worst {
            if let Some(old) = self.witness.take() {
                if self.examples.len() < MAX_RECORDED {
                    self.examples.push(old);
                }
            }
            self.witness = Some(w);
            self.worst = magnitude;
        } else if self.examples.len() < MAX_RECORDED {
            self.examples.push(w);
        }
    }
}

/// Sample points `(t, x)`: every `x` in `xs` at `n_times` equally spaced
/// times in `[0, T]` (at least the endpoints).
pub fn sample_points(spec: &ProblemSpec, xs: &[Vec<f64>], n_times: usize) -> Vec<(f64, Vec<f64>)> {
    let n_times = n_times.max(2);
    let mut out = Vec::with_capacity(xs.len() * n_times);
    for k in 0..n_times {
        let t = if k + 1 == n_times {
            spec.horizon
        } else {
            spec.horizon * k as f64 / (n_times - 1) as f64
        };
        for x in xs {
            out.push((t, x.clone()));
        }
    }
    out
}

/// Checks that no simple loop of single-player switches has zero total cost.
pub fn validate_non_free_loop(spec: &ProblemSpec, points: &[(f64, Vec<f64>)]) -> Result<ValidationReport> {
    validate_non_free_loop_with(spec, points, DEFAULT_LOOP_TOLERANCE)
}

pub fn validate_non_free_loop_with(
    spec: &ProblemSpec,
    points: &[(f64, Vec<f64>)],
    tolerance: f64,
) -> Result<ValidationReport> {
    if points.is_empty() {
        return Err(Error::InvalidParameter("loop validation needs sample points".into()));
    }
    let modes = spec.modes;
    let np = modes.pair_count();
    if np > MAX_MODE_PAIRS {
        return Err(Error::Capacity(format!(
            "loop enumeration supports at most {MAX_MODE_PAIRS} mode pairs, instance has {np}"
        )));
    }
    let snapshots: Vec<CostSnapshot> = points
        .iter()
        .map(|(t, x)| spec.cost_snapshot(*t, x))
        .collect::<Result<_>>()?;

    // Step cost phi for moving from pair a to pair b at every sample point.
    let step = |a: usize, b: usize, s: &CostSnapshot| -> f64 {
        let (i, j) = modes.unpair(a);
        let (k, l) = modes.unpair(b);
        if i != k {
            -s.lower_cost(i, k)
        } else {
            s.upper_cost(j, l)
        }
    };
    let neighbours = |a: usize| -> Vec<usize> {
        let (i, j) = modes.unpair(a);
        let mut out = Vec::with_capacity(modes.m1 + modes.m2);
        out.extend((0..modes.m1).filter(|&k| k != i).map(|k| modes.pair(k, j)));
        out.extend((0..modes.m2).filter(|&l| l != j).map(|l| modes.pair(i, l)));
        out
    };
    let adjacency: Vec<Vec<usize>> = (0..np).map(neighbours).collect();

    let mut report = ValidationReport::new("A3 non-free-loop");
    report.worst = f64::INFINITY;
    let mut loops = 0usize;

    struct Frame {
        node: usize,
        next: usize,
        sums: Vec<f64>,
        mags: Vec<f64>,
    }

    let npts = snapshots.len();
    for start in 0..np {
        let mut path = vec![start];
        let mut on_path = vec![false; np];
        on_path[start] = true;
        let mut stack = vec![Frame {
            node: start,
            next: 0,
            sums: vec![0.0; npts],
            mags: vec![0.0; npts],
        }];
        while let Some(top) = stack.last_mut() {
            if top.next >= adjacency[top.node].len() {
                let f = stack.pop().expect("non-empty");
                on_path[f.node] = false;
                path.pop();
                continue;
            }
            let nb = adjacency[top.node][top.next];
            top.next += 1;
            let node = top.node;
            if nb == start && path.len() >= 2 {
                loops += 1;
                if loops > MAX_LOOP_COUNT {
                    return Err(Error::Capacity(format!(
                        "more than {MAX_LOOP_COUNT} simple loops; reduce the mode sets"
                    )));
                }
                let top = stack.last().expect("non-empty");
                for (p, s) in snapshots.iter().enumerate() {
                    let c = step(node, nb, s);
                    let sum = top.sums[p] + c;
                    let mag = top.mags[p] + c.abs();
                    report.checked += 1;
                    report.worst = report.worst.min(sum.abs());
                    if sum.abs() <= tolerance * mag {
                        let mut pairs: Vec<(usize, usize)> = path.iter().map(|&a| modes.unpair(a)).collect();
                        pairs.push(modes.unpair(start));
                        let w = Witness {
                            t: points[p].0,
                            x: points[p].1.clone(),
                            pair: None,
                            cycle: Some(LoopWitness { pairs, sum }),
                            value: sum,
                        };
                        report.passed = false;
                        report.violations += 1;
                        if report.witness.is_none() {
                            report.witness = Some(w);
                        } else if report.examples.len() < MAX_RECORDED {
                            report.examples.push(w);
                        }
                    }
                }
                continue;
            }
            if nb <= start || on_path[nb] {
                continue;
            }
            let top = stack.last().expect("non-empty");
            let mut sums = top.sums.clone();
            let mut mags = top.mags.clone();
            for (p, s) in snapshots.iter().enumerate() {
                let c = step(node, nb, s);
                sums[p] += c;
                mags[p] += c.abs();
            }
            on_path[nb] = true;
            path.push(nb);
            stack.push(Frame {
                node: nb,
                next: 0,
                sums,
                mags,
            });
        }
    }
    if loops == 0 {
        report.worst = 0.0;
        report.note = Some("no loops: each player has a single mode".into());
    } else {
        report.note = Some(format!("{loops} directed simple loops enumerated"));
    }
    Ok(report)
}

/// Checks `max_k (h^{kj} - lower_{ik}(T)) <= h^{ij} <= min_l (h^{il} + upper_{jl}(T))`.
pub fn validate_terminal_consistency(spec: &ProblemSpec, xs: &[Vec<f64>]) -> Result<ValidationReport> {
    let modes = spec.modes;
    let t = spec.horizon;
    let mut report = ValidationReport::new("A4 terminal consistency");
    for x in xs {
        let costs = spec.cost_snapshot(t, x)?;
        let h: Vec<f64> = modes
            .pairs()
            .map(|(i, j)| spec.terminal(i, j, x))
            .collect::<Result<_>>()?;
        for (i, j) in modes.pairs() {
            let own = h[modes.pair(i, j)];
            let lo = super::lower_obstacle(&h, &costs, i, j);
            let up = super::upper_obstacle(&h, &costs, i, j);
            let excess = (lo - own).max(own - up).max(0.0);
            report.checked += 1;
            if excess > TERMINAL_TOLERANCE * (1.0 + own.abs()) {
                report.record(
                    Witness {
                        t,
                        x: x.clone(),
                        pair: Some((i, j)),
                        cycle: None,
                        value: excess,
                    },
                    excess,
                );
            }
        }
    }
    Ok(report)
}

/// Switching costs must be non-negative.
pub fn validate_cost_signs(spec: &ProblemSpec, points: &[(f64, Vec<f64>)]) -> Result<ValidationReport> {
    let mut report = ValidationReport::new("A3 non-negative switching costs");
    let modes = spec.modes;
    for (t, x) in points {
        let s = spec.cost_snapshot(*t, x)?;
        for a in 0..modes.m1 {
            for b in (0..modes.m1).filter(|&b| b != a) {
                report.checked += 1;
                let c = s.lower_cost(a, b);
                if c < 0.0 {
                    report.record(
                        Witness { t: *t, x: x.clone(), pair: Some((a, b)), cycle: None, value: c },
                        -c,
                    );
                }
            }
        }
        for a in 0..modes.m2 {
            for b in (0..modes.m2).filter(|&b| b != a) {
                report.checked += 1;
                let c = s.upper_cost(a, b);
                if c < 0.0 {
                    report.record(
                        Witness { t: *t, x: x.clone(), pair: Some((a, b)), cycle: None, value: c },
                        -c,
                    );
                }
            }
        }
    }
    Ok(report)
}

/// Jump weights must be non-negative; also reports the empirical constants
/// `sup gamma / (1 ^ |e|)` and `sup |beta| / (1 ^ |e|)`.
pub fn validate_jump_bounds(
    spec: &ProblemSpec,
    quadrature: &LevyQuadrature,
    xs: &[Vec<f64>],
) -> Result<ValidationReport> {
    let mut report = ValidationReport::new("jump weight and amplitude bounds");
    let mut c_gamma = 0.0f64;
    let mut k_beta = 0.0f64;
    let mut beta = vec![0.0; spec.dim];
    for x in xs {
        for atom in &quadrature.atoms {
            let norm = atom.mark.iter().map(|v| v * v).sum::<f64>().sqrt();
            let scale = norm.min(1.0);
            spec.jump_amplitude(x, &atom.mark, &mut beta)?;
            let bn = beta.iter().map(|v| v * v).sum::<f64>().sqrt();
            if scale > 0.0 {
                k_beta = k_beta.max(bn / scale);
            }
            for (i, j) in spec.modes.pairs() {
                let g = spec.jump_weight(i, j, x, &atom.mark)?;
                report.checked += 1;
                if g < 0.0 {
                    report.record(
                        Witness { t: 0.0, x: x.clone(), pair: Some((i, j)), cycle: None, value: g },
                        -g,
                    );
                } else if scale > 0.0 {
                    c_gamma = c_gamma.max(g / scale);
                }
            }
        }
    }
    report.note = Some(format!(
        "empirical bounds: gamma <= {c_gamma:.6} (1 ^ |e|), |beta| <= {k_beta:.6} (1 ^ |e|)"
    ));
    Ok(report)
}

/// Probes `g^{ij}` for monotonicity in `q` and in every other component
/// `y^{kl}`. Returns the two reports in that order.
pub fn validate_driver_monotonicity(
    spec: &ProblemSpec,
    points: &[(f64, Vec<f64>)],
) -> Result<(ValidationReport, ValidationReport)> {
    const H: f64 = 1e-3;
    let modes = spec.modes;
    let np = modes.pair_count();
    let mut in_q = ValidationReport::new("A1(iii) driver non-decreasing in q");
    let mut in_y = ValidationReport::new("A2 driver non-decreasing in other components");
    let levels = [-1.0, 0.0, 1.0];
    let z = vec![0.0; spec.brownian_dim];
    for (t, x) in points {
        for &base in &levels {
            for &q in &levels {
                let y = vec![base; np];
                for (i, j) in modes.pairs() {
                    let g0 = spec.driver(i, j, *t, x, &y, &z, q)?;
                    let gq = spec.driver(i, j, *t, x, &y, &z, q + H)?;
                    in_q.checked += 1;
                    let tol = 1e-12 * (1.0 + g0.abs());
                    if gq < g0 - tol {
                        in_q.record(
                            Witness { t: *t, x: x.clone(), pair: Some((i, j)), cycle: None, value: (gq - g0) / H },
                            (g0 - gq) / H,
                        );
                    }
                    for p in (0..np).filter(|&p| p != modes.pair(i, j)) {
                        let mut y2 = y.clone();
                        y2[p] += H;
                        let gy = spec.driver(i, j, *t, x, &y2, &z, q)?;
                        in_y.checked += 1;
                        if gy < g0 - tol {
                            in_y.record(
                                Witness { t: *t, x: x.clone(), pair: Some((i, j)), cycle: None, value: (gy - g0) / H },
                                (g0 - gy) / H,
                            );
                        }
                    }
                }
            }
        }
    }
    Ok((in_q, in_y))
}

/// Runs every validator. Order: cost signs, non-free-loop, terminal
/// consistency, jump bounds, monotonicity in q, monotonicity in y.
pub fn validate_all(
    spec: &ProblemSpec,
    quadrature: &LevyQuadrature,
    xs: &[Vec<f64>],
    n_times: usize,
) -> Result<Vec<ValidationReport>> {
    let points = sample_points(spec, xs, n_times);
    let (in_q, in_y) = validate_driver_monotonicity(spec, &points)?;
    Ok(vec![
        validate_cost_signs(spec, &points)?,
        validate_non_free_loop(spec, &points)?,
        validate_terminal_consistency(spec, xs)?,
        validate_jump_bounds(spec, quadrature, xs)?,
        in_q,
        in_y,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec_with(m1: usize, m2: usize, lower: &str, upper: &str, terminal: &str) -> ProblemSpec {
        let cost_rows = |m: usize, c: &str| -> String {
            let rows: Vec<String> = (0..m)
                .map(|a| {
                    let cells: Vec<String> = (0..m)
                        .map(|b| if a == b { "null".to_string() } else { format!("\"{c}\"") })
                        .collect();
                    format!("[{}]", cells.join(","))
                })
                .collect();
            format!("[{}]", rows.join(","))
        };
        let mat = |v: &str| -> String {
            let rows: Vec<String> = (0..m1)
                .map(|_| format!("[{}]", vec![format!("\"{v}\""); m2].join(",")))
                .collect();
            format!("[{}]", rows.join(","))
        };
        let json = format!(
            r#"{{"modes": {{"m1": {m1}, "m2": {m2}}}, "horizon": 1.0,
                "drift": "0", "volatility": [["0"]],
                "drivers": {d}, "terminal": {t},
                "lower_costs": {lc}, "upper_costs": {uc}}}"#,
            d = mat("0"),
            t = if terminal.starts_with('[') { terminal.to_string() } else { mat(terminal) },
            lc = cost_rows(m1, lower),
            uc = cost_rows(m2, upper),
        );
        ProblemSpec::from_json(&json).unwrap()
    }

    fn pts() -> Vec<(f64, Vec<f64>)> {
        vec![(0.0, vec![0.0]), (0.5, vec![1.0])]
    }

    #[test]
    fn equal_unit_costs_form_a_free_loop() {
        let spec = spec_with(2, 2, "1", "1", "0");
        let r = validate_non_free_loop(&spec, &pts()).unwrap();
        assert!(!r.passed);
        let w = r.witness.unwrap().cycle.unwrap();
        assert_eq!(w.sum, 0.0);
        assert_eq!(w.pairs.len(), 5);
        assert_eq!(w.pairs.first(), w.pairs.last());
    }

    #[test]
    fn strict_costs_pass() {
        let spec = spec_with(2, 2, "1", "2", "0");
        let r = validate_non_free_loop(&spec, &pts()).unwrap();
        assert!(r.passed, "{r:?}");
        // smallest |sum|: pure-i loop -2, pure-j +4, mixed +2
        assert_eq!(r.worst, 2.0);
        // 2 two-cycles per player per fixed other mode (4) + 2 orientations of the 4-cycle
        assert!(r.note.unwrap().starts_with("6 directed"));
    }

    #[test]
    fn single_modes_have_no_loops() {
        let spec = spec_with(1, 1, "1", "1", "0");
        let r = validate_non_free_loop(&spec, &pts()).unwrap();
        assert!(r.passed);
        assert_eq!(r.checked, 0);
    }

    #[test]
    fn loop_count_matches_brute_force() {
        // brute force: enumerate all closed walks without repeated interior pairs
        fn brute(m1: usize, m2: usize) -> usize {
            let np = m1 * m2;
            let adj = |a: usize, b: usize| {
                let (i, j) = (a / m2, a % m2);
                let (k, l) = (b / m2, b % m2);
                a != b && (i == k || j == l)
            };
            fn rec(path: &mut Vec<usize>, np: usize, adj: &dyn Fn(usize, usize) -> bool, count: &mut usize) {
                let last = *path.last().unwrap();
                if path.len() >= 2 && adj(last, path[0]) {
                    *count += 1;
                }
                for b in 0..np {
                    if b > path[0] && !path.contains(&b) && adj(last, b) {
                        path.push(b);
                        rec(path, np, adj, count);
                        path.pop();
                    }
                }
            }
            let mut count = 0;
            for s in 0..np {
                rec(&mut vec![s], np, &adj, &mut count);
            }
            count
        }
        for (m1, m2) in [(2, 2), (3, 2), (3, 3), (1, 4)] {
            let spec = spec_with(m1, m2, "1", "2.5", "0");
            let r = validate_non_free_loop(&spec, &[(0.0, vec![0.0])]).unwrap();
            let note = r.note.unwrap();
            let n: usize = note.split_whitespace().next().unwrap().parse().unwrap_or(0);
            assert_eq!(n, brute(m1, m2), "{m1}x{m2}");
        }
    }

    #[test]
    fn too_many_pairs_is_capacity_error() {
        let spec = spec_with(7, 6, "1", "2", "0");
        assert!(matches!(
            validate_non_free_loop(&spec, &pts()),
            Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn terminal_examples() {
        let zero = spec_with(2, 2, "1", "1", "0");
        assert!(validate_terminal_consistency(&zero, &[vec![0.0]]).unwrap().passed);

        let spec = spec_with(2, 1, "1", "1", r#"[["0"], ["5"]]"#);
        let r = validate_terminal_consistency(&spec, &[vec![0.0]]).unwrap();
        assert!(!r.passed);
        assert_eq!(r.worst, 4.0);
        assert_eq!(r.witness.unwrap().pair, Some((0, 0)));

        let spec = spec_with(1, 2, "1", "1", r#"[["0", "-3"]]"#);
        let r = validate_terminal_consistency(&spec, &[vec![0.0]]).unwrap();
        assert!(!r.passed);
        assert_eq!(r.worst, 2.0);
    }

    #[test]
    fn negative_cost_flagged() {
        let spec = spec_with(2, 1, "x - 0.5", "1", "0");
        let r = validate_cost_signs(&spec, &pts()).unwrap();
        assert!(!r.passed);
        assert_eq!(r.worst, 0.5);
    }
}

#![allow(dead_code)]

use swgame::discretization::{build_levy_quadrature, LevyQuadrature, SpatialGrid, TimeGrid};
use swgame::model::ProblemSpec;
use swgame::solver::Grids;

pub const SHIPPED: [&str; 3] = ["no_jump_1d", "two_atom_jump_1d", "switching_2x2"];

pub fn problem(name: &str) -> ProblemSpec {
    ProblemSpec::load(format!("{}/../../problems/{name}.json", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

pub fn fixture(name: &str) -> ProblemSpec {
    ProblemSpec::load(format!("{}/tests/fixtures/{name}.json", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

pub fn quadrature(spec: &ProblemSpec) -> LevyQuadrature {
    build_levy_quadrature(&spec.levy, 32, None).unwrap()
}

pub fn grids(spec: &ProblemSpec, lo: f64, hi: f64, nodes: usize, steps: usize) -> Grids {
    Grids::new(
        SpatialGrid::uniform_1d(lo, hi, nodes).unwrap(),
        TimeGrid::new(spec.horizon, steps).unwrap(),
    )
}

/// 101 nodes on `[-3, 3]`, 50 steps.
pub fn smoke_grids(spec: &ProblemSpec) -> Grids {
    grids(spec, -3.0, 3.0, 101, 50)
}

/// A frozen 2x2 game with constant costs and the given terminal rows.
pub fn cost_game(lower: f64, upper: f64, terminal: [[&str; 2]; 2]) -> ProblemSpec {
    ProblemSpec::from_json(&format!(
        r#"{{"modes": {{"m1": 2, "m2": 2}}, "horizon": 1.0, "drift": "0", "volatility": [["0"]],
            "drivers": [["0", "0"], ["0", "0"]],
            "terminal": [["{}", "{}"], ["{}", "{}"]],
            "lower_costs": [[null, {lower}], [{lower}, null]],
            "upper_costs": [[null, {upper}], [{upper}, null]]}}"#,
        terminal[0][0], terminal[0][1], terminal[1][0], terminal[1][1]
    ))
    .unwrap()
}

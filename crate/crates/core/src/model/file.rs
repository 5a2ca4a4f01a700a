use serde::{Deserialize, Serialize};

/// An expression given either as DSL text or as a bare number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExprSource {
    Number(f64),
    Text(String),
}

impl ExprSource {
    pub fn text(&self) -> String {
        match self {
            ExprSource::Number(v) if *v < 0.0 => format!("(0 - {})", -v),
            ExprSource::Number(v) => format!("{v:?}"),
            ExprSource::Text(s) => s.clone(),
        }
    }
}

/// A scalar accepted wherever a length-one list is expected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn as_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModesFile {
    pub m1: usize,
    pub m2: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomFile {
    pub mark: OneOrMany<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DensitySupport {
    #[default]
    Both,
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityFile {
    pub expr: ExprSource,
    /// Truncation radius `R_e` of the mark domain.
    pub radius: f64,
    #[serde(default)]
    pub support: Option<DensitySupport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevyFile {
    #[serde(default)]
    pub atoms: Option<Vec<AtomFile>>,
    #[serde(default)]
    pub density: Option<DensityFile>,
    /// Small-jump cutoff delta in `[0, 1)`.
    #[serde(default)]
    pub cutoff: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthFile {
    pub c: f64,
    pub exponent: f64,
}

/// On-disk problem description. See `schema/problem.schema.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub description: Option<String>,
    pub modes: ModesFile,
    pub horizon: f64,
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default)]
    pub brownian_dim: Option<usize>,
    #[serde(default)]
    pub mark_dim: Option<usize>,
    pub drift: OneOrMany<ExprSource>,
    pub volatility: Vec<OneOrMany<ExprSource>>,
    #[serde(default)]
    pub jump_amplitude: Option<OneOrMany<ExprSource>>,
    #[serde(default)]
    pub jump_weights: Option<Vec<Vec<ExprSource>>>,
    pub drivers: Vec<Vec<ExprSource>>,
    #[serde(default)]
    pub lower_costs: Option<Vec<Vec<Option<ExprSource>>>>,
    #[serde(default)]
    pub upper_costs: Option<Vec<Vec<Option<ExprSource>>>>,
    pub terminal: Vec<Vec<ExprSource>>,
    #[serde(default)]
    pub levy: Option<LevyFile>,
    #[serde(default)]
    pub growth: Option<GrowthFile>,
    #[serde(default)]
    pub driver_lipschitz: Option<f64>,
}

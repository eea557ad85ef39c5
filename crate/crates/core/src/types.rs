//! Shared domain types, validation and the crate-wide error enum.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Every failure mode surfaced by the library.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum RsbError {
    #[error("ordering violation: {0}")]
    OrderingViolation(String),
    #[error("range violation: {0}")]
    RangeViolation(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite integrand value at node h = {0}")]
    NonFiniteIntegrand(f64),
    #[error("tensor grid of {points} points exceeds budget {budget} and no Monte Carlo fallback is configured")]
    BudgetExceeded { points: f64, budget: usize },
    #[error("susceptibility divergence: Q_{index} = {value} <= 0")]
    SusceptibilityDivergence { index: usize, value: f64 },
    #[error("domain error: {0}")]
    DomainError(String),
    #[error("domain error at iterate {iterate:?}: {source}")]
    DomainAtIterate {
        iterate: Box<RsbAnsatz>,
        source: Box<RsbError>,
    },
    #[error("bracket violation: {0}")]
    BracketViolation(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, RsbError>;

/// Smallest Parisi parameter the nested evaluators accept.
pub const THETA_MIN: f64 = 0.01;

/// Which model an ansatz or evaluation belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Sk,
    Hopfield,
}

/// Sherrington-Kirkpatrick parameters: inverse temperature, signal strength, noise scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkParams {
    pub beta: f64,
    pub j0: f64,
    pub j: f64,
}

impl SkParams {
    pub fn new(beta: f64, j0: f64, j: f64) -> Result<Self> {
        let p = SkParams { beta, j0, j };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        check_nonneg("beta", self.beta)?;
        check_nonneg("j0", self.j0)?;
        check_nonneg("j", self.j)
    }
}

/// Hopfield parameters: inverse temperature and storage load.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HopfieldParams {
    pub beta: f64,
    pub alpha: f64,
}

impl HopfieldParams {
    pub fn new(beta: f64, alpha: f64) -> Result<Self> {
        let p = HopfieldParams { beta, alpha };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        check_nonneg("beta", self.beta)?;
        check_nonneg("alpha", self.alpha)
    }
}

/// Model selector together with its physical parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelParams {
    Sk(SkParams),
    Hopfield(HopfieldParams),
}

impl ModelParams {
    pub fn model(&self) -> Model {
        match self {
            ModelParams::Sk(_) => Model::Sk,
            ModelParams::Hopfield(_) => Model::Hopfield,
        }
    }
}

fn check_nonneg(name: &str, v: f64) -> Result<()> {
    if !v.is_finite() || v < 0.0 {
        return Err(RsbError::InvalidParameter(format!(
            "{name} must be finite and non-negative, got {v}"
        )));
    }
    Ok(())
}

/// Order parameters at breaking level `k`.
///
/// `qs` and `ps` hold levels 1..=k+1, `thetas` holds the interior Parisi
/// parameters 1..=k. The boundary values 0 and 1 are implicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RsbAnsatz {
    pub k: usize,
    pub m: f64,
    pub qs: Vec<f64>,
    #[serde(default)]
    pub ps: Vec<f64>,
    #[serde(default)]
    pub thetas: Vec<f64>,
}

impl RsbAnsatz {
    /// Replica-symmetric SK ansatz.
    pub fn rs(m: f64, q: f64) -> Self {
        RsbAnsatz { k: 0, m, qs: vec![q], ps: vec![], thetas: vec![] }
    }

    /// SK ansatz at level `qs.len() - 1`.
    pub fn sk(m: f64, qs: Vec<f64>, thetas: Vec<f64>) -> Self {
        RsbAnsatz { k: qs.len().saturating_sub(1), m, qs, ps: vec![], thetas }
    }

    /// Hopfield ansatz at level `qs.len() - 1`.
    pub fn hopfield(m: f64, qs: Vec<f64>, ps: Vec<f64>, thetas: Vec<f64>) -> Self {
        RsbAnsatz { k: qs.len().saturating_sub(1), m, qs, ps, thetas }
    }

    /// Parameters perturbed by the solver and the stationarity check: m followed by the qs.
    pub fn free_parameters(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.qs.len() + 1);
        v.push(self.m);
        v.extend_from_slice(&self.qs);
        v
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("ansatz serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| RsbError::InvalidParameter(e.to_string()))
    }
}

/// Check shape, range and ordering invariants. Returns the ansatz unchanged on success.
pub fn validate_ansatz(a: RsbAnsatz, model: Model) -> Result<RsbAnsatz> {
    let k = a.k;
    if a.qs.len() != k + 1 {
        return Err(RsbError::ShapeMismatch(format!(
            "expected {} q values for k = {k}, got {}",
            k + 1,
            a.qs.len()
        )));
    }
    if a.thetas.len() != k {
        return Err(RsbError::ShapeMismatch(format!(
            "expected {k} theta values for k = {k}, got {}",
            a.thetas.len()
        )));
    }
    match model {
        Model::Sk if !a.ps.is_empty() => {
            return Err(RsbError::ShapeMismatch("SK ansatz must not carry ps".into()));
        }
        Model::Hopfield if a.ps.len() != k + 1 => {
            return Err(RsbError::ShapeMismatch(format!(
                "expected {} p values for k = {k}, got {}",
                k + 1,
                a.ps.len()
            )));
        }
        _ => {}
    }
    if !a.m.is_finite() || !(-1.0..=1.0).contains(&a.m) {
        return Err(RsbError::RangeViolation(format!("m = {} outside [-1, 1]", a.m)));
    }
    for (i, &q) in a.qs.iter().enumerate() {
        if !q.is_finite() || !(0.0..=1.0).contains(&q) {
            return Err(RsbError::RangeViolation(format!("q{} = {q} outside [0, 1]", i + 1)));
        }
    }
    for (i, &p) in a.ps.iter().enumerate() {
        if !p.is_finite() || p < 0.0 {
            return Err(RsbError::RangeViolation(format!("p{} = {p} is negative", i + 1)));
        }
    }
    for (i, &t) in a.thetas.iter().enumerate() {
        if !t.is_finite() || t <= 0.0 || t >= 1.0 {
            return Err(RsbError::RangeViolation(format!("theta{} = {t} outside (0, 1)", i + 1)));
        }
    }
    if a.qs.windows(2).any(|w| w[0] > w[1]) {
        return Err(RsbError::OrderingViolation("qs must be non-decreasing".into()));
    }
    if a.ps.windows(2).any(|w| w[0] > w[1]) {
        return Err(RsbError::OrderingViolation("ps must be non-decreasing".into()));
    }
    if a.thetas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(RsbError::OrderingViolation("thetas must be strictly increasing".into()));
    }
    Ok(a)
}

/// Node rule used on every nesting level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QuadratureRule {
    /// Gauss-Hermite nodes from the Golub-Welsch eigenproblem.
    GaussHermite,
    /// Equispaced trapezoid rule on a truncated Gaussian support (default).
    Trapezoid,
}

/// Controls how standard-normal expectations are discretized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub nodes_per_level: usize,
    /// Per-level Monte Carlo sample count, used only when the tensor grid is over budget.
    pub mc_samples: usize,
    pub max_tensor_points: usize,
    pub rule: QuadratureRule,
    /// Seed for the Monte Carlo fallback draws.
    pub mc_seed: u64,
}

pub const DEFAULT_NODES: usize = 80;
pub const DEFAULT_MC_SAMPLES: usize = 32;
pub const DEFAULT_MAX_TENSOR_POINTS: usize = 1 << 23;

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            nodes_per_level: DEFAULT_NODES,
            mc_samples: DEFAULT_MC_SAMPLES,
            max_tensor_points: DEFAULT_MAX_TENSOR_POINTS,
            rule: QuadratureRule::Trapezoid,
            mc_seed: 0,
        }
    }
}

impl QuadratureSpec {
    pub fn with_nodes(nodes: usize) -> Self {
        QuadratureSpec { nodes_per_level: nodes, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes_per_level < 2 {
            return Err(RsbError::InvalidParameter("nodes_per_level must be >= 2".into()));
        }
        Ok(())
    }
}

/// Outcome of a fixed-point solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub ansatz: RsbAnsatz,
    pub pressure: f64,
    pub residual: f64,
    pub stationarity: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Residual after each iteration.
    #[serde(skip)]
    pub residual_history: Vec<f64>,
}

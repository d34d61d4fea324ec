//! Run configuration: a TOML document with strict key checking.
//!
//! Overrides given as `key.path=value` are applied to the parsed TOML tree
//! before deserialization, so they go through the same validation as the
//! file itself.

use std::collections::BTreeMap;

use parastab::expr::MatrixExpr;
use parastab::linalg::DenseMatrix;
use parastab::mesh::Domain;
use parastab::oracle::PowerOptions;
use parastab::problem::ProblemSpec;
use parastab::sdp::SolveOptions;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

const PAPER_1D: &str = include_str!("../presets/paper-1d.toml");
const PAPER_3D_BALL: &str = include_str!("../presets/paper-3d-ball.toml");

/// Names accepted by `--preset`.
pub const PRESETS: [&str; 2] = ["paper-1d", "paper-3d-ball"];

pub fn preset_text(name: &str) -> Result<&'static str, CliError> {
    match name {
        "paper-1d" => Ok(PAPER_1D),
        "paper-3d-ball" => Ok(PAPER_3D_BALL),
        other => Err(CliError::Config(format!(
            "unknown preset `{other}` (available: {})",
            PRESETS.join(", ")
        ))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Constant Lyapunov matrix on a cell partition.
    Thm1,
    /// Piecewise-linear Lyapunov matrix on a simplicial mesh.
    Thm2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub method: Method,
    pub problem: ProblemConfig,
    pub domain: DomainConfig,
    pub grid: GridConfig,
    #[serde(default)]
    pub poincare: PoincareConfig,
    #[serde(default)]
    pub solver: SolveOptions,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub check: CheckConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub m: usize,
    pub n: usize,
    /// Diffusion matrix, row-major.
    #[serde(rename = "A")]
    pub a: Vec<f64>,
    /// Coefficient matrix as expression strings in `x1..xm` and the params.
    #[serde(rename = "B")]
    pub b: Vec<Vec<String>>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    Interval,
    Box,
    #[serde(rename = "unit_ball_3d")]
    UnitBall3d,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub kind: DomainKind,
    /// `[lo, hi]` per axis; not used for the ball.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Splits per axis (cells for an interval, per spherical axis for the ball).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Per-axis splits for boxes; overrides `n`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub splits: Option<Vec<usize>>,
    #[serde(default = "default_samples")]
    pub samples_per_cell: usize,
    #[serde(default = "default_inflation")]
    pub rho_inflation: f64,
}

fn default_samples() -> usize {
    parastab::bounds::DEFAULT_SAMPLES_PER_CELL
}

fn default_inflation() -> f64 {
    parastab::bounds::DEFAULT_RHO_INFLATION
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoincareConfig {
    /// Explicit constant; derived from the domain when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    /// Cross-check `analyze` verdicts with the finite-difference oracle.
    pub enabled: bool,
    /// Interior grid points G.
    pub grid_points: usize,
    /// Time step of trajectory simulation.
    pub dt: f64,
    /// Simulation horizon.
    pub t_end: f64,
    /// Record a trajectory (and check Lyapunov decay when certified).
    pub simulate: bool,
    pub power_dt: f64,
    pub power_steps: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        let p = PowerOptions::default();
        Self {
            enabled: false,
            grid_points: 1000,
            dt: 1e-4,
            t_end: 2.0,
            simulate: false,
            power_dt: p.dt,
            power_steps: p.steps,
        }
    }
}

impl OracleConfig {
    pub fn power(&self) -> PowerOptions {
        PowerOptions {
            dt: self.power_dt,
            steps: self.power_steps,
            ..PowerOptions::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepTarget {
    /// Feasibility of the configured matrix inequalities.
    #[default]
    Lmi,
    /// Finite-difference stability.
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub param: String,
    pub lo: f64,
    pub hi: f64,
    pub tol: f64,
    #[serde(default)]
    pub target: SweepTarget,
    /// Repeat the sweep for each grid size (one table row per size).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub grid_sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckConfig {
    /// Re-verify certificates pointwise at random points of the domain.
    pub pointwise: bool,
    pub samples: usize,
    pub seed: u64,
    pub tol: f64,
    /// Relative slack of the Lyapunov decay check.
    pub decay_slack: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            pointwise: true,
            samples: 1000,
            seed: 2024,
            tol: 1e-7,
            decay_slack: 0.05,
        }
    }
}

/// Applies `key.path=value` to a TOML tree. The value is read as TOML when
/// possible (`6.5`, `true`, `[1, 2]`) and as a string otherwise.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| {
        CliError::Config(format!(
            "override `{assignment}` is not of the form key=value"
        ))
    })?;
    let key = key.trim();
    let raw = raw.trim();
    let value = parse_value(raw);
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("invalid override key `{key}`")));
    }
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| {
            CliError::Config(format!("override `{key}`: `{part}` is not a table"))
        })?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t
            .remove("v")
            .unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Parses and validates a configuration, applying overrides first.
pub fn load_config(text: &str, overrides: &[String]) -> Result<RunConfig, CliError> {
    let mut tree: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| CliError::Config(format!("invalid TOML: {}", e.message())))?;
    for o in overrides {
        apply_override(&mut tree, o)?;
    }
    let cfg: RunConfig = tree
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    /// Checks everything that can be checked without numerical work.
    pub fn validate(&self) -> Result<(), CliError> {
        let p = &self.problem;
        if p.m == 0 || p.n == 0 {
            return Err(config_err("problem.m and problem.n must be positive"));
        }
        if p.a.len() != p.n * p.n {
            return Err(config_err(format!(
                "problem.A has {} entries, expected n² = {}",
                p.a.len(),
                p.n * p.n
            )));
        }
        if p.b.len() != p.n || p.b.iter().any(|r| r.len() != p.n) {
            return Err(config_err(format!("problem.B must be {0}×{0}", p.n)));
        }
        self.grid_sizes_checked()?;
        if self.grid.samples_per_cell < 2 {
            return Err(config_err("grid.samples_per_cell must be at least 2"));
        }
        if !(self.grid.rho_inflation >= 1.0 && self.grid.rho_inflation.is_finite()) {
            return Err(config_err("grid.rho_inflation must be a finite number ≥ 1"));
        }
        if let Some(c) = self.poincare.value {
            if !(c > 0.0 && c.is_finite()) {
                return Err(config_err("poincare.value must be positive"));
            }
        }
        self.solver
            .validate()
            .map_err(|e| config_err(format!("solver: {e}")))?;
        if self.method == Method::Thm2 && self.domain.kind == DomainKind::UnitBall3d {
            return Err(config_err("method thm2 needs an interval or box domain"));
        }
        if self.oracle.grid_points < 3 {
            return Err(config_err("oracle.grid_points must be at least 3"));
        }
        for (name, v) in [
            ("oracle.dt", self.oracle.dt),
            ("oracle.t_end", self.oracle.t_end),
            ("oracle.power_dt", self.oracle.power_dt),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(config_err(format!("{name} must be positive")));
            }
        }
        if self.check.samples == 0 || !(self.check.tol >= 0.0) || !(self.check.decay_slack >= 0.0) {
            return Err(config_err(
                "check.samples must be positive and check tolerances non-negative",
            ));
        }
        if let Some(s) = &self.sweep {
            if !(s.lo < s.hi) || !(s.tol > 0.0) || !s.lo.is_finite() || !s.hi.is_finite() {
                return Err(config_err("sweep needs lo < hi and tol > 0"));
            }
            if s.grid_sizes.contains(&0) {
                return Err(config_err(
                    "sweep.grid_sizes must be positive (empty partition)",
                ));
            }
        }
        // parse everything once so expression errors surface as config errors
        let mut params = p.params.clone();
        if let Some(s) = &self.sweep {
            params.entry(s.param.clone()).or_insert(s.lo);
        }
        self.problem_spec(&params)?;
        Ok(())
    }

    fn grid_sizes_checked(&self) -> Result<(), CliError> {
        match (&self.grid.splits, self.grid.n) {
            (Some(s), _) => {
                if s.len() != self.problem.m || s.contains(&0) {
                    return Err(config_err(format!(
                        "grid.splits needs {} positive entries (empty partition otherwise)",
                        self.problem.m
                    )));
                }
            }
            (None, Some(0)) => return Err(config_err("grid.n must be positive (empty partition)")),
            (None, Some(_)) => {}
            (None, None) => return Err(config_err("grid.n or grid.splits is required")),
        }
        Ok(())
    }

    /// Per-axis splits for a grid parameter `n` (or the configured splits).
    pub fn splits(&self, n: Option<usize>) -> Vec<usize> {
        match (n, &self.grid.splits) {
            (Some(n), _) => vec![n; self.problem.m],
            (None, Some(s)) => s.clone(),
            (None, None) => vec![self.grid.n.unwrap_or(1); self.problem.m],
        }
    }

    /// Representative grid size for reports (`N`).
    pub fn grid_size(&self) -> usize {
        self.grid
            .n
            .or_else(|| {
                self.grid
                    .splits
                    .as_ref()
                    .and_then(|s| s.iter().copied().max())
            })
            .unwrap_or(0)
    }

    pub fn domain(&self) -> Result<Domain, CliError> {
        let m = self.problem.m;
        let bounds = || {
            self.domain
                .bounds
                .as_ref()
                .ok_or_else(|| config_err("domain.bounds is required for this domain kind"))
        };
        let d = match self.domain.kind {
            DomainKind::Interval => {
                let b = bounds()?;
                if b.len() != 1 {
                    return Err(config_err("an interval takes exactly one [lo, hi] pair"));
                }
                Domain::Interval {
                    a: b[0][0],
                    b: b[0][1],
                }
            }
            DomainKind::Box => {
                let b = bounds()?;
                Domain::Box {
                    lower: b.iter().map(|p| p[0]).collect(),
                    upper: b.iter().map(|p| p[1]).collect(),
                }
            }
            DomainKind::UnitBall3d => Domain::UnitBall3d,
        };
        if d.dim() != m {
            return Err(config_err(format!(
                "domain has dimension {}, problem.m is {m}",
                d.dim()
            )));
        }
        let ok = match &d {
            Domain::Interval { a, b } => a < b && a.is_finite() && b.is_finite(),
            Domain::Box { lower, upper } => lower
                .iter()
                .zip(upper)
                .all(|(l, u)| l < u && l.is_finite() && u.is_finite()),
            _ => true,
        };
        if !ok {
            return Err(config_err(
                "domain.bounds must satisfy lo < hi on every axis",
            ));
        }
        Ok(d)
    }

    /// The PDE data with the given parameter values.
    pub fn problem_spec(&self, params: &BTreeMap<String, f64>) -> Result<ProblemSpec, CliError> {
        let p = &self.problem;
        let a = DenseMatrix::from_row_major(p.n, p.n, p.a.clone())
            .map_err(|e| config_err(format!("problem.A: {e}")))?;
        let b = MatrixExpr::parse(&p.b).map_err(|e| config_err(format!("problem.B: {e}")))?;
        let spec = ProblemSpec {
            m: p.m,
            n: p.n,
            a,
            b,
            domain: self.domain()?,
            params: params.clone(),
        };
        spec.validate().map_err(|e| config_err(e.to_string()))?;
        Ok(spec)
    }
}

//! Per-command run configurations: a JSON document, with `--key value` flags layered on top.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

/// Parse `--key value` pairs into a JSON object. Keys are kebab- or snake-case, dots address
/// nested objects (`--grid.n 128`); values are JSON when they parse as JSON, comma lists
/// become arrays, anything else is a string.
pub fn parse_overrides(args: &[String]) -> Result<Map<String, Value>, CliError> {
    let mut out = Map::new();
    let mut it = args.iter();
    while let Some(flag) = it.next() {
        let key = flag
            .strip_prefix("--")
            .ok_or_else(|| CliError::ConfigParse(format!("expected a --flag, got `{flag}`")))?;
        let (key, raw) = match key.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it.next().ok_or_else(|| CliError::ConfigParse(format!("flag --{key} needs a value")))?;
                (key.to_string(), v.clone())
            }
        };
        let path: Vec<String> = key.split('.').map(|k| k.replace('-', "_")).collect();
        let mut nested = parse_value(&raw);
        for k in path.iter().rev() {
            let mut m = Map::new();
            m.insert(k.clone(), nested);
            nested = Value::Object(m);
        }
        if let Value::Object(m) = nested {
            merge(&mut out, m);
        }
    }
    Ok(out)
}

/// Deep merge; objects merge key by key, anything else is replaced.
pub fn merge(base: &mut Map<String, Value>, top: Map<String, Value>) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(Value::Object(b)), Value::Object(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn parse_value(raw: &str) -> Value {
    if let Ok(v) = serde_json::from_str::<Value>(raw) {
        return v;
    }
    if raw.contains(',') {
        return Value::Array(raw.split(',').map(|s| parse_value(s.trim())).collect());
    }
    Value::String(raw.to_string())
}

/// Load the config file (if any), apply overrides, and deserialize into `T`.
pub fn load<T: DeserializeOwned + Validate>(file: Option<&Path>, overrides: Map<String, Value>) -> Result<T, CliError> {
    let mut doc = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::IoFailure(format!("{}: {e}", path.display())))?;
            match serde_json::from_str::<Value>(&text) {
                Ok(Value::Object(m)) => m,
                Ok(_) => return Err(CliError::ConfigParse(format!("{}: top level must be an object", path.display()))),
                Err(e) => return Err(CliError::ConfigParse(format!("{}: {e}", path.display()))),
            }
        }
        None => Map::new(),
    };
    merge(&mut doc, overrides);
    let cfg: T = serde_json::from_value(Value::Object(doc)).map_err(|e| CliError::ConfigParse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub trait Validate {
    fn validate(&self) -> Result<(), CliError>;
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::ConfigParse(msg.into())
}

fn positive(name: &str, x: f64) -> Result<(), CliError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(bad(format!("field `{name}` must be positive, got {x}")))
    }
}

fn ascending(name: &str, xs: &[f64]) -> Result<(), CliError> {
    if xs.is_empty() {
        return Err(bad(format!("field `{name}` must not be empty")));
    }
    if xs.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(bad(format!("field `{name}` must be sorted ascending without repeats")));
    }
    Ok(())
}

fn grid(n: usize, box_len: f64) -> Result<(), CliError> {
    if n < 4 || !n.is_power_of_two() {
        return Err(bad(format!("field `n` must be a power of two >= 4, got {n}")));
    }
    positive("box_len", box_len)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Radius {
    CoreEdge,
    SqrtGamma,
}

impl From<Radius> for mtlab::radial::AnalysisRadius {
    fn from(r: Radius) -> Self {
        match r {
            Radius::CoreEdge => Self::CoreEdge,
            Radius::SqrtGamma => Self::SqrtGamma,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Core {
    Consistent,
    Literal,
}

impl From<Core> for mtlab::testfn::CoreRadius {
    fn from(c: Core) -> Self {
        match c {
            Core::Consistent => Self::Consistent,
            Core::Literal => Self::Literal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BubbleConfig {
    pub gammas: Vec<f64>,
    pub p: f64,
    pub h0: f64,
    /// Profile deviation from `ln(1+s²)` is measured on `s ≤ s_cut`.
    pub s_cut: f64,
    pub radius: Radius,
}

impl Default for BubbleConfig {
    fn default() -> Self {
        Self { gammas: vec![6.0, 8.0, 10.0, 12.0], p: 1.5, h0: 1.0, s_cut: 10.0, radius: Radius::CoreEdge }
    }
}

impl Validate for BubbleConfig {
    fn validate(&self) -> Result<(), CliError> {
        ascending("gammas", &self.gammas)?;
        positive("h0", self.h0)?;
        positive("s_cut", self.s_cut)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MomentsConfig {
    pub rel_tol: f64,
}

impl Default for MomentsConfig {
    fn default() -> Self {
        Self { rel_tol: 1e-10 }
    }
}

impl Validate for MomentsConfig {
    fn validate(&self) -> Result<(), CliError> {
        positive("rel_tol", self.rel_tol)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct W1Config {
    pub ps: Vec<f64>,
    pub s_max: f64,
}

impl Default for W1Config {
    fn default() -> Self {
        Self { ps: vec![1.25, 1.5, 1.75, 2.0], s_max: 1e5 }
    }
}

impl Validate for W1Config {
    fn validate(&self) -> Result<(), CliError> {
        ascending("ps", &self.ps)?;
        positive("s_max", self.s_max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExpansionConfig {
    pub p: f64,
    pub gammas: Vec<f64>,
    pub h0: f64,
    pub radius: Radius,
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        Self { p: 1.5, gammas: vec![6.0, 8.0, 10.0, 12.0], h0: 1.0, radius: Radius::CoreEdge }
    }
}

impl Validate for ExpansionConfig {
    fn validate(&self) -> Result<(), CliError> {
        ascending("gammas", &self.gammas)?;
        positive("h0", self.h0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TestFnConfig {
    pub gammas: Vec<f64>,
    pub p: f64,
    pub beta: f64,
    pub n: usize,
    pub box_len: f64,
    pub h0: f64,
    pub core: Core,
    /// Number of atoms of each random barycenter (ignored when `points` is given).
    pub k: usize,
    pub points: Option<Vec<[f64; 2]>>,
    pub weights: Option<Vec<f64>>,
    /// Random barycenters drawn from `seed` when `points` is absent.
    pub samples: usize,
    pub seed: u64,
    pub kr: bool,
}

impl Default for TestFnConfig {
    fn default() -> Self {
        Self {
            gammas: vec![6.0, 8.0, 10.0],
            p: 1.5,
            beta: 5.0 * std::f64::consts::PI,
            n: 256,
            box_len: 1.0,
            h0: 1.0,
            core: Core::Consistent,
            k: 1,
            points: None,
            weights: None,
            samples: 1,
            seed: 0,
            kr: true,
        }
    }
}

impl Validate for TestFnConfig {
    fn validate(&self) -> Result<(), CliError> {
        ascending("gammas", &self.gammas)?;
        grid(self.n, self.box_len)?;
        positive("beta", self.beta)?;
        positive("h0", self.h0)?;
        if self.k == 0 || self.samples == 0 {
            return Err(bad("fields `k` and `samples` must be at least 1"));
        }
        if let (Some(p), Some(w)) = (&self.points, &self.weights) {
            if p.len() != w.len() {
                return Err(bad("fields `points` and `weights` must have equal length"));
            }
        }
        if self.weights.is_some() && self.points.is_none() {
            return Err(bad("field `weights` needs `points`"));
        }
        Ok(())
    }
}

/// Grid, weight `h = h0 (1 + a cos kx)(1 + a cos ky)` and initial guess
/// `level + bump e^{-|x-c|²/width²} + noise`, shared by `solve` and `continue`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldSetup {
    pub n: usize,
    pub box_len: f64,
    pub h0: f64,
    pub h_amplitude: f64,
    pub init_level: f64,
    pub init_bump: f64,
    pub init_width: f64,
    pub init_noise: f64,
    pub seed: u64,
}

impl Default for FieldSetup {
    fn default() -> Self {
        Self {
            n: 64,
            box_len: 4.0,
            h0: 1.0,
            h_amplitude: 0.0,
            init_level: 0.5,
            init_bump: 1.0,
            init_width: 1.0,
            init_noise: 0.0,
            seed: 0,
        }
    }
}

impl FieldSetup {
    fn validate(&self) -> Result<(), CliError> {
        grid(self.n, self.box_len)?;
        positive("h0", self.h0)?;
        positive("init_width", self.init_width)?;
        if !(0.0..1.0).contains(&self.h_amplitude) {
            return Err(bad(format!("field `h_amplitude` must lie in [0, 1), got {}", self.h_amplitude)));
        }
        if !(self.init_noise >= 0.0) {
            return Err(bad("field `init_noise` must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Min,
    Newton,
    MinNewton,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveConfig {
    pub p: f64,
    pub beta: f64,
    pub method: Method,
    pub grid: FieldSetup,
    pub min_tol: f64,
    pub newton_tol: f64,
    pub max_descent: usize,
    /// Also write the solution as `solve_field.csv`.
    pub write_field: bool,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            p: 1.5,
            beta: 2.0 * std::f64::consts::PI,
            method: Method::MinNewton,
            grid: FieldSetup::default(),
            min_tol: 1e-9,
            newton_tol: 1e-12,
            max_descent: 20_000,
            write_field: false,
        }
    }
}

impl Validate for SolveConfig {
    fn validate(&self) -> Result<(), CliError> {
        self.grid.validate()?;
        positive("beta", self.beta)?;
        positive("min_tol", self.min_tol)?;
        positive("newton_tol", self.newton_tol)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContinueConfig {
    pub p: f64,
    pub beta_start: f64,
    pub beta_end: f64,
    pub steps: usize,
    /// When set, follow the solution at `beta_start` through these exponents instead.
    pub sweep_p: Option<Vec<f64>>,
    pub grid: FieldSetup,
    pub newton_tol: f64,
    pub u_ceiling: f64,
    pub mu_floor_cells: f64,
}

impl Default for ContinueConfig {
    fn default() -> Self {
        let pi = std::f64::consts::PI;
        Self {
            p: 1.5,
            beta_start: 2.0 * pi,
            beta_end: 5.0 * pi,
            steps: 30,
            sweep_p: None,
            grid: FieldSetup { n: 128, h_amplitude: 0.9, ..FieldSetup::default() },
            newton_tol: 1e-10,
            u_ceiling: 8.0,
            mu_floor_cells: 2.0,
        }
    }
}

impl Validate for ContinueConfig {
    fn validate(&self) -> Result<(), CliError> {
        self.grid.validate()?;
        positive("beta_start", self.beta_start)?;
        positive("beta_end", self.beta_end)?;
        positive("newton_tol", self.newton_tol)?;
        positive("u_ceiling", self.u_ceiling)?;
        positive("mu_floor_cells", self.mu_floor_cells)?;
        if self.steps == 0 {
            return Err(bad("field `steps` must be at least 1"));
        }
        if let Some(ps) = &self.sweep_p {
            ascending("sweep_p", ps)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnoseConfig {
    /// Field written by `solve` (`solve_field.csv`); a radial bubble is planted when absent.
    pub field: Option<String>,
    pub p: f64,
    /// Multiplier of the field; required with `field`.
    pub lambda: Option<f64>,
    pub gamma: f64,
    pub mu: f64,
    pub n: usize,
    pub box_len: f64,
    pub center: [f64; 2],
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        Self { field: None, p: 1.5, lambda: None, gamma: 5.0, mu: 0.05, n: 256, box_len: 4.0, center: [2.0, 2.0] }
    }
}

impl Validate for DiagnoseConfig {
    fn validate(&self) -> Result<(), CliError> {
        grid(self.n, self.box_len)?;
        positive("gamma", self.gamma)?;
        positive("mu", self.mu)?;
        if self.field.is_some() && self.lambda.is_none() {
            return Err(bad("field `lambda` is required together with `field`"));
        }
        Ok(())
    }
}

//! Run configuration: one JSON document, every field optional.

use std::fmt;
use std::path::{Path, PathBuf};

use raps_core::estimators::{TdConfig, TdNormalization};
use raps_core::selector::{BnbOptions, BranchRule, NodeOrder};
use raps_core::InfoSpec;
use raps_sim::ScenarioParams;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// State dimension of the position-velocity-acceleration model.
pub const STATE_DIM: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Kf,
    Td,
    DiagRaps,
    FullRaps,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Kf => "kf",
            Estimator::Td => "td",
            Estimator::DiagRaps => "diag_raps",
            Estimator::FullRaps => "full_raps",
        }
    }

    pub fn parse(s: &str) -> Result<Self, CliError> {
        match s.trim() {
            "kf" => Ok(Estimator::Kf),
            "td" => Ok(Estimator::Td),
            "diag_raps" | "diag" => Ok(Estimator::DiagRaps),
            "full_raps" | "full" => Ok(Estimator::FullRaps),
            other => Err(CliError::Config(format!(
                "unknown estimator {other:?} (expected kf, td, diag_raps or full_raps)"
            ))),
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Selector knobs shared by every solve in a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BnbConfig {
    pub big_m_multiplier: f64,
    pub gap_tol: f64,
    pub node_limit: usize,
    pub time_limit_s: f64,
    pub branching: BranchRule,
    pub node_order: NodeOrder,
}

impl Default for BnbConfig {
    fn default() -> Self {
        let d = BnbOptions::<f64>::default();
        Self {
            big_m_multiplier: d.big_m_multiplier,
            gap_tol: d.gap_tol,
            node_limit: d.node_limit,
            time_limit_s: d.time_limit_s,
            branching: d.branching,
            node_order: d.node_order,
        }
    }
}

impl BnbConfig {
    pub fn options(&self) -> BnbOptions<f64> {
        BnbOptions {
            big_m_multiplier: self.big_m_multiplier,
            gap_tol: self.gap_tol,
            node_limit: self.node_limit,
            time_limit_s: self.time_limit_s,
            branching: self.branching,
            node_order: self.node_order,
            ..BnbOptions::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchMethod {
    Full,
    Diag,
}

impl BenchMethod {
    pub fn name(self) -> &'static str {
        match self {
            BenchMethod::Full => "full",
            BenchMethod::Diag => "diag",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub m: Vec<usize>,
    pub epochs: usize,
    pub methods: Vec<BenchMethod>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            m: vec![15, 20, 25, 30],
            epochs: 20,
            methods: vec![BenchMethod::Full, BenchMethod::Diag],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub count: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { count: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub scenario: ScenarioParams,
    /// Loads this scenario instead of generating one.
    pub scenario_file: Option<PathBuf>,
    pub estimators: Vec<Estimator>,
    pub td_lambda: f64,
    pub td_normalization: TdNormalization,
    /// Lower bounds on the leading diagonal entries of the posterior
    /// information (positions), zero beyond.
    pub spec: Vec<f64>,
    /// Jerk spectral density of the filter model, m²/s⁵ per axis.
    pub jerk_psd: f64,
    pub bnb: BnbConfig,
    /// Per-epoch time limit for Full-RAPS inside a comparison run.
    pub full_raps_time_limit_s: f64,
    pub bench: BenchConfig,
    pub oracle: OracleConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            scenario: ScenarioParams::default(),
            scenario_file: None,
            estimators: vec![Estimator::Kf, Estimator::Td, Estimator::DiagRaps],
            td_lambda: 2.0,
            td_normalization: TdNormalization::Innovation,
            spec: vec![1.389, 1.389, 0.347],
            jerk_psd: 1.0,
            bnb: BnbConfig::default(),
            full_raps_time_limit_s: 60.0,
            bench: BenchConfig::default(),
            oracle: OracleConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text)
            .map_err(|e| CliError::Config(format!("line {}, column {}: {e}", e.line(), e.column())))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.estimators.is_empty() {
            return bad("at least one estimator is required".into());
        }
        if self.spec.len() > STATE_DIM || self.spec.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad(format!(
                "spec needs at most {STATE_DIM} non-negative entries, got {:?}",
                self.spec
            ));
        }
        if !(self.jerk_psd >= 0.0 && self.jerk_psd.is_finite()) {
            return bad(format!("jerk_psd must be non-negative, got {}", self.jerk_psd));
        }
        if !(self.full_raps_time_limit_s > 0.0) {
            return bad("full_raps_time_limit_s must be positive".into());
        }
        if self.bench.epochs == 0 || self.bench.m.is_empty() || self.bench.methods.is_empty() {
            return bad("bench needs epochs, m values and methods".into());
        }
        if self.oracle.count == 0 {
            return bad("oracle count must be at least 1".into());
        }
        self.td()?;
        self.bnb
            .options()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.info_spec()?;
        Ok(())
    }

    pub fn td(&self) -> Result<TdConfig<f64>, CliError> {
        let mut td = TdConfig::new(self.td_lambda).map_err(|e| CliError::Config(e.to_string()))?;
        td.normalization = self.td_normalization;
        Ok(td)
    }

    pub fn info_spec(&self) -> Result<InfoSpec<f64>, CliError> {
        InfoSpec::leading(&self.spec, STATE_DIM).map_err(|e| CliError::Config(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex(&Sha256::digest(text.as_bytes()))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

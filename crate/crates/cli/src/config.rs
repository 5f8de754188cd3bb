use std::path::Path;

use multidecon::experiments::InstanceSpec;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Config problems exit with status 2, everything else with 1.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Runtime(e.into())
    }
}

pub fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Reads a JSON config, rejecting unknown keys. Parse errors carry the line
/// and column.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

fn default_beta() -> f64 {
    4.0
}

fn default_constant() -> f64 {
    1.0
}

/// Which `γ` the optimality check uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaChoice {
    /// Exact operator norm of the measurement map.
    #[default]
    Exact,
    /// `√(βK log(LN))`.
    Bound,
}

/// Settings for `gen`, `coherence` and `certify`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub instance: InstanceSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub trial: u64,
    /// Number of golfing partitions; defaults to the logarithmic rule.
    #[serde(rename = "P", default)]
    pub partitions: Option<usize>,
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Multiplier in `C′ = C·β` for the sample-complexity margins.
    #[serde(rename = "C", default = "default_constant")]
    pub constant: f64,
    #[serde(default)]
    pub gamma: GammaChoice,
    /// Also run the solver on the instance (`certify` only).
    #[serde(default)]
    pub solve: bool,
}

impl AnalysisConfig {
    /// Checks that do not depend on the command.
    pub fn validate(&self) -> Result<(), CliError> {
        self.instance.validate().map_err(|e| config_err(e.to_string()))?;
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(config_err("beta: must be positive"));
        }
        if !(self.constant > 0.0 && self.constant.is_finite()) {
            return Err(config_err("C: must be positive"));
        }
        if let Some(p) = self.partitions {
            if p == 0 || p > self.instance.l {
                return Err(config_err(format!("P: need 1 <= P <= L (got P={p}, L={})", self.instance.l)));
            }
        }
        Ok(())
    }

    /// Additional checks for commands that need a sparse impulse response.
    pub fn validate_sparse(&self) -> Result<usize, CliError> {
        self.validate()?;
        self.instance
            .sparsity
            .ok_or_else(|| config_err("instance.S: required (support size of h) for coherence and certificate runs"))
    }
}

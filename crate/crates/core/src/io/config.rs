use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::environment::{EnvFamily, EnvKind};
use crate::model::RawParams;
use crate::simulate::{KillSchedule, StopRule};

/// Monte Carlo trials when none are given.
pub const DEFAULT_TRIALS: u64 = 1_000;
/// Lyapunov epochs per replicate when none are given.
pub const DEFAULT_EPOCHS: usize = 10_000;
/// Lyapunov replicates when none are given.
pub const DEFAULT_REPLICATES: usize = 32;
/// Environment draws for `env-sample` when none are given.
pub const DEFAULT_SAMPLES: usize = 1_000;
/// Absolute bracket width for the `beta` search when none is given.
pub const DEFAULT_BETA_TOL: f64 = 1e-3;

/// Everything a run can read from a JSON file. Every key is optional;
/// command-line flags override file values, and anything still unset takes
/// the documented default of its command. Unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub params: Option<RawParams>,
    /// Master seed; defaults to [`crate::rng::DEFAULT_SEED`].
    pub seed: Option<u64>,
    pub tol_t: Option<f64>,
    pub tol_p: Option<f64>,
    /// Kill period for `classify` and `critical-p`.
    pub period: Option<f64>,
    pub schedule: Option<KillSchedule>,
    pub stop: Option<StopRule>,
    /// Initial `(n, r)`; defaults to `(1, 0)`.
    pub init: Option<(u64, u64)>,
    pub trials: Option<u64>,
    /// Time for `mc-mean`.
    pub t: Option<f64>,
    pub family: Option<EnvFamily>,
    pub epochs: Option<usize>,
    pub replicates: Option<usize>,
    pub burn_in: Option<usize>,
    pub renorm_every: Option<usize>,
    pub beta_search: Option<BetaSearchSpec>,
    pub sweep: Option<Vec<AxisSpec>>,
    pub samples: Option<usize>,
    pub out: Option<PathBuf>,
    pub svg: Option<PathBuf>,
    pub format: Option<OutputFormat>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSpec {
    pub var: crate::critical::SweepVar,
    pub from: f64,
    pub to: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaSearchSpec {
    pub kind: EnvKind,
    pub lo: f64,
    pub hi: f64,
    #[serde(default)]
    pub tol: Option<f64>,
    /// Starting epochs; defaults to [`DEFAULT_EPOCHS`].
    #[serde(default)]
    pub epochs: Option<usize>,
    /// Defaults to 8 times the starting epochs.
    #[serde(default)]
    pub max_epochs: Option<usize>,
    #[serde(default)]
    pub replicates: Option<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
}

/// A config file that failed to parse, with its position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub path: Option<PathBuf>,
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(p) = &self.path {
            write!(f, "{}:", p.display())?;
        }
        write!(f, "{}:{}: {}", self.line, self.column, self.message)
    }
}

impl std::error::Error for ConfigError {}

/// Parse a JSON config. Errors carry serde's line and column.
pub fn load_config(text: &str) -> Result<RunConfig, ConfigError> {
    serde_json::from_str(text).map_err(|e| ConfigError {
        path: None,
        line: e.line(),
        column: e.column(),
        // serde appends its own " at line L column C"
        message: e.to_string().split(" at line ").next().unwrap_or_default().to_string(),
    })
}

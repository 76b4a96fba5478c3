//! Run configuration documents.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grouping::{GroupingScheme, SignalMode};
use crate::harness::model::ModelConfig;
use crate::harness::synthetic::SyntheticTaskSpec;
use crate::reweighter::ReweighterConfig;
use crate::simplex::TsallisOrder;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Erm,
    /// Dense exponentiated-gradient group DRO.
    Dro,
    #[default]
    StarDro,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Erm => "erm",
            Method::Dro => "dro",
            Method::StarDro => "stardro",
        }
    }
}

/// Controller hyperparameters. `eta` is also the step size of [`Method::Dro`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustSettings {
    pub alpha: f64,
    pub eta: f64,
    pub rho: f64,
    pub ceiling: f64,
    pub curvature: f64,
    /// 0-based epoch at which reweighting starts.
    pub activation_epoch: u64,
    /// Overrides `activation_epoch` when set. `18446744073709551615` never activates.
    pub activation_step: Option<u64>,
}

impl Default for RobustSettings {
    fn default() -> Self {
        let base = ReweighterConfig::default();
        Self {
            alpha: base.alpha.get(),
            eta: base.eta,
            rho: base.rho,
            ceiling: base.ceiling,
            curvature: base.curvature,
            activation_epoch: 1,
            activation_step: None,
        }
    }
}

impl RobustSettings {
    pub fn activation_step(&self, steps_per_epoch: u64) -> u64 {
        self.activation_step
            .unwrap_or_else(|| self.activation_epoch.saturating_mul(steps_per_epoch))
    }

    pub fn reweighter_config(&self, steps_per_epoch: u64) -> Result<ReweighterConfig> {
        let config = ReweighterConfig {
            alpha: TsallisOrder::new(self.alpha)?,
            eta: self.eta,
            rho: self.rho,
            ceiling: self.ceiling,
            curvature: self.curvature,
            activation_step: self.activation_step(steps_per_epoch),
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub signal: SignalMode,
    pub scheme: GroupingScheme,
    /// Objective value above which a run is aborted as diverged.
    pub divergence_threshold: f64,
}

impl Default for TrainingSettings {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 32,
            signal: SignalMode::Sample,
            scheme: GroupingScheme::CodeXSubcode,
            divergence_threshold: 1e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SyntheticTaskSpec),
    /// Grouped JSONL files whose records carry a `tokens` payload.
    Files { train: PathBuf, validation: PathBuf },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SyntheticTaskSpec::default())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub method: Method,
    pub reweighter: RobustSettings,
    pub model: ModelConfig,
    pub training: TrainingSettings,
    pub data: DataSource,
    /// Seeds minibatch order.
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.reweighter.reweighter_config(1)?;
        if self.training.epochs == 0 || self.training.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be positive"));
        }
        if !(self.training.divergence_threshold > 0.0) {
            return Err(Error::invalid("divergence_threshold must be positive"));
        }
        if let DataSource::Synthetic(spec) = &self.data {
            spec.validate()?;
        }
        Ok(())
    }

    /// Malformed JSON is an [`Error::Json`]; unknown fields or wrong types
    /// are an [`Error::Schema`].
    pub fn from_json(text: &str) -> Result<Self> {
        Self::parse(text, "run config")
    }

    fn parse(text: &str, context: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            if e.is_data() {
                Error::Schema(format!("{context}: {e}"))
            } else {
                Error::json(context, e)
            }
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// SHA-256 of the compact JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(canonical.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn run_id(&self) -> String {
        format!("{}-{}-s{}", self.method.name(), &self.hash()[..10], self.seed)
    }
}

//! Flat `key = value` run configuration (TOML top-level keys only).
//!
//! Unknown keys are rejected by name. Every value is validated before any
//! pipeline stage runs, and [`AppConfig::to_text`] writes a file that loads
//! back to an identical configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::experiment::{ExperimentSpec, Precision};
use crate::features::{FeatureMode, SpeedEncoding, SplitRatio};
use crate::nn::{CellKind, RmsPropConfig, TrainConfig};
use crate::road::Impute;
use crate::sim::ScenarioConfig;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
}

/// Which feature modes a run trains.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeSelection {
    Net,
    NetRoad,
    #[default]
    Both,
}

impl ModeSelection {
    pub fn modes(self) -> Vec<FeatureMode> {
        match self {
            ModeSelection::Net => vec![FeatureMode::Net],
            ModeSelection::NetRoad => vec![FeatureMode::NetRoad],
            ModeSelection::Both => FeatureMode::ALL.to_vec(),
        }
    }
}

impl std::str::FromStr for ModeSelection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "both" => Ok(Self::Both),
            other => match other.parse::<FeatureMode>()? {
                FeatureMode::Net => Ok(Self::Net),
                FeatureMode::NetRoad => Ok(Self::NetRoad),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AppConfig {
    /// Road CSV; a synthetic series is generated when absent.
    pub road: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Days of road data used (the first N).
    pub days: usize,
    /// Seed of the synthetic road series.
    pub road_seed: u64,
    pub impute: Impute,

    /// Service requests per minute per vehicle.
    pub lambda: f64,
    /// Handover probability.
    pub h: f64,
    /// Cell range in miles.
    pub range: f64,
    /// Interval length in seconds.
    pub delta: f64,
    pub detector_lead: usize,
    pub exact_flow: bool,

    pub mode: ModeSelection,
    pub window: usize,
    pub horizon: usize,
    pub split: String,
    pub speed_encoding: SpeedEncoding,
    pub cell: CellKind,
    pub hidden: usize,
    pub precision: Precision,
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,

    pub seeds: Vec<u64>,
    /// `table1` runs the published scenario grid instead of one scenario.
    pub grid: Option<String>,
    /// Write measured wall-clock times into the metrics CSV.
    pub record_timing: bool,
}

/// Every accepted key.
pub const KEYS: [&str; 28] = [
    "road",
    "out_dir",
    "days",
    "road_seed",
    "impute",
    "lambda",
    "h",
    "range",
    "delta",
    "detector_lead",
    "exact_flow",
    "mode",
    "window",
    "horizon",
    "split",
    "speed_encoding",
    "cell",
    "hidden",
    "precision",
    "learning_rate",
    "decay",
    "epsilon",
    "batch_size",
    "max_epochs",
    "patience",
    "seeds",
    "grid",
    "record_timing",
];

impl Default for AppConfig {
    fn default() -> Self {
        let scenario = ScenarioConfig::default();
        let train = TrainConfig::default();
        Self {
            road: None,
            out_dir: PathBuf::from("out"),
            days: 20,
            road_seed: 1,
            impute: Impute::None,
            lambda: scenario.lambda,
            h: scenario.handover_prob,
            range: scenario.cell_range,
            delta: scenario.delta,
            detector_lead: scenario.detector_lead,
            exact_flow: scenario.exact_flow,
            mode: ModeSelection::Both,
            window: 18,
            horizon: 1,
            split: SplitRatio::default().to_string(),
            speed_encoding: SpeedEncoding::Level,
            cell: CellKind::Lstm,
            hidden: 32,
            precision: Precision::F64,
            learning_rate: train.optimizer.learning_rate,
            decay: train.optimizer.decay,
            epsilon: train.optimizer.epsilon,
            batch_size: train.batch_size,
            max_epochs: train.max_epochs,
            patience: train.patience,
            seeds: vec![1, 2, 3],
            grid: None,
            record_timing: false,
        }
    }
}

fn invalid(key: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key,
        reason: reason.into(),
    }
}

impl AppConfig {
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        if let Some(key) = table.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(ConfigError::UnknownKey(key.clone()));
        }
        let cfg: AppConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::from_text(&text)
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn split_ratio(&self) -> Result<SplitRatio, ConfigError> {
        self.split.parse().map_err(|e: String| invalid("split", e))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.days == 0 {
            return Err(invalid("days", "must be at least 1"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(invalid("lambda", "must be a non-negative number"));
        }
        if !(0.0..=1.0).contains(&self.h) {
            return Err(invalid("h", "must lie in [0, 1]"));
        }
        if !(self.range > 0.0 && self.range.is_finite()) {
            return Err(invalid("range", "must be positive"));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(invalid("delta", "must be positive"));
        }
        if self.window == 0 {
            return Err(invalid("window", "must be at least 1"));
        }
        if self.horizon == 0 {
            return Err(invalid("horizon", "must be at least 1"));
        }
        let split = self.split_ratio()?;
        if split.train == 0 || split.val == 0 || split.test == 0 {
            return Err(invalid("split", "every part must be positive"));
        }
        if self.hidden == 0 {
            return Err(invalid("hidden", "must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning_rate", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.decay) {
            return Err(invalid("decay", "must lie in [0, 1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(invalid("epsilon", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size", "must be at least 1"));
        }
        if self.max_epochs == 0 {
            return Err(invalid("max_epochs", "must be at least 1"));
        }
        if self.patience == 0 {
            return Err(invalid("patience", "must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "needs at least one seed"));
        }
        match self.grid.as_deref() {
            None | Some("table1") => {}
            Some(other) => return Err(invalid("grid", format!("unknown grid `{other}` (expected table1)"))),
        }
        Ok(())
    }

    pub fn scenario(&self) -> ScenarioConfig {
        ScenarioConfig {
            lambda: self.lambda,
            handover_prob: self.h,
            cell_range: self.range,
            delta: self.delta,
            seed: 0,
            exact_flow: self.exact_flow,
            detector_lead: self.detector_lead,
        }
    }

    /// The experiment template for `mode` and `seed`; row 0.
    pub fn experiment(&self, mode: FeatureMode, seed: u64) -> Result<ExperimentSpec, ConfigError> {
        Ok(ExperimentSpec {
            scenario_id: format!("r{}-lambda{}-h{}", self.range, self.lambda, self.h),
            scenario: self.scenario(),
            mode,
            window: self.window,
            horizon: self.horizon,
            split: self.split_ratio()?,
            speed_encoding: self.speed_encoding,
            cell: self.cell,
            hidden_size: self.hidden,
            precision: self.precision,
            train: TrainConfig {
                optimizer: RmsPropConfig {
                    learning_rate: self.learning_rate,
                    decay: self.decay,
                    epsilon: self.epsilon,
                },
                batch_size: self.batch_size,
                max_epochs: self.max_epochs,
                patience: self.patience,
                seed: 0,
            },
            seed,
            row: 0,
        })
    }
}

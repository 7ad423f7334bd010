use thiserror::Error;

use crate::config::ConfigError;
use crate::experiment::ExperimentError;
use crate::features::FeatureError;
use crate::nn::NetError;
use crate::road::RoadError;
use crate::sim::SimError;

/// Crate-level error. The display string is prefixed with the module the
/// failure originated in.
#[derive(Debug, Error)]
pub enum Error {
    #[error("road_ingest: {0}")]
    Road(#[from] RoadError),
    #[error("call_simulator: {0}")]
    Sim(#[from] SimError),
    #[error("features: {0}")]
    Feature(#[from] FeatureError),
    #[error("neuralnet: {0}")]
    Net(#[from] NetError),
    #[error("experiment: {0}")]
    Experiment(#[from] ExperimentError),
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Originating module, as used in the CLI's machine-readable error line.
    pub fn module(&self) -> &'static str {
        match self {
            Error::Road(_) => "road_ingest",
            Error::Sim(_) => "call_simulator",
            Error::Feature(_) => "features",
            Error::Net(_) => "neuralnet",
            Error::Experiment(_) => "experiment",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
        }
    }

    /// Variant name of the innermost error, e.g. `GapError`.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Road(e) => e.kind(),
            Error::Sim(e) => e.kind(),
            Error::Feature(e) => e.kind(),
            Error::Net(e) => e.kind(),
            Error::Experiment(e) => e.kind(),
            Error::Config(_) => "ConfigError",
            Error::Io(_) => "IoError",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

//! Base-station load forecasting for highway cells.
//!
//! Road detector measurements (flow, speed) drive a call simulator; the
//! resulting per-interval call counts, optionally fused with the road
//! features, train a recurrent forecaster of the next interval's load.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the common instantiations.

pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod features;
pub mod nn;
pub mod road;
pub mod scalar;
pub mod sim;

pub use config::{AppConfig, ConfigError, ModeSelection};
pub use error::{Error, Result};
pub use experiment::{
    derive_seed, run_experiment, run_scenario_grid, table1_grid, ExperimentError, ExperimentSpec, GridReport,
    Precision, RunReport,
};
pub use features::{
    discretize_speed, fit_normalizer, make_split_windows, make_windows, raw_samples, FeatureError, FeatureMode,
    NormStats, SequenceWindow, SpeedEncoding, SplitRatio,
};
pub use nn::{CellKind, ModelParameters, NetError};
pub use road::{
    correlation_report, parse_road_csv, read_road_csv, synthesize_road_series, write_road_csv, RoadError,
    RoadRecord, RoadSeries,
};
pub use scalar::Scalar;
pub use sim::{expected_calls, simulate_calls, CallSeries, ScenarioConfig, SimError};

pub type Model = ModelParameters<f64>;
pub type Model32 = ModelParameters<f32>;
pub type Window = SequenceWindow<f64>;
pub type Window32 = SequenceWindow<f32>;
pub type Optimizer = nn::OptimizerState<f64>;
pub type Optimizer32 = nn::OptimizerState<f32>;

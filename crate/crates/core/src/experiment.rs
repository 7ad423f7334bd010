//! End-to-end runs: simulate calls, fuse and normalize features, train the
//! recurrent forecaster and report test error, for single scenarios and for
//! the Net vs Net&Road scenario grid.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::features::{
    fit_normalizer, make_split_windows, raw_samples, FeatureMode, NormStats, SequenceWindow,
    SpeedEncoding, SplitRatio,
};
use crate::nn::{self, CellKind, ModelParameters, NetError, TrainConfig};
use crate::road::RoadSeries;
use crate::scalar::Scalar;
use crate::sim::{per_interval_rate, simulate_calls, ScenarioConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error("invalid experiment: {0}")]
    InvalidSpec(String),
    #[error("scenario grid is empty")]
    EmptyGrid,
    #[error("report: {0}")]
    Report(String),
}

impl ExperimentError {
    pub fn kind(&self) -> &'static str {
        match self {
            ExperimentError::InvalidSpec(_) => "InvalidSpec",
            ExperimentError::EmptyGrid => "EmptyGrid",
            ExperimentError::Report(_) => "ReportError",
        }
    }
}

/// Derives an independent seed for a named stream and row from a root seed
/// (FNV-1a of the stream name, mixed with SplitMix64).
pub fn derive_seed(root: u64, stream: &str, row: u64) -> u64 {
    let name = stream
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
    let mut z = root
        .wrapping_add(name.rotate_left(17))
        .wrapping_add(row.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

/// Everything that defines one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub scenario_id: String,
    /// The scenario's own `seed` is replaced by one derived from `seed`.
    pub scenario: ScenarioConfig,
    pub mode: FeatureMode,
    /// Observation window length M, in intervals.
    pub window: usize,
    /// Prediction horizon T, in intervals.
    pub horizon: usize,
    pub split: SplitRatio,
    pub speed_encoding: SpeedEncoding,
    pub cell: CellKind,
    pub hidden_size: usize,
    pub precision: Precision,
    /// The `seed` field here is replaced by one derived from the run seed.
    pub train: TrainConfig,
    pub seed: u64,
    /// Row index mixed into every derived seed.
    pub row: u64,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            scenario_id: "default".into(),
            scenario: ScenarioConfig::default(),
            mode: FeatureMode::NetRoad,
            window: 18,
            horizon: 1,
            split: SplitRatio::default(),
            speed_encoding: SpeedEncoding::Level,
            cell: CellKind::Lstm,
            hidden_size: 32,
            precision: Precision::F64,
            train: TrainConfig::default(),
            seed: 0,
            row: 0,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::InvalidSpec(m.to_string()));
        if self.window == 0 {
            return bad("window length M must be at least 1");
        }
        if self.horizon == 0 {
            return bad("horizon T must be at least 1");
        }
        if self.split.train == 0 || self.split.val == 0 || self.split.test == 0 {
            return bad("every split part must be positive");
        }
        if self.hidden_size == 0 {
            return bad("hidden size must be at least 1");
        }
        if self.train.batch_size == 0 || self.train.max_epochs == 0 {
            return bad("batch size and max epochs must be positive");
        }
        Ok(())
    }

    pub fn simulation_seed(&self) -> u64 {
        derive_seed(self.seed, "simulate", self.row)
    }
}

/// Result of one run. Errors are on the normalized call scale unless
/// suffixed `_calls`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario_id: String,
    pub scenario: ScenarioConfig,
    pub mode: FeatureMode,
    pub seed: u64,
    pub row: u64,
    pub window: usize,
    pub horizon: usize,
    pub cell: CellKind,
    pub hidden_size: usize,
    pub precision: Precision,
    pub train_loss: Vec<f64>,
    pub val_mae_history: Vec<f64>,
    pub best_epoch: usize,
    pub epochs: usize,
    pub val_mae: f64,
    pub test_mae: f64,
    pub test_mae_calls: f64,
    /// Last-value persistence on the same test windows.
    pub naive_test_mae: f64,
    pub norm_stats: NormStats,
    pub norm_checksum: u64,
    pub total_calls: u64,
    pub total_vehicles: u64,
    pub wall_ms: u64,
}

pub const METRICS_HEADER: &str = "scenario_id,lambda,h,range,mode,seed,test_mae,val_mae,epochs,wall_ms";

impl RunReport {
    /// One metrics CSV line; `wall_ms` is written as 0 unless `timing`.
    pub fn metrics_row(&self, timing: bool) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.scenario_id,
            self.scenario.lambda,
            self.scenario.handover_prob,
            self.scenario.cell_range,
            self.mode,
            self.seed,
            self.test_mae,
            self.val_mae,
            self.epochs,
            if timing { self.wall_ms } else { 0 }
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, ExperimentError> {
        serde_json::from_str(s).map_err(|e| ExperimentError::Report(e.to_string()))
    }
}

/// MAE of predicting each window's label with its last observed call value.
pub fn naive_baseline<S: Scalar>(windows: &[SequenceWindow<S>]) -> Result<f64, NetError> {
    let preds: Vec<S> = windows.iter().map(|w| w.last_calls()).collect();
    let labels: Vec<S> = windows.iter().map(|w| w.label()).collect();
    Ok(nn::metric_mae(&preds, &labels)?.as_f64())
}

fn run_typed<S: Scalar>(spec: &ExperimentSpec, road: &RoadSeries, started: Instant) -> Result<RunReport> {
    let scenario = ScenarioConfig {
        seed: spec.simulation_seed(),
        ..spec.scenario.clone()
    };
    let calls = simulate_calls(road, &scenario)?;
    let raw = raw_samples(road, &calls, spec.speed_encoding)?;
    let plan = spec.split.plan(road.days(), road.points_per_day())?;
    let stats = fit_normalizer(&raw[plan.train.clone()])?;
    let samples = stats.transform_all(&raw);
    let windows = make_split_windows::<S>(
        &samples,
        &plan,
        &road.contiguous_blocks(),
        spec.window,
        spec.horizon,
        spec.mode,
    )?;

    let init = ModelParameters::<S>::init(
        spec.cell,
        spec.mode.input_dim(),
        spec.hidden_size,
        derive_seed(spec.seed, "init", spec.row),
    );
    let train_cfg = TrainConfig {
        seed: derive_seed(spec.seed, "shuffle", spec.row),
        ..spec.train.clone()
    };
    let outcome = nn::train(init, &windows.train, &windows.val, &train_cfg)?;
    let test_mae = nn::evaluate_mae(&outcome.params, &windows.test)?;
    Ok(RunReport {
        scenario_id: spec.scenario_id.clone(),
        scenario,
        mode: spec.mode,
        seed: spec.seed,
        row: spec.row,
        window: spec.window,
        horizon: spec.horizon,
        cell: spec.cell,
        hidden_size: spec.hidden_size,
        precision: spec.precision,
        epochs: outcome.epochs_run(),
        best_epoch: outcome.best_epoch,
        val_mae: outcome.best_val_mae,
        train_loss: outcome.train_loss,
        val_mae_history: outcome.val_mae,
        test_mae,
        // normalization is affine, so absolute errors scale by the call std
        test_mae_calls: test_mae * stats.std[crate::features::CALLS],
        naive_test_mae: naive_baseline(&windows.test)?,
        norm_checksum: stats.checksum(),
        norm_stats: stats,
        total_calls: calls.total(),
        total_vehicles: calls.vehicles,
        wall_ms: started.elapsed().as_millis() as u64,
    })
}

/// Simulates calls over `road`, trains on the first split with early
/// stopping on the second and reports MAE on the third.
pub fn run_experiment(spec: &ExperimentSpec, road: &RoadSeries) -> Result<RunReport> {
    spec.validate()?;
    let started = Instant::now();
    match spec.precision {
        Precision::F32 => run_typed::<f32>(spec, road, started),
        Precision::F64 => run_typed::<f64>(spec, road, started),
    }
}

/// One scenario of the published grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridScenario {
    pub id: &'static str,
    /// Requests per interval; the per-minute rate is this over the interval length.
    pub requests_per_interval: f64,
    pub handover_prob: f64,
    pub cell_range: f64,
}

/// The seven evaluated scenarios: five handover probabilities at one
/// request per interval and 1.5 miles, then three requests per interval,
/// then a 6-mile cell.
pub const TABLE1: [GridScenario; 7] = [
    GridScenario { id: "r1.5-l1-h1", requests_per_interval: 1.0, handover_prob: 1.0, cell_range: 1.5 },
    GridScenario { id: "r1.5-l1-h0.8", requests_per_interval: 1.0, handover_prob: 0.8, cell_range: 1.5 },
    GridScenario { id: "r1.5-l1-h0.5", requests_per_interval: 1.0, handover_prob: 0.5, cell_range: 1.5 },
    GridScenario { id: "r1.5-l1-h0.2", requests_per_interval: 1.0, handover_prob: 0.2, cell_range: 1.5 },
    GridScenario { id: "r1.5-l1-h0", requests_per_interval: 1.0, handover_prob: 0.0, cell_range: 1.5 },
    GridScenario { id: "r1.5-l3-h0.5", requests_per_interval: 3.0, handover_prob: 0.5, cell_range: 1.5 },
    GridScenario { id: "r6-l1-h0.5", requests_per_interval: 1.0, handover_prob: 0.5, cell_range: 6.0 },
];

/// Expands `base` into every (seed, scenario, mode) row of [`TABLE1`]. Both
/// modes of a scenario share the row index and therefore the call trace.
pub fn table1_grid(base: &ExperimentSpec, seeds: &[u64]) -> Vec<ExperimentSpec> {
    let mut specs = Vec::new();
    for &seed in seeds {
        for (row, sc) in TABLE1.iter().enumerate() {
            for mode in FeatureMode::ALL {
                specs.push(ExperimentSpec {
                    scenario_id: sc.id.to_string(),
                    scenario: ScenarioConfig {
                        lambda: per_interval_rate(sc.requests_per_interval, base.scenario.delta),
                        handover_prob: sc.handover_prob,
                        cell_range: sc.cell_range,
                        ..base.scenario.clone()
                    },
                    mode,
                    seed,
                    row: row as u64,
                    ..base.clone()
                });
            }
        }
    }
    specs
}

#[derive(Debug, Clone)]
pub struct GridRow {
    pub spec: ExperimentSpec,
    pub outcome: Result<RunReport, String>,
}

#[derive(Debug, Clone)]
pub struct GridReport {
    pub rows: Vec<GridRow>,
}

impl GridReport {
    pub fn reports(&self) -> impl Iterator<Item = &RunReport> {
        self.rows.iter().filter_map(|r| r.outcome.as_ref().ok())
    }

    pub fn failures(&self) -> impl Iterator<Item = (&ExperimentSpec, &str)> {
        self.rows
            .iter()
            .filter_map(|r| r.outcome.as_ref().err().map(|e| (&r.spec, e.as_str())))
    }

    pub fn write_metrics_csv<W: Write>(&self, mut out: W, timing: bool) -> std::io::Result<()> {
        writeln!(out, "{METRICS_HEADER}")?;
        for r in self.reports() {
            writeln!(out, "{}", r.metrics_row(timing))?;
        }
        Ok(())
    }

    /// Mean test MAE per scenario and mode over seeds, in first-seen
    /// scenario order, laid out as `scenario | range | lambda | h | Net | Net&Road`.
    pub fn comparison_table(&self) -> String {
        let mut order: Vec<String> = Vec::new();
        let mut acc: BTreeMap<(String, FeatureMode), (f64, usize)> = BTreeMap::new();
        let mut params: BTreeMap<String, ScenarioConfig> = BTreeMap::new();
        for r in self.reports() {
            if !order.contains(&r.scenario_id) {
                order.push(r.scenario_id.clone());
            }
            params.entry(r.scenario_id.clone()).or_insert_with(|| r.scenario.clone());
            let e = acc.entry((r.scenario_id.clone(), r.mode)).or_insert((0.0, 0));
            e.0 += r.test_mae;
            e.1 += 1;
        }
        let mean = |id: &str, m| acc.get(&(id.to_string(), m)).map(|(s, n)| s / *n as f64);
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<14} {:>6} {:>7} {:>5} {:>8} {:>10} {:>6}",
            "scenario", "range", "lambda", "h", "Net", "Net&Road", "ratio"
        );
        for id in &order {
            let sc = &params[id];
            let (net, road) = (mean(id, FeatureMode::Net), mean(id, FeatureMode::NetRoad));
            let ratio = net.zip(road).map(|(n, r)| r / n);
            let _ = writeln!(
                s,
                "{:<14} {:>6} {:>7.3} {:>5} {:>8} {:>10} {:>6}",
                id,
                sc.cell_range,
                sc.lambda,
                sc.handover_prob,
                fmt(net),
                fmt(road),
                ratio.map_or("-".into(), |r| format!("{r:.3}"))
            );
        }
        for (spec, err) in self.failures() {
            let _ = writeln!(s, "# {} {} seed {}: {err}", spec.scenario_id, spec.mode, spec.seed);
        }
        s
    }
}

/// Runs every spec, concurrently when the pool allows. A failing row is
/// recorded and the grid continues; row order in the report follows `specs`.
pub fn run_scenario_grid(
    specs: &[ExperimentSpec],
    road: &RoadSeries,
    threads: Option<usize>,
) -> Result<GridReport> {
    if specs.is_empty() {
        return Err(Error::Experiment(ExperimentError::EmptyGrid));
    }
    let run_all = || {
        specs
            .par_iter()
            .map(|spec| GridRow {
                spec: spec.clone(),
                outcome: run_experiment(spec, road).map_err(|e| e.to_string()),
            })
            .collect::<Vec<_>>()
    };
    let rows = match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| ExperimentError::InvalidSpec(e.to_string()))?
            .install(run_all),
        None => run_all(),
    };
    Ok(GridReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{make_windows, IntervalSample};

    fn calls_only(values: &[f64]) -> Vec<IntervalSample> {
        values
            .iter()
            .map(|&c| IntervalSample {
                flow_z: 0.0,
                speed_level_z: 0.0,
                calls_z: c,
            })
            .collect()
    }

    #[test]
    fn persistence_exact_on_constant_series() {
        let w = make_windows::<f64>(&calls_only(&[0.7; 30]), 5, 1, FeatureMode::NetRoad).unwrap();
        assert_eq!(naive_baseline(&w).unwrap(), 0.0);
    }

    #[test]
    fn persistence_on_alternating_series() {
        // 0,1,0,1,...: the next value always differs from the last by 1
        let values: Vec<f64> = (0..40).map(|i| (i % 2) as f64).collect();
        let w = make_windows::<f64>(&calls_only(&values), 4, 1, FeatureMode::Net).unwrap();
        assert_eq!(naive_baseline(&w).unwrap(), 1.0);
        // two steps ahead it is exact again
        let w = make_windows::<f64>(&calls_only(&values), 4, 2, FeatureMode::Net).unwrap();
        assert_eq!(naive_baseline(&w).unwrap(), 0.0);
    }

    #[test]
    fn persistence_empty_batch() {
        assert_eq!(naive_baseline::<f64>(&[]).unwrap_err(), NetError::EmptyBatch);
    }

    #[test]
    fn derived_seeds_differ_by_stream_and_row() {
        let a = derive_seed(1, "simulate", 0);
        assert_eq!(a, derive_seed(1, "simulate", 0));
        assert_ne!(a, derive_seed(1, "init", 0));
        assert_ne!(a, derive_seed(1, "simulate", 1));
        assert_ne!(a, derive_seed(2, "simulate", 0));
    }

    #[test]
    fn table1_has_fourteen_rows_per_seed() {
        let grid = table1_grid(&ExperimentSpec::default(), &[5]);
        assert_eq!(grid.len(), 14);
        let lambdas: Vec<f64> = grid.iter().map(|s| s.scenario.lambda).collect();
        assert!(lambdas.iter().all(|l| (*l - 0.2).abs() < 1e-12 || (*l - 0.6).abs() < 1e-12));
        assert_eq!(grid[0].row, grid[1].row);
        assert_ne!(grid[0].mode, grid[1].mode);
        assert_eq!(table1_grid(&ExperimentSpec::default(), &[1, 2, 3]).len(), 42);
    }

    #[test]
    fn spec_validation() {
        let mut s = ExperimentSpec::default();
        assert!(s.validate().is_ok());
        s.window = 0;
        assert_eq!(s.validate().unwrap_err().kind(), "InvalidSpec");
    }

    #[test]
    fn empty_grid_rejected() {
        let road = crate::road::synthesize_road_series(1, 1).unwrap();
        let err = run_scenario_grid(&[], &road, None).unwrap_err();
        assert_eq!(err.kind(), "EmptyGrid");
    }
}

//! Per-interval cellular call counts generated from road measurements.
//!
//! Vehicles enter the cell as a Poisson process whose rate matches the
//! measured flow. Each entering vehicle may bring a handed-over call, and
//! while inside the cell generates new service requests as a Poisson process.
//! Calls are counted in the interval in which they occur.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::road::{RoadSeries, INTERVAL_SECS};

/// Lowest speed used to compute dwell time (mph).
pub const SPEED_FLOOR_MPH: f64 = 5.0;
/// Longest time a vehicle is considered to stay in the cell (minutes).
pub const MAX_DWELL_MIN: f64 = 60.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidConfig(String),
    #[error("interval with flow {flow} has zero speed; dwell time is undefined")]
    ZeroSpeedInterval { flow: f64 },
    #[error("flow and speed slices differ in length ({flows} vs {speeds})")]
    LengthMismatch { flows: usize, speeds: usize },
}

impl SimError {
    pub fn kind(&self) -> &'static str {
        match self {
            SimError::InvalidConfig(_) => "InvalidConfig",
            SimError::ZeroSpeedInterval { .. } => "ZeroSpeedInterval",
            SimError::LengthMismatch { .. } => "LengthMismatch",
        }
    }
}

/// Stochastic-model and cell parameters of one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// New service requests per minute per vehicle inside the cell.
    pub lambda: f64,
    /// Probability that a vehicle enters with an ongoing call.
    pub handover_prob: f64,
    /// Length of highway covered by the cell, in miles.
    pub cell_range: f64,
    /// Interval length in seconds.
    pub delta: f64,
    pub seed: u64,
    /// Place exactly `flow` arrivals per interval at uniform times instead of
    /// drawing a Poisson number of them.
    #[serde(default)]
    pub exact_flow: bool,
    /// Intervals between a vehicle passing the road detector and entering
    /// the cell; the detector sits upstream of the cell.
    #[serde(default = "default_lead")]
    pub detector_lead: usize,
}

fn default_lead() -> usize {
    1
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            lambda: per_interval_rate(1.0, INTERVAL_SECS as f64),
            handover_prob: 0.5,
            cell_range: 1.5,
            delta: INTERVAL_SECS as f64,
            seed: 0,
            exact_flow: false,
            detector_lead: default_lead(),
        }
    }
}

/// Converts `k` requests per interval of `delta_secs` into a per-minute rate;
/// `per_interval_rate(1.0, 300.0)` is 0.2.
pub fn per_interval_rate(k: f64, delta_secs: f64) -> f64 {
    k / (delta_secs / 60.0)
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::InvalidConfig(msg));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be a non-negative number, got {}", self.lambda));
        }
        if !(0.0..=1.0).contains(&self.handover_prob) {
            return bad(format!("handover probability must lie in [0, 1], got {}", self.handover_prob));
        }
        if !(self.cell_range > 0.0 && self.cell_range.is_finite()) {
            return bad(format!("cell range must be positive, got {}", self.cell_range));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad(format!("interval length must be positive, got {}", self.delta));
        }
        Ok(())
    }

    /// Minutes a vehicle at `speed_mph` spends in the cell, with the speed
    /// floor and dwell cap applied.
    pub fn dwell_minutes(&self, speed_mph: f64) -> f64 {
        (self.cell_range / speed_mph.max(SPEED_FLOOR_MPH) * 60.0).min(MAX_DWELL_MIN)
    }
}

/// Mean number of calls generated by `flow` vehicles at `speed_mph`:
/// `flow * (h + lambda * dwell)`, dwell in minutes.
pub fn expected_calls(flow: f64, speed_mph: f64, config: &ScenarioConfig) -> Result<f64, SimError> {
    config.validate()?;
    if flow == 0.0 {
        return Ok(0.0);
    }
    if !(speed_mph > 0.0) {
        return Err(SimError::ZeroSpeedInterval { flow });
    }
    Ok(flow * (config.handover_prob + config.lambda * config.dwell_minutes(speed_mph)))
}

/// Call counts aligned one-to-one with a road series.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallSeries {
    counts: Vec<u32>,
    /// Vehicles that entered the cell during the simulation.
    pub vehicles: u64,
    /// Intervals with positive flow but zero speed, simulated at the speed floor.
    pub zero_speed_intervals: usize,
}

impl CallSeries {
    /// Wraps externally produced counts (vehicle statistics unknown, left at 0).
    pub fn from_counts(counts: Vec<u32>) -> Self {
        Self {
            counts,
            vehicles: 0,
            zero_speed_intervals: 0,
        }
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }
}

/// Simulates one gap-free run of intervals, adding into `counts`.
fn simulate_block<R: Rng>(
    flows: &[u32],
    speeds: &[f64],
    config: &ScenarioConfig,
    rng: &mut R,
    counts: &mut [u32],
    stats: &mut (u64, usize),
) {
    let n = flows.len();
    let delta = config.delta;
    let call_gap = (config.lambda > 0.0).then(|| Exp::new(config.lambda / 60.0).expect("positive rate"));
    let attribute = |t: f64, counts: &mut [u32]| {
        let idx = (t / delta) as usize;
        if idx < n {
            counts[idx] += 1;
        }
    };
    for (src, (&flow, &speed)) in flows.iter().zip(speeds).enumerate() {
        let entry = src + config.detector_lead;
        if entry >= n || flow == 0 {
            continue;
        }
        if speed <= 0.0 {
            stats.1 += 1;
        }
        let dwell_secs = config.dwell_minutes(speed) * 60.0;
        let start = entry as f64 * delta;
        let end = start + delta;

        let mut arrivals = Vec::with_capacity(flow as usize + 16);
        if config.exact_flow {
            arrivals.extend((0..flow).map(|_| start + rng.gen::<f64>() * delta));
        } else {
            let gap = Exp::new(flow as f64 / delta).expect("positive rate");
            let mut t = start + gap.sample(rng);
            while t < end {
                arrivals.push(t);
                t += gap.sample(rng);
            }
        }
        stats.0 += arrivals.len() as u64;

        for &t0 in &arrivals {
            if config.handover_prob > 0.0 && rng.gen_bool(config.handover_prob) {
                attribute(t0, counts);
            }
            if let Some(gap) = &call_gap {
                let leave = t0 + dwell_secs;
                let mut t = t0 + gap.sample(rng);
                while t < leave {
                    attribute(t, counts);
                    t += gap.sample(rng);
                }
            }
        }
    }
}

/// Simulates call counts for raw per-interval flows and speeds treated as
/// one gap-free run of `config.delta`-second intervals.
pub fn simulate_intervals(
    flows: &[u32],
    speeds: &[f64],
    config: &ScenarioConfig,
) -> Result<CallSeries, SimError> {
    config.validate()?;
    if flows.len() != speeds.len() {
        return Err(SimError::LengthMismatch {
            flows: flows.len(),
            speeds: speeds.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut counts = vec![0; flows.len()];
    let mut stats = (0, 0);
    simulate_block(flows, speeds, config, &mut rng, &mut counts, &mut stats);
    Ok(CallSeries {
        counts,
        vehicles: stats.0,
        zero_speed_intervals: stats.1,
    })
}

/// Simulates call counts aligned with `series`.
///
/// Each gap-free block of the series is simulated on its own, so neither the
/// detector lead nor dwell time carries calls across a missing stretch of time.
pub fn simulate_calls(series: &RoadSeries, config: &ScenarioConfig) -> Result<CallSeries, SimError> {
    config.validate()?;
    if config.delta != INTERVAL_SECS as f64 {
        return Err(SimError::InvalidConfig(format!(
            "interval length {} s does not match the road series' {INTERVAL_SECS} s grid",
            config.delta
        )));
    }
    let flows: Vec<u32> = series.records().iter().map(|r| r.flow).collect();
    let speeds: Vec<f64> = series.speeds().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut counts = vec![0; series.len()];
    let mut stats = (0, 0);
    for block in series.contiguous_blocks() {
        simulate_block(
            &flows[block.clone()],
            &speeds[block.clone()],
            config,
            &mut rng,
            &mut counts[block],
            &mut stats,
        );
    }
    Ok(CallSeries {
        counts,
        vehicles: stats.0,
        zero_speed_intervals: stats.1,
    })
}

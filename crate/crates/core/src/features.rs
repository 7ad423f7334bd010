//! Preprocessing and fusion: speed discretization, z-score normalization
//! fitted on the training split, day-aligned splits and sliding windows.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::road::RoadSeries;
use crate::scalar::Scalar;
use crate::sim::CallSeries;

pub const FEATURE_NAMES: [&str; 3] = ["flow", "speed_level", "calls"];
/// Index of the call count within a fused sample.
pub const CALLS: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("feature `{feature}` has zero variance on the training split")]
    DegenerateFeature { feature: &'static str },
    #[error("insufficient data: need at least {needed} points, have {available}")]
    InsufficientData { needed: usize, available: usize },
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("road and call series differ in length ({road} vs {calls})")]
    LengthMismatch { road: usize, calls: usize },
}

impl FeatureError {
    pub fn kind(&self) -> &'static str {
        match self {
            FeatureError::DegenerateFeature { .. } => "DegenerateFeature",
            FeatureError::InsufficientData { .. } => "InsufficientData",
            FeatureError::InvalidSplit(_) => "InvalidSplit",
            FeatureError::LengthMismatch { .. } => "LengthMismatch",
        }
    }
}

/// Lower edge of level 2; everything slower is level 1.
pub const SLOW_EDGE_MPH: f64 = 20.0;
/// Lower edge of level 8.
pub const FAST_EDGE_MPH: f64 = 60.0;

/// Maps a speed in mph onto levels 1..=8.
///
/// Level 1 is below 20 mph, level 8 is 60 mph and above, and levels 2-7
/// split [20, 60) into six bins of 20/3 mph.
pub fn discretize_speed(speed: f64) -> u8 {
    if !(speed >= SLOW_EDGE_MPH) {
        return 1;
    }
    if speed >= FAST_EDGE_MPH {
        return 8;
    }
    // (speed - 20) / (20/3), written to stay exact on the bin edges
    let bin = ((speed - SLOW_EDGE_MPH) * 3.0 / 20.0).floor() as u8;
    (2 + bin).min(7)
}

/// How speed enters the fused vector.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpeedEncoding {
    /// Discrete level 1..=8.
    #[default]
    Level,
    /// Raw mph.
    Raw,
}

impl FromStr for SpeedEncoding {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "level" => Ok(Self::Level),
            "raw" => Ok(Self::Raw),
            other => Err(format!("unknown speed encoding `{other}` (expected level|raw)")),
        }
    }
}

/// Network-only inputs versus fused road and network inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    Net,
    NetRoad,
}

impl FeatureMode {
    pub const ALL: [FeatureMode; 2] = [FeatureMode::Net, FeatureMode::NetRoad];

    pub fn input_dim(self) -> usize {
        match self {
            FeatureMode::Net => 1,
            FeatureMode::NetRoad => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureMode::Net => "net",
            FeatureMode::NetRoad => "netroad",
        }
    }
}

impl fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "net" => Ok(Self::Net),
            "netroad" | "net&road" | "net_road" => Ok(Self::NetRoad),
            other => Err(format!("unknown feature mode `{other}` (expected net|netroad)")),
        }
    }
}

/// Un-normalized fused sample: flow, speed (level or mph), calls.
pub type RawSample = [f64; 3];

/// Fuses aligned road and call series into raw per-interval samples.
pub fn raw_samples(
    road: &RoadSeries,
    calls: &CallSeries,
    encoding: SpeedEncoding,
) -> Result<Vec<RawSample>, FeatureError> {
    if road.len() != calls.len() {
        return Err(FeatureError::LengthMismatch {
            road: road.len(),
            calls: calls.len(),
        });
    }
    Ok(road
        .records()
        .iter()
        .zip(calls.counts())
        .map(|(r, &c)| {
            let speed = match encoding {
                SpeedEncoding::Level => discretize_speed(r.speed) as f64,
                SpeedEncoding::Raw => r.speed,
            };
            [r.flow as f64, speed, c as f64]
        })
        .collect())
}

/// Normalized fused sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalSample {
    pub flow_z: f64,
    pub speed_level_z: f64,
    pub calls_z: f64,
}

impl IntervalSample {
    pub fn as_array(&self) -> [f64; 3] {
        [self.flow_z, self.speed_level_z, self.calls_z]
    }

    /// Model inputs for `mode`; the call count is always last.
    pub fn inputs(&self, mode: FeatureMode) -> &'static [usize] {
        match mode {
            FeatureMode::Net => &[CALLS],
            FeatureMode::NetRoad => &[0, 1, CALLS],
        }
    }
}

/// Per-feature mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

/// Fits z-score statistics (population variance, divisor n).
pub fn fit_normalizer(train: &[RawSample]) -> Result<NormStats, FeatureError> {
    if train.len() < 2 {
        return Err(FeatureError::InsufficientData {
            needed: 2,
            available: train.len(),
        });
    }
    let n = train.len() as f64;
    let mut mean = [0.0; 3];
    let mut std = [0.0; 3];
    for k in 0..3 {
        mean[k] = train.iter().map(|s| s[k]).sum::<f64>() / n;
        let var = train.iter().map(|s| (s[k] - mean[k]).powi(2)).sum::<f64>() / n;
        std[k] = var.sqrt();
        if !(std[k] > 0.0) {
            return Err(FeatureError::DegenerateFeature {
                feature: FEATURE_NAMES[k],
            });
        }
    }
    Ok(NormStats { mean, std })
}

impl NormStats {
    pub fn transform(&self, raw: &RawSample) -> IntervalSample {
        let z = |k: usize| (raw[k] - self.mean[k]) / self.std[k];
        IntervalSample {
            flow_z: z(0),
            speed_level_z: z(1),
            calls_z: z(2),
        }
    }

    pub fn transform_all(&self, raw: &[RawSample]) -> Vec<IntervalSample> {
        raw.iter().map(|r| self.transform(r)).collect()
    }

    pub fn inverse_transform(&self, sample: &IntervalSample) -> RawSample {
        let z = sample.as_array();
        std::array::from_fn(|k| z[k] * self.std[k] + self.mean[k])
    }

    /// Normalized call value back to a call count.
    pub fn calls_to_raw(&self, z: f64) -> f64 {
        z * self.std[CALLS] + self.mean[CALLS]
    }

    /// FNV-1a over the bit patterns of all six statistics.
    pub fn checksum(&self) -> u64 {
        self.mean
            .iter()
            .chain(&self.std)
            .flat_map(|v| v.to_bits().to_le_bytes())
            .fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
                (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
            })
    }
}

/// Relative sizes of the train, validation and test splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRatio {
    pub train: u32,
    pub val: u32,
    pub test: u32,
}

impl Default for SplitRatio {
    fn default() -> Self {
        Self {
            train: 3,
            val: 1,
            test: 1,
        }
    }
}

impl fmt::Display for SplitRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.train, self.val, self.test)
    }
}

impl FromStr for SplitRatio {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<u32> = s
            .split([':', ','])
            .map(|p| p.trim().parse::<u32>().map_err(|e| format!("bad split `{s}`: {e}")))
            .collect::<Result<_, _>>()?;
        match parts[..] {
            [train, val, test] => Ok(Self { train, val, test }),
            _ => Err(format!("split `{s}` must have three parts, e.g. 3:1:1")),
        }
    }
}

/// Index ranges of the three splits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl SplitRatio {
    /// Splits `days` whole days in this ratio; validation and test take the
    /// rounded-down share and training takes the rest.
    pub fn plan(&self, days: usize, points_per_day: usize) -> Result<SplitPlan, FeatureError> {
        if self.train == 0 || self.val == 0 || self.test == 0 {
            return Err(FeatureError::InvalidSplit(format!("ratio {self} has a zero part")));
        }
        let total = (self.train + self.val + self.test) as usize;
        let val_days = days * self.val as usize / total;
        let test_days = days * self.test as usize / total;
        let train_days = days.saturating_sub(val_days + test_days);
        if train_days == 0 || val_days == 0 || test_days == 0 {
            return Err(FeatureError::InvalidSplit(format!(
                "{days} days cannot be split {self} into whole non-empty parts"
            )));
        }
        let a = train_days * points_per_day;
        let b = a + val_days * points_per_day;
        let c = b + test_days * points_per_day;
        Ok(SplitPlan {
            train: 0..a,
            val: a..b,
            test: b..c,
        })
    }
}

/// `M` input steps and the `T` following normalized call values.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceWindow<S> {
    /// Row-major `[M][dim]`.
    pub inputs: Vec<S>,
    pub dim: usize,
    pub target: Vec<S>,
}

impl<S: Scalar> SequenceWindow<S> {
    pub fn steps(&self) -> usize {
        self.inputs.len() / self.dim
    }

    pub fn step(&self, t: usize) -> &[S] {
        &self.inputs[t * self.dim..(t + 1) * self.dim]
    }

    /// Normalized call value at the last observed step.
    pub fn last_calls(&self) -> S {
        self.inputs[self.inputs.len() - 1]
    }

    /// The value the model is trained on: the final horizon step.
    pub fn label(&self) -> S {
        self.target[self.target.len() - 1]
    }
}

fn window_at<S: Scalar>(
    samples: &[IntervalSample],
    start: usize,
    m: usize,
    t: usize,
    mode: FeatureMode,
) -> SequenceWindow<S> {
    let dim = mode.input_dim();
    let mut inputs = Vec::with_capacity(m * dim);
    for s in &samples[start..start + m] {
        let values = s.as_array();
        inputs.extend(s.inputs(mode).iter().map(|&k| S::of(values[k])));
    }
    let target = samples[start + m..start + m + t]
        .iter()
        .map(|s| S::of(s.calls_z))
        .collect();
    SequenceWindow { inputs, dim, target }
}

/// Slides an `m`-step window with `t`-step target over one contiguous
/// segment, yielding `len - m - t + 1` windows.
pub fn make_windows<S: Scalar>(
    samples: &[IntervalSample],
    m: usize,
    t: usize,
    mode: FeatureMode,
) -> Result<Vec<SequenceWindow<S>>, FeatureError> {
    if m == 0 || t == 0 || samples.len() < m + t {
        return Err(FeatureError::InsufficientData {
            needed: m + t,
            available: samples.len(),
        });
    }
    Ok((0..=samples.len() - m - t)
        .map(|start| window_at(samples, start, m, t, mode))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitWindows<S> {
    pub train: Vec<SequenceWindow<S>>,
    pub val: Vec<SequenceWindow<S>>,
    pub test: Vec<SequenceWindow<S>>,
}

/// Windows for each split. No window straddles a split boundary or a
/// break between `blocks` of contiguous time.
pub fn make_split_windows<S: Scalar>(
    samples: &[IntervalSample],
    plan: &SplitPlan,
    blocks: &[Range<usize>],
    m: usize,
    t: usize,
    mode: FeatureMode,
) -> Result<SplitWindows<S>, FeatureError> {
    let windows_in = |range: &Range<usize>| -> Result<Vec<SequenceWindow<S>>, FeatureError> {
        let mut out = Vec::new();
        for block in blocks {
            let lo = block.start.max(range.start);
            let hi = block.end.min(range.end);
            if hi >= lo + m + t {
                out.extend(make_windows(&samples[lo..hi], m, t, mode)?);
            }
        }
        if out.is_empty() {
            return Err(FeatureError::InsufficientData {
                needed: m + t,
                available: range.len(),
            });
        }
        Ok(out)
    };
    Ok(SplitWindows {
        train: windows_in(&plan.train)?,
        val: windows_in(&plan.val)?,
        test: windows_in(&plan.test)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> Vec<IntervalSample> {
        (0..n)
            .map(|i| IntervalSample {
                flow_z: i as f64,
                speed_level_z: -(i as f64),
                calls_z: 100.0 + i as f64,
            })
            .collect()
    }

    #[test]
    fn speed_level_examples() {
        assert_eq!(discretize_speed(15.0), 1);
        assert_eq!(discretize_speed(65.0), 8);
        // 2 + floor((40 - 20) / (20 / 3)) = 5
        assert_eq!(discretize_speed(40.0), 5);
        assert_eq!(discretize_speed(0.0), 1);
        assert_eq!(discretize_speed(f64::NAN), 1);
    }

    #[test]
    fn two_point_statistics() {
        let s = fit_normalizer(&[[10.0, 1.0, 0.0], [20.0, 3.0, 4.0]]).unwrap();
        assert_eq!(s.mean[0], 15.0);
        assert_eq!(s.std[0], 5.0);
        assert_eq!(s.std[2], 2.0);
    }

    #[test]
    fn constant_column_is_degenerate() {
        let err = fit_normalizer(&[[10.0, 1.0, 7.0], [20.0, 3.0, 7.0]]).unwrap_err();
        assert_eq!(err, FeatureError::DegenerateFeature { feature: "calls" });
        assert_eq!(fit_normalizer(&[[1.0, 2.0, 3.0]]).unwrap_err().kind(), "InsufficientData");
    }

    #[test]
    fn twenty_points_two_windows() {
        let w = make_windows::<f64>(&ramp(20), 18, 1, FeatureMode::NetRoad).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w[1].steps(), 18);
        assert_eq!(w[1].step(0), &[1.0, -1.0, 101.0]);
        assert_eq!(w[1].target, vec![119.0]);
        assert_eq!(w[1].last_calls(), 118.0);
    }

    #[test]
    fn eighteen_points_insufficient() {
        let err = make_windows::<f64>(&ramp(18), 18, 1, FeatureMode::Net).unwrap_err();
        assert_eq!(err, FeatureError::InsufficientData { needed: 19, available: 18 });
    }

    #[test]
    fn net_mode_is_calls_only() {
        let w = make_windows::<f32>(&ramp(10), 3, 2, FeatureMode::Net).unwrap();
        assert_eq!(w.len(), 6);
        assert_eq!(w[0].dim, 1);
        assert_eq!(w[0].inputs, vec![100.0, 101.0, 102.0]);
        assert_eq!(w[0].target, vec![103.0, 104.0]);
        assert_eq!(w[0].label(), 104.0);
    }

    #[test]
    fn twenty_day_plan_is_12_4_4() {
        let plan = SplitRatio::default().plan(20, 288).unwrap();
        assert_eq!(plan.train, 0..12 * 288);
        assert_eq!(plan.val, 12 * 288..16 * 288);
        assert_eq!(plan.test, 16 * 288..20 * 288);
        assert!(SplitRatio::default().plan(2, 288).is_err());
        assert!("3:0:1".parse::<SplitRatio>().unwrap().plan(20, 288).is_err());
    }

    #[test]
    fn split_windows_respect_boundaries() {
        let samples = ramp(5760);
        let plan = SplitRatio::default().plan(20, 288).unwrap();
        let w = make_split_windows::<f64>(&samples, &plan, &[0..5760], 18, 1, FeatureMode::NetRoad).unwrap();
        assert_eq!(w.train.len(), 12 * 288 - 18);
        assert_eq!(w.val.len(), 4 * 288 - 18);
        assert_eq!(w.test.len(), 4 * 288 - 18);
        // first validation window starts at the split boundary
        assert_eq!(w.val[0].step(0)[0], (12 * 288) as f64);

        // a break in time after day 1 removes the windows that would cross it
        let blocks = [0..288, 288..5760];
        let w = make_split_windows::<f64>(&samples, &plan, &blocks, 18, 1, FeatureMode::Net).unwrap();
        assert_eq!(w.train.len(), 12 * 288 - 2 * 18);
    }

    #[test]
    fn split_ratio_parsing() {
        assert_eq!("3:1:1".parse::<SplitRatio>().unwrap(), SplitRatio::default());
        assert_eq!("6,2,2".parse::<SplitRatio>().unwrap().train, 6);
        assert!("3:1".parse::<SplitRatio>().is_err());
    }

    #[test]
    fn checksum_tracks_statistics() {
        let a = fit_normalizer(&[[1.0, 2.0, 3.0], [2.0, 3.0, 5.0]]).unwrap();
        let mut b = a;
        assert_eq!(a.checksum(), b.checksum());
        b.mean[1] += 1e-12;
        assert_ne!(a.checksum(), b.checksum());
    }
}

//! Road measurement series: CSV ingestion, validation, a synthetic stand-in
//! generator and flow/speed/calls correlation diagnostics.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::CallSeries;

/// Length of one measurement interval in seconds.
pub const INTERVAL_SECS: i64 = 300;
/// Five-minute intervals in one day.
pub const POINTS_PER_DAY: usize = 288;
const SECS_PER_DAY: i64 = 86_400;

/// Upper sanity bound on average speed (mph).
pub const MAX_SPEED: f64 = 120.0;
/// Upper sanity bound on vehicles per interval across all lanes.
pub const MAX_FLOW: u32 = 10_000;

/// 2021-03-29T00:00:00Z, first day of the synthetic series.
const SYNTH_EPOCH: i64 = 1_616_976_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RoadError {
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("missing 5-minute slot {slot}")]
    Gap { slot: String },
    #[error("{field} out of bounds at line {line}: {value}")]
    Bounds {
        line: usize,
        field: &'static str,
        value: String,
    },
    #[error("{variable} has zero variance")]
    DegenerateSeries { variable: String },
    #[error("invalid series: {0}")]
    InvalidSeries(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("csv: {0}")]
    Csv(String),
}

impl RoadError {
    pub fn kind(&self) -> &'static str {
        match self {
            RoadError::MalformedRow { .. } => "MalformedRow",
            RoadError::Gap { .. } => "GapError",
            RoadError::Bounds { .. } => "BoundsError",
            RoadError::DegenerateSeries { .. } => "DegenerateSeries",
            RoadError::InvalidSeries(_) => "InvalidSeries",
            RoadError::InvalidArgument(_) => "InvalidArgument",
            RoadError::Csv(_) => "CsvError",
        }
    }
}

/// One five-minute road observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoadRecord {
    /// Seconds since the Unix epoch (UTC), aligned to the interval grid.
    pub timestamp: i64,
    /// Vehicles counted during the interval.
    pub flow: u32,
    /// Average speed in mph.
    pub speed: f64,
}

impl RoadRecord {
    fn check_bounds(&self, line: usize) -> Result<(), RoadError> {
        if !self.speed.is_finite() || self.speed < 0.0 || self.speed > MAX_SPEED {
            return Err(RoadError::Bounds {
                line,
                field: "speed",
                value: self.speed.to_string(),
            });
        }
        if self.flow > MAX_FLOW {
            return Err(RoadError::Bounds {
                line,
                field: "flow",
                value: self.flow.to_string(),
            });
        }
        Ok(())
    }
}

/// A validated series of whole days of five-minute records.
///
/// Within a day consecutive timestamps are exactly [`INTERVAL_SECS`] apart;
/// days follow each other in strictly increasing time but need not be
/// adjacent (e.g. weekends removed).
#[derive(Debug, Clone, PartialEq)]
pub struct RoadSeries {
    records: Vec<RoadRecord>,
    days: usize,
}

impl RoadSeries {
    pub fn from_records(records: Vec<RoadRecord>) -> Result<Self, RoadError> {
        if records.is_empty() || records.len() % POINTS_PER_DAY != 0 {
            return Err(RoadError::InvalidSeries(format!(
                "length {} is not a positive multiple of {POINTS_PER_DAY}",
                records.len()
            )));
        }
        for (i, r) in records.iter().enumerate() {
            r.check_bounds(i + 1)?;
        }
        for (i, pair) in records.windows(2).enumerate() {
            let step = pair[1].timestamp - pair[0].timestamp;
            let day_boundary = (i + 1) % POINTS_PER_DAY == 0;
            if (day_boundary && step <= 0) || (!day_boundary && step != INTERVAL_SECS) {
                return Err(RoadError::InvalidSeries(format!(
                    "timestamps {} -> {} at index {} break the 5-minute grid",
                    pair[0].timestamp,
                    pair[1].timestamp,
                    i + 1
                )));
            }
        }
        let days = records.len() / POINTS_PER_DAY;
        Ok(Self { records, days })
    }

    pub fn records(&self) -> &[RoadRecord] {
        &self.records
    }

    pub fn days(&self) -> usize {
        self.days
    }

    pub fn points_per_day(&self) -> usize {
        POINTS_PER_DAY
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn flows(&self) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().map(|r| r.flow as f64)
    }

    pub fn speeds(&self) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().map(|r| r.speed)
    }

    /// Index ranges of maximal runs of records with no time gap between
    /// them. A series of adjacent calendar days is a single block.
    pub fn contiguous_blocks(&self) -> Vec<std::ops::Range<usize>> {
        let mut blocks = Vec::new();
        let mut start = 0;
        for i in 1..self.records.len() {
            if self.records[i].timestamp - self.records[i - 1].timestamp != INTERVAL_SECS {
                blocks.push(start..i);
                start = i;
            }
        }
        blocks.push(start..self.records.len());
        blocks
    }

    /// The first `days` days of the series.
    pub fn truncate_days(&self, days: usize) -> Result<Self, RoadError> {
        if days == 0 || days > self.days {
            return Err(RoadError::InvalidArgument(format!(
                "cannot take {days} days from a {}-day series",
                self.days
            )));
        }
        Ok(Self {
            records: self.records[..days * POINTS_PER_DAY].to_vec(),
            days,
        })
    }
}

/// Which CSV columns hold the timestamp, flow and speed fields.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnMap {
    pub timestamp: String,
    pub flow: String,
    pub speed: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            timestamp: "timestamp".into(),
            flow: "flow".into(),
            speed: "speed".into(),
        }
    }
}

impl FromStr for ColumnMap {
    type Err = RoadError;

    /// Parses `timestamp=<col>,flow=<col>,speed=<col>`; omitted keys keep
    /// their default column name.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut map = ColumnMap::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, col) = part.split_once('=').ok_or_else(|| {
                RoadError::InvalidArgument(format!("column mapping `{part}` is not key=column"))
            })?;
            let slot = match key.trim() {
                "timestamp" => &mut map.timestamp,
                "flow" => &mut map.flow,
                "speed" => &mut map.speed,
                other => {
                    return Err(RoadError::InvalidArgument(format!(
                        "unknown mapping key `{other}`"
                    )))
                }
            };
            *slot = col.trim().to_string();
        }
        Ok(map)
    }
}

/// How missing five-minute slots are handled at ingest.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Impute {
    /// A missing slot is a [`RoadError::Gap`].
    #[default]
    None,
    /// Repeat the previous record.
    Hold,
}

impl FromStr for Impute {
    type Err = RoadError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Impute::None),
            "hold" => Ok(Impute::Hold),
            other => Err(RoadError::InvalidArgument(format!(
                "unknown impute mode `{other}` (expected none|hold)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct IngestOptions {
    pub columns: ColumnMap,
    pub impute: Impute,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IngestReport {
    pub rows_read: usize,
    /// Slots filled by imputation, formatted `YYYY-MM-DD HH:MM`.
    pub imputed: Vec<String>,
}

fn slot_label(day: i64, slot: usize) -> String {
    let ts = day * SECS_PER_DAY + slot as i64 * INTERVAL_SECS;
    DateTime::from_timestamp(ts, 0)
        .map(|d| d.format("%Y-%m-%d %H:%M").to_string())
        .unwrap_or_else(|| ts.to_string())
}

/// Parses an ISO-8601 date-time (offset or naive-as-UTC), the PeMS
/// `MM/DD/YYYY HH:MM:SS` form, or integer epoch seconds.
pub fn parse_timestamp(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(n) = s.parse::<i64>() {
        return Some(n);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    const FORMATS: [&str; 5] = [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
        "%m/%d/%Y %H:%M:%S",
    ];
    FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .map(|dt| dt.and_utc().timestamp())
}

fn parse_flow(raw: &str, line: usize) -> Result<u32, RoadError> {
    let raw = raw.trim();
    if let Ok(v) = raw.parse::<u32>() {
        return Ok(v);
    }
    let v: f64 = raw.parse().map_err(|_| RoadError::MalformedRow {
        line,
        reason: format!("flow `{raw}` is not a number"),
    })?;
    if v < 0.0 || v > MAX_FLOW as f64 {
        return Err(RoadError::Bounds {
            line,
            field: "flow",
            value: raw.to_string(),
        });
    }
    if v.fract() != 0.0 {
        return Err(RoadError::MalformedRow {
            line,
            reason: format!("flow `{raw}` is not a whole vehicle count"),
        });
    }
    Ok(v as u32)
}

/// Reads a road CSV from any reader. See [`parse_road_csv`].
pub fn read_road_csv<R: Read>(
    reader: R,
    opts: &IngestOptions,
) -> Result<(RoadSeries, IngestReport), RoadError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| RoadError::Csv(e.to_string()))?
        .clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            RoadError::Csv(format!(
                "missing column `{name}` (header: {})",
                headers.iter().collect::<Vec<_>>().join(",")
            ))
        })
    };
    let (ts_col, flow_col, speed_col) = (
        col(&opts.columns.timestamp)?,
        col(&opts.columns.flow)?,
        col(&opts.columns.speed)?,
    );

    let mut days: BTreeMap<i64, Vec<Option<RoadRecord>>> = BTreeMap::new();
    let mut report = IngestReport::default();
    for (i, row) in rdr.records().enumerate() {
        // header is line 1
        let line = i + 2;
        let row = row.map_err(|e| RoadError::MalformedRow {
            line,
            reason: e.to_string(),
        })?;
        let field = |c: usize| row.get(c).unwrap_or("");
        let timestamp = parse_timestamp(field(ts_col)).ok_or_else(|| RoadError::MalformedRow {
            line,
            reason: format!("unparseable timestamp `{}`", field(ts_col)),
        })?;
        let flow = parse_flow(field(flow_col), line)?;
        let speed_raw = field(speed_col);
        let speed: f64 = speed_raw.parse().map_err(|_| RoadError::MalformedRow {
            line,
            reason: format!("speed `{speed_raw}` is not a number"),
        })?;
        let record = RoadRecord {
            timestamp,
            flow,
            speed,
        };
        record.check_bounds(line)?;
        if timestamp.rem_euclid(INTERVAL_SECS) != 0 {
            return Err(RoadError::MalformedRow {
                line,
                reason: format!("timestamp {timestamp} is not on the 5-minute grid"),
            });
        }
        let day = timestamp.div_euclid(SECS_PER_DAY);
        let slot = (timestamp.rem_euclid(SECS_PER_DAY) / INTERVAL_SECS) as usize;
        let slots = days.entry(day).or_insert_with(|| vec![None; POINTS_PER_DAY]);
        if slots[slot].replace(record).is_some() {
            return Err(RoadError::MalformedRow {
                line,
                reason: format!("duplicate slot {}", slot_label(day, slot)),
            });
        }
        report.rows_read += 1;
    }
    if days.is_empty() {
        return Err(RoadError::InvalidSeries("no data rows".into()));
    }

    let mut records = Vec::with_capacity(days.len() * POINTS_PER_DAY);
    let mut pending: Vec<(i64, usize)> = Vec::new();
    for (&day, slots) in &days {
        for (slot, rec) in slots.iter().enumerate() {
            match rec {
                Some(r) => {
                    // leading gap of the whole series: back-fill from the first record
                    for (d, s) in pending.drain(..) {
                        records.push(RoadRecord {
                            timestamp: d * SECS_PER_DAY + s as i64 * INTERVAL_SECS,
                            ..*r
                        });
                    }
                    records.push(*r);
                }
                None if opts.impute == Impute::Hold => {
                    report.imputed.push(slot_label(day, slot));
                    let ts = day * SECS_PER_DAY + slot as i64 * INTERVAL_SECS;
                    match records.last() {
                        Some(prev) => records.push(RoadRecord {
                            timestamp: ts,
                            ..*prev
                        }),
                        None => pending.push((day, slot)),
                    }
                }
                None => {
                    return Err(RoadError::Gap {
                        slot: slot_label(day, slot),
                    })
                }
            }
        }
    }
    Ok((RoadSeries::from_records(records)?, report))
}

/// Parses a road measurement CSV (header `timestamp,flow,speed` unless
/// remapped) into a validated series.
pub fn parse_road_csv(
    path: impl AsRef<Path>,
    opts: &IngestOptions,
) -> Result<(RoadSeries, IngestReport), RoadError> {
    let file = std::fs::File::open(path.as_ref())
        .map_err(|e| RoadError::Csv(format!("{}: {e}", path.as_ref().display())))?;
    read_road_csv(std::io::BufReader::new(file), opts)
}

/// Writes the series as `timestamp,flow,speed` with epoch-second timestamps.
/// Speeds use shortest round-trip formatting, so re-parsing is exact.
pub fn write_road_csv<W: Write>(series: &RoadSeries, mut out: W) -> std::io::Result<()> {
    writeln!(out, "timestamp,flow,speed")?;
    for r in series.records() {
        writeln!(out, "{},{},{}", r.timestamp, r.flow, r.speed)?;
    }
    Ok(())
}

/// Daily flow shape: overnight trough, morning and evening peaks and a
/// broad midday plateau, in vehicles per interval.
fn flow_profile(slot: usize) -> f64 {
    let hour = slot as f64 * INTERVAL_SECS as f64 / 3600.0;
    let bump = |center: f64, width: f64, height: f64| {
        height * (-0.5 * ((hour - center) / width).powi(2)).exp()
    };
    let shape = 40.0 + bump(7.75, 1.2, 260.0) + bump(17.0, 1.6, 300.0) + bump(12.5, 3.5, 150.0);
    shape * ((hour - 4.0) / 2.0).clamp(0.15, 1.0)
}

const FREE_FLOW_SPEED: f64 = 70.0;
const CAPACITY: f64 = 560.0;

/// Speed falls off sharply as flow approaches capacity.
fn speed_for_load(flow: f64) -> f64 {
    let load = (flow / CAPACITY).min(1.0);
    FREE_FLOW_SPEED * (1.0 - 0.75 * load.powi(6))
}

/// Generates a deterministic synthetic series of `days` adjacent days
/// starting 2021-03-29.
///
/// Flow follows a two-peak weekday profile with day-level amplitude jitter
/// and AR(1) multiplicative noise. Speed drops as flow nears capacity, and
/// roughly one day in four carries an incident that cuts speed (and, less,
/// flow) for 30-90 minutes.
pub fn synthesize_road_series(days: usize, seed: u64) -> Result<RoadSeries, RoadError> {
    if days == 0 {
        return Err(RoadError::InvalidArgument("days must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let amp_dist = Normal::new(1.0f64, 0.07).expect("valid normal");
    let ar_dist = Normal::new(0.0f64, 0.08).expect("valid normal");
    let speed_noise = Normal::new(0.0f64, 1.5).expect("valid normal");

    let mut records = Vec::with_capacity(days * POINTS_PER_DAY);
    for day in 0..days {
        let amplitude = amp_dist.sample(&mut rng).clamp(0.8, 1.2);
        let incident = rng.gen_bool(0.25).then(|| {
            let start = rng.gen_range(72..240usize);
            let len = rng.gen_range(6..=18usize);
            let severity = rng.gen_range(0.4..0.7);
            (start..start + len, severity)
        });
        let mut ar = 0.0;
        for slot in 0..POINTS_PER_DAY {
            ar = 0.8 * ar + ar_dist.sample(&mut rng);
            let mut flow = flow_profile(slot) * amplitude * f64::exp(ar);
            let mut speed = speed_for_load(flow) + speed_noise.sample(&mut rng);
            if let Some((span, severity)) = &incident {
                if span.contains(&slot) {
                    flow *= 1.0 - 0.3 * severity;
                    speed *= 1.0 - severity;
                }
            }
            records.push(RoadRecord {
                timestamp: SYNTH_EPOCH
                    + day as i64 * SECS_PER_DAY
                    + slot as i64 * INTERVAL_SECS,
                flow: flow.round().clamp(0.0, 600.0) as u32,
                speed: speed.clamp(5.0, 75.0),
            });
        }
    }
    RoadSeries::from_records(records)
}

/// Sample Pearson correlation. `None` when either input has zero variance
/// or the lengths differ.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Pairwise Pearson correlation between named variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl CorrelationMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.labels.iter().position(|l| l == a)?;
        let j = self.labels.iter().position(|l| l == b)?;
        Some(self.values[i][j])
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "variable,{}", self.labels.join(","))?;
        for (label, row) in self.labels.iter().zip(&self.values) {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{label},{}", cells.join(","))?;
        }
        Ok(())
    }
}

impl fmt::Display for CorrelationMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:>8}", "")?;
        for l in &self.labels {
            write!(f, "{l:>9}")?;
        }
        writeln!(f)?;
        for (l, row) in self.labels.iter().zip(&self.values) {
            write!(f, "{l:>8}")?;
            for v in row {
                write!(f, "{v:>9.4}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Morning and evening rush windows as `[start, end)` hours of the day (UTC).
pub const PEAK_HOURS: [(u32, u32); 2] = [(7, 9), (16, 19)];

/// Pearson correlation of flow and speed over records inside [`PEAK_HOURS`].
pub fn peak_hour_correlation(series: &RoadSeries) -> Option<f64> {
    let (flows, speeds): (Vec<f64>, Vec<f64>) = series
        .records()
        .iter()
        .filter(|r| {
            let hour = (r.timestamp.rem_euclid(SECS_PER_DAY) / 3600) as u32;
            PEAK_HOURS.iter().any(|&(a, b)| (a..b).contains(&hour))
        })
        .map(|r| (r.flow as f64, r.speed))
        .unzip();
    pearson(&flows, &speeds)
}

/// Flow/speed correlation matrix, extended with the call counts when given.
pub fn correlation_report(
    series: &RoadSeries,
    calls: Option<&CallSeries>,
) -> Result<CorrelationMatrix, RoadError> {
    if series.is_empty() {
        return Err(RoadError::InvalidSeries("empty series".into()));
    }
    let mut labels = vec!["flow".to_string(), "speed".to_string()];
    let mut columns = vec![series.flows().collect::<Vec<_>>(), series.speeds().collect()];
    if let Some(calls) = calls {
        if calls.len() != series.len() {
            return Err(RoadError::InvalidArgument(format!(
                "call series length {} does not match road series length {}",
                calls.len(),
                series.len()
            )));
        }
        labels.push("calls".into());
        columns.push(calls.counts().iter().map(|&c| c as f64).collect());
    }
    correlation_matrix(labels, &columns)
}

fn correlation_matrix(
    labels: Vec<String>,
    columns: &[Vec<f64>],
) -> Result<CorrelationMatrix, RoadError> {
    let n = columns.len();
    let mut values = vec![vec![1.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let r = pearson(&columns[i], &columns[j]).ok_or_else(|| {
                let flat = |c: &Vec<f64>| c.iter().all(|v| *v == c[0]);
                let variable = if flat(&columns[i]) { &labels[i] } else { &labels[j] };
                RoadError::DegenerateSeries {
                    variable: variable.clone(),
                }
            })?;
            values[i][j] = r;
            values[j][i] = r;
        }
    }
    Ok(CorrelationMatrix { labels, values })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn day_csv(skip_slot: Option<usize>, speed_at: Option<(usize, &str)>) -> String {
        let mut s = String::from("timestamp,flow,speed\n");
        for slot in 0..POINTS_PER_DAY {
            if Some(slot) == skip_slot {
                continue;
            }
            let speed = match speed_at {
                Some((k, v)) if k == slot => v.to_string(),
                _ => "65.5".to_string(),
            };
            s.push_str(&format!("{},{},{speed}\n", SYNTH_EPOCH + slot as i64 * 300, slot % 50));
        }
        s
    }

    #[test]
    fn one_full_day_parses() {
        let (series, report) = read_road_csv(day_csv(None, None).as_bytes(), &Default::default()).unwrap();
        assert_eq!(series.days(), 1);
        assert_eq!(series.len(), 288);
        assert_eq!(report.rows_read, 288);
        assert!(report.imputed.is_empty());
    }

    #[test]
    fn negative_speed_is_bounds_error() {
        let err = read_road_csv(day_csv(None, Some((3, "-4"))).as_bytes(), &Default::default()).unwrap_err();
        assert!(matches!(err, RoadError::Bounds { field: "speed", line: 5, .. }), "{err:?}");
    }

    #[test]
    fn speed_above_sanity_bound_rejected() {
        let err = read_road_csv(day_csv(None, Some((0, "130"))).as_bytes(), &Default::default()).unwrap_err();
        assert_eq!(err.kind(), "BoundsError");
    }

    #[test]
    fn non_numeric_speed_is_malformed() {
        let err = read_road_csv(day_csv(None, Some((0, "fast"))).as_bytes(), &Default::default()).unwrap_err();
        assert_eq!(err.kind(), "MalformedRow");
    }

    #[test]
    fn missing_slot_reports_its_time() {
        let csv = "timestamp,flow,speed\n2021-03-29T00:00:00Z,10,60\n2021-03-29T00:10:00Z,12,61\n";
        let err = read_road_csv(csv.as_bytes(), &Default::default()).unwrap_err();
        assert_eq!(
            err,
            RoadError::Gap {
                slot: "2021-03-29 00:05".into()
            }
        );
    }

    #[test]
    fn hold_imputation_repeats_previous_record() {
        let opts = IngestOptions {
            impute: Impute::Hold,
            ..Default::default()
        };
        let (series, report) = read_road_csv(day_csv(Some(10), None).as_bytes(), &opts).unwrap();
        assert_eq!(report.imputed, vec!["2021-03-29 00:50".to_string()]);
        let r = series.records();
        assert_eq!(r[10].flow, r[9].flow);
        assert_eq!(r[10].timestamp, r[9].timestamp + 300);

        let (series, report) = read_road_csv(day_csv(Some(0), None).as_bytes(), &opts).unwrap();
        assert_eq!(report.imputed.len(), 1);
        assert_eq!(series.records()[0].flow, series.records()[1].flow);
        assert_eq!(series.records()[0].timestamp, SYNTH_EPOCH);
    }

    #[test]
    fn column_mapping_and_timestamp_formats() {
        let mut csv = String::from("Time,Total Flow,Avg Speed,Lanes\n");
        for slot in 0..POINTS_PER_DAY {
            let ts = DateTime::from_timestamp(SYNTH_EPOCH + slot as i64 * 300, 0).unwrap();
            csv.push_str(&format!("{},{}.0,64.2,3\n", ts.format("%m/%d/%Y %H:%M:%S"), slot));
        }
        let opts = IngestOptions {
            columns: "timestamp=Time,flow=Total Flow,speed=Avg Speed".parse().unwrap(),
            ..Default::default()
        };
        let (series, _) = read_road_csv(csv.as_bytes(), &opts).unwrap();
        assert_eq!(series.records()[287].flow, 287);
        assert_eq!(series.records()[0].timestamp, SYNTH_EPOCH);
    }

    #[test]
    fn timestamp_forms_agree() {
        let want = Some(SYNTH_EPOCH + 300);
        assert_eq!(parse_timestamp("1616976300"), want);
        assert_eq!(parse_timestamp("2021-03-29T00:05:00Z"), want);
        assert_eq!(parse_timestamp("2021-03-29T02:05:00+02:00"), want);
        assert_eq!(parse_timestamp("2021-03-29 00:05:00"), want);
        assert_eq!(parse_timestamp("2021-03-29T00:05"), want);
        assert_eq!(parse_timestamp("yesterday"), None);
    }

    #[test]
    fn duplicate_and_off_grid_rows_rejected() {
        let mut csv = day_csv(None, None);
        csv.push_str(&format!("{SYNTH_EPOCH},1,50\n"));
        assert_eq!(read_road_csv(csv.as_bytes(), &Default::default()).unwrap_err().kind(), "MalformedRow");
        let csv = format!("timestamp,flow,speed\n{},1,50\n", SYNTH_EPOCH + 7);
        assert_eq!(read_road_csv(csv.as_bytes(), &Default::default()).unwrap_err().kind(), "MalformedRow");
    }

    #[test]
    fn fractional_flow_rejected_but_integral_float_accepted() {
        assert_eq!(parse_flow("12.0", 2), Ok(12));
        assert_eq!(parse_flow("12.5", 2).unwrap_err().kind(), "MalformedRow");
        assert_eq!(parse_flow("-3", 2).unwrap_err().kind(), "BoundsError");
    }

    #[test]
    fn synth_is_deterministic() {
        let a = synthesize_road_series(1, 7).unwrap();
        let b = synthesize_road_series(1, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, synthesize_road_series(1, 8).unwrap());
    }

    #[test]
    fn synth_length_and_ranges() {
        let s = synthesize_road_series(20, 1).unwrap();
        assert_eq!(s.len(), 5760);
        assert_eq!(s.days(), 20);
        assert_eq!(s.contiguous_blocks(), vec![0..5760]);
        assert!(s.records().iter().all(|r| r.flow <= 600 && (5.0..=75.0).contains(&r.speed)));
        assert!(synthesize_road_series(0, 1).is_err());
    }

    #[test]
    fn perfect_anticorrelation() {
        let records: Vec<_> = (0..POINTS_PER_DAY)
            .map(|i| {
                let flow = (i * 7 % 300) as u32;
                RoadRecord {
                    timestamp: SYNTH_EPOCH + i as i64 * 300,
                    flow,
                    speed: 70.0 - 0.1 * flow as f64,
                }
            })
            .collect();
        let m = correlation_report(&RoadSeries::from_records(records).unwrap(), None).unwrap();
        assert_eq!(m.labels, ["flow", "speed"]);
        assert!((m.get("flow", "speed").unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(m.values[0][0], 1.0);
    }

    #[test]
    fn constant_speed_is_degenerate() {
        let records: Vec<_> = (0..POINTS_PER_DAY)
            .map(|i| RoadRecord {
                timestamp: SYNTH_EPOCH + i as i64 * 300,
                flow: i as u32,
                speed: 55.0,
            })
            .collect();
        let err = correlation_report(&RoadSeries::from_records(records).unwrap(), None).unwrap_err();
        assert_eq!(
            err,
            RoadError::DegenerateSeries {
                variable: "speed".into()
            }
        );
    }

    #[test]
    fn series_constructor_enforces_grid() {
        let mut records: Vec<_> = (0..POINTS_PER_DAY)
            .map(|i| RoadRecord {
                timestamp: SYNTH_EPOCH + i as i64 * 300,
                flow: 1,
                speed: 50.0,
            })
            .collect();
        assert!(RoadSeries::from_records(records.clone()).is_ok());
        assert!(RoadSeries::from_records(records[..100].to_vec()).is_err());
        records[5].timestamp += 300;
        assert!(RoadSeries::from_records(records).is_err());
    }

    #[test]
    fn truncate_days_keeps_prefix() {
        let s = synthesize_road_series(3, 2).unwrap();
        let t = s.truncate_days(2).unwrap();
        assert_eq!(t.records(), &s.records()[..576]);
        assert!(s.truncate_days(4).is_err());
    }
}

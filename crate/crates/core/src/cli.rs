//! Command-line entry point.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::config::{AppConfig, ConfigError, ModeSelection};
use crate::error::{Error, Result};
use crate::experiment::{run_scenario_grid, table1_grid, ExperimentSpec, GridReport, Precision, METRICS_HEADER};
use crate::nn::{grad_check, random_case, CellKind};
use crate::road::{
    correlation_report, parse_road_csv, read_road_csv, synthesize_road_series, write_road_csv, ColumnMap,
    Impute, IngestOptions, RoadError, RoadSeries,
};
use crate::sim::{simulate_calls, CallSeries, ScenarioConfig};

/// Environment variable capping the number of grid rows trained in parallel.
pub const THREADS_ENV: &str = "V2X_LOADCAST_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "v2x-loadcast",
    version,
    about = "Simulate highway-cell call traces from road measurements and forecast base-station load"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse and validate a road CSV; print a summary and correlations
    Ingest(IngestArgs),
    /// Generate a synthetic road series
    Synth(SynthArgs),
    /// Generate per-interval call counts for a road CSV
    Simulate(SimulateArgs),
    /// Train and evaluate the forecaster for one scenario (or a grid)
    Run(RunArgs),
    /// Run the seven-scenario Net vs Net&Road grid
    Grid(RunArgs),
    /// Check analytic gradients against central finite differences
    Gradcheck(GradcheckArgs),
    /// Turn a metrics CSV or road/call CSV into plot-ready CSV
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct RoadInput {
    /// Missing-slot handling: none (error) or hold (repeat previous record)
    #[arg(long, default_value = "none")]
    impute: Impute,
    /// Column mapping, e.g. timestamp=Time,flow=Total Flow,speed=Avg Speed
    #[arg(long)]
    map: Option<String>,
}

impl RoadInput {
    fn options(&self) -> Result<IngestOptions> {
        Ok(IngestOptions {
            columns: match &self.map {
                Some(m) => m.parse::<ColumnMap>()?,
                None => ColumnMap::default(),
            },
            impute: self.impute,
        })
    }
}

#[derive(Debug, Args)]
struct IngestArgs {
    /// Road CSV (header timestamp,flow,speed unless --map is given)
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    road: RoadInput,
    /// Write the validated series in canonical form
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the flow/speed correlation matrix as CSV
    #[arg(long)]
    correlation: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 20)]
    days: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    road: PathBuf,
    #[command(flatten)]
    road_input: RoadInput,
    /// Service requests per minute per vehicle
    #[arg(long)]
    lambda: f64,
    /// Handover probability
    #[arg(long)]
    h: f64,
    /// Cell range in miles
    #[arg(long)]
    range: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Intervals between the road detector and the cell entrance
    #[arg(long, default_value_t = 1)]
    lead: usize,
    /// Place exactly `flow` arrivals per interval
    #[arg(long)]
    exact_flow: bool,
    /// Output CSV with header timestamp,flow,speed,calls
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Flat key = value config file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scenario grid to run instead of a single scenario (table1)
    #[arg(long)]
    grid: Option<String>,
    /// Days of road data to use
    #[arg(long)]
    days: Option<usize>,
    /// Comma-separated run seeds
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Road CSV (synthetic road when omitted)
    #[arg(long)]
    road: Option<PathBuf>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    range: Option<f64>,
    /// net, netroad or both
    #[arg(long)]
    mode: Option<ModeSelection>,
    #[arg(long)]
    cell: Option<CellKind>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    /// f32 or f64
    #[arg(long)]
    precision: Option<String>,
    /// Write the effective configuration to this file
    #[arg(long)]
    dump_config: Option<PathBuf>,
    /// Stop after validating (and dumping) the configuration
    #[arg(long)]
    dry_run: bool,
    /// Record wall-clock times in the metrics CSV (makes it non-reproducible)
    #[arg(long)]
    timing: bool,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// Number of random models to check
    #[arg(long, default_value_t = 100)]
    seeds: u64,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, default_value_t = 4)]
    hidden: usize,
    #[arg(long, default_value_t = 5)]
    window: usize,
    /// lstm, gru or both (alternating)
    #[arg(long, default_value = "both")]
    cell: String,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// metrics.csv from `run`, or a road/simulate CSV
    #[arg(long)]
    input: PathBuf,
    /// Output CSV (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

fn create(path: &Path) -> Result<io::BufWriter<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(io::BufWriter::new(fs::File::create(path)?))
}

fn cmd_ingest(args: &IngestArgs, out: &mut dyn Write) -> Result<()> {
    let (series, report) = parse_road_csv(&args.input, &args.road.options()?)?;
    writeln!(out, "records: {}", series.len())?;
    writeln!(out, "days: {}", series.days())?;
    writeln!(out, "rows_read: {}", report.rows_read)?;
    writeln!(out, "imputed: {}", report.imputed.len())?;
    for slot in &report.imputed {
        writeln!(out, "  imputed {slot}")?;
    }
    match correlation_report(&series, None) {
        Ok(m) => {
            write!(out, "{m}")?;
            if let Some(path) = &args.correlation {
                m.write_csv(create(path)?)?;
            }
        }
        Err(e) => writeln!(out, "correlation unavailable: {e}")?,
    }
    if let Some(path) = &args.out {
        write_road_csv(&series, create(path)?)?;
    }
    Ok(())
}

fn cmd_synth(args: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    let series = synthesize_road_series(args.days, args.seed)?;
    write_road_csv(&series, create(&args.out)?)?;
    writeln!(out, "wrote {} records ({} days) to {}", series.len(), series.days(), args.out.display())?;
    Ok(())
}

fn write_calls_csv<W: Write>(series: &RoadSeries, calls: &CallSeries, mut w: W) -> io::Result<()> {
    writeln!(w, "timestamp,flow,speed,calls")?;
    for (r, c) in series.records().iter().zip(calls.counts()) {
        writeln!(w, "{},{},{},{c}", r.timestamp, r.flow, r.speed)?;
    }
    w.flush()
}

fn cmd_simulate(args: &SimulateArgs, out: &mut dyn Write) -> Result<()> {
    let (series, _) = parse_road_csv(&args.road, &args.road_input.options()?)?;
    let config = ScenarioConfig {
        lambda: args.lambda,
        handover_prob: args.h,
        cell_range: args.range,
        seed: args.seed,
        exact_flow: args.exact_flow,
        detector_lead: args.lead,
        ..Default::default()
    };
    let calls = simulate_calls(&series, &config)?;
    write_calls_csv(&series, &calls, create(&args.out)?)?;
    writeln!(
        out,
        "intervals: {}\nvehicles: {}\ncalls: {}\nzero_speed_intervals: {}",
        calls.len(),
        calls.vehicles,
        calls.total(),
        calls.zero_speed_intervals
    )?;
    Ok(())
}

fn effective_config(args: &RunArgs, force_grid: bool) -> Result<AppConfig> {
    let mut cfg = match &args.config {
        Some(path) => AppConfig::load(path)?,
        None => AppConfig::default(),
    };
    if let Some(v) = &args.grid {
        cfg.grid = Some(v.clone());
    }
    if force_grid && cfg.grid.is_none() {
        cfg.grid = Some("table1".into());
    }
    if let Some(v) = args.days {
        cfg.days = v;
    }
    if let Some(v) = &args.seeds {
        cfg.seeds = v.clone();
    }
    if let Some(v) = &args.out {
        cfg.out_dir = v.clone();
    }
    if let Some(v) = &args.road {
        cfg.road = Some(v.clone());
    }
    if let Some(v) = args.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = args.h {
        cfg.h = v;
    }
    if let Some(v) = args.range {
        cfg.range = v;
    }
    if let Some(v) = args.mode {
        cfg.mode = v;
    }
    if let Some(v) = args.cell {
        cfg.cell = v;
    }
    if let Some(v) = args.hidden {
        cfg.hidden = v;
    }
    if let Some(v) = args.max_epochs {
        cfg.max_epochs = v;
    }
    if let Some(v) = &args.precision {
        cfg.precision = match v.as_str() {
            "f32" => Precision::F32,
            "f64" => Precision::F64,
            other => {
                return Err(ConfigError::Invalid {
                    key: "precision",
                    reason: format!("`{other}` is not f32 or f64"),
                }
                .into())
            }
        };
    }
    if args.timing {
        cfg.record_timing = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Road series for a run: the configured CSV or the synthetic stand-in,
/// cut to the configured number of days.
pub fn load_road(cfg: &AppConfig) -> Result<RoadSeries> {
    let series = match &cfg.road {
        Some(path) => {
            let opts = IngestOptions {
                impute: cfg.impute,
                ..Default::default()
            };
            parse_road_csv(path, &opts)?.0
        }
        None => synthesize_road_series(cfg.days, cfg.road_seed)?,
    };
    if series.days() < cfg.days {
        return Err(RoadError::InvalidArgument(format!(
            "road data has {} days, {} requested",
            series.days(),
            cfg.days
        ))
        .into());
    }
    Ok(series.truncate_days(cfg.days)?)
}

/// Experiment rows described by a configuration.
pub fn experiment_specs(cfg: &AppConfig) -> Result<Vec<ExperimentSpec>> {
    if cfg.grid.is_some() {
        let base = cfg.experiment(crate::features::FeatureMode::NetRoad, 0)?;
        return Ok(table1_grid(&base, &cfg.seeds)
            .into_iter()
            .filter(|s| cfg.mode.modes().contains(&s.mode))
            .collect());
    }
    let mut specs = Vec::new();
    for &seed in &cfg.seeds {
        for mode in cfg.mode.modes() {
            specs.push(cfg.experiment(mode, seed)?);
        }
    }
    Ok(specs)
}

fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|n| *n > 0)
}

fn write_outputs(cfg: &AppConfig, grid: &GridReport) -> Result<()> {
    let dir = &cfg.out_dir;
    fs::create_dir_all(dir.join("runs"))?;
    let mut metrics = create(&dir.join("metrics.csv"))?;
    grid.write_metrics_csv(&mut metrics, cfg.record_timing)?;
    metrics.flush()?;
    for r in grid.reports() {
        let name = format!("{}_{}_{}.json", r.scenario_id, r.mode, r.seed);
        fs::write(dir.join("runs").join(name), r.to_json())?;
    }
    fs::write(dir.join("comparison.txt"), grid.comparison_table())?;
    fs::write(dir.join("config.toml"), cfg.to_text())?;
    Ok(())
}

fn cmd_run(args: &RunArgs, force_grid: bool, out: &mut dyn Write, err: &mut dyn Write) -> Result<bool> {
    let cfg = effective_config(args, force_grid)?;
    if let Some(path) = &args.dump_config {
        fs::write(path, cfg.to_text())?;
    }
    if args.dry_run {
        writeln!(out, "{}", cfg.to_text())?;
        return Ok(true);
    }
    let road = load_road(&cfg)?;
    let specs = experiment_specs(&cfg)?;
    let grid = run_scenario_grid(&specs, &road, threads_from_env())?;
    write_outputs(&cfg, &grid)?;
    write!(out, "{}", grid.comparison_table())?;
    writeln!(out, "wrote {}", cfg.out_dir.join("metrics.csv").display())?;
    let mut ok = true;
    for (spec, e) in grid.failures() {
        ok = false;
        writeln!(
            err,
            "{}",
            json!({"error": {"module": "experiment", "kind": "RunFailed",
                "message": format!("{} {} seed {}: {e}", spec.scenario_id, spec.mode, spec.seed)}})
        )?;
    }
    Ok(ok)
}

fn cmd_gradcheck(args: &GradcheckArgs, out: &mut dyn Write) -> Result<bool> {
    let kinds: Vec<CellKind> = match args.cell.as_str() {
        "both" => vec![CellKind::Lstm, CellKind::Gru],
        other => vec![other.parse().map_err(|reason| ConfigError::Invalid { key: "cell", reason })?],
    };
    let mut worst = 0.0f64;
    let mut failures = 0;
    let mut checked = 0;
    for seed in 0..args.seeds {
        let kind = kinds[seed as usize % kinds.len()];
        let dim = if seed % 2 == 0 { 1 } else { 3 };
        let (params, inputs, target) = random_case(seed, kind, dim, args.hidden, args.window);
        let report = grad_check(&params, &inputs, target, args.step, args.tolerance)?;
        worst = worst.max(report.max_relative_error);
        checked += report.checked;
        if !report.passed {
            failures += 1;
            writeln!(
                out,
                "seed {seed} ({kind}, D={dim}): max relative error {:.3e} at {}[{}]",
                report.max_relative_error, report.worst.0, report.worst.1
            )?;
        }
    }
    let passed = failures == 0;
    writeln!(out, "models: {}", args.seeds)?;
    writeln!(out, "parameters checked: {checked}")?;
    writeln!(out, "max relative error: {worst:.3e}")?;
    writeln!(out, "tolerance: {:e}", args.tolerance)?;
    writeln!(out, "result: {}", if passed { "PASS" } else { "FAIL" })?;
    Ok(passed)
}

fn aggregate_metrics(text: &str, w: &mut dyn Write) -> Result<()> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    // (scenario key) -> per-mode test MAEs, in first-seen order
    let mut rows: Vec<(String, [Vec<f64>; 2])> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| ConfigError::Parse(e.to_string()))?;
        let key = format!("{},{},{},{}", &rec[0], &rec[1], &rec[2], &rec[3]);
        let mode = usize::from(&rec[4] == "netroad");
        let mae: f64 = rec[6].parse().map_err(|_| ConfigError::Parse(format!("bad test_mae `{}`", &rec[6])))?;
        match rows.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v[mode].push(mae),
            None => {
                let mut v = [Vec::new(), Vec::new()];
                v[mode].push(mae);
                rows.push((key, v));
            }
        }
    }
    let stats = |v: &[f64]| -> [String; 3] {
        if v.is_empty() {
            return [String::new(), String::new(), String::new()];
        }
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let min = v.iter().copied().fold(f64::INFINITY, f64::min);
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        [mean.to_string(), min.to_string(), max.to_string()]
    };
    writeln!(
        w,
        "scenario_id,lambda,h,range,net_mae_mean,net_mae_min,net_mae_max,netroad_mae_mean,netroad_mae_min,netroad_mae_max,ratio,seeds"
    )?;
    for (key, [net, road]) in &rows {
        let (n, r) = (stats(net), stats(road));
        let ratio = match (n[0].parse::<f64>(), r[0].parse::<f64>()) {
            (Ok(a), Ok(b)) => (b / a).to_string(),
            _ => String::new(),
        };
        writeln!(w, "{key},{},{},{ratio},{}", n.join(","), r.join(","), net.len().max(road.len()))?;
    }
    Ok(())
}

fn cmd_report(args: &ReportArgs, out: &mut dyn Write) -> Result<()> {
    let text = fs::read_to_string(&args.input)?;
    let mut buf: Vec<u8> = Vec::new();
    if text.lines().next() == Some(METRICS_HEADER) {
        aggregate_metrics(&text, &mut buf)?;
    } else {
        let (series, _) = read_road_csv(text.as_bytes(), &IngestOptions::default())?;
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let headers = rdr.headers().map_err(|e| RoadError::Csv(e.to_string()))?.clone();
        let calls = match headers.iter().position(|h| h == "calls") {
            Some(col) => {
                let mut counts = Vec::new();
                for rec in rdr.records() {
                    let rec = rec.map_err(|e| RoadError::Csv(e.to_string()))?;
                    counts.push(rec[col].parse::<u32>().map_err(|e| RoadError::Csv(e.to_string()))?);
                }
                Some(CallSeries::from_counts(counts))
            }
            None => None,
        };
        correlation_report(&series, calls.as_ref())?.write_csv(&mut buf)?;
    }
    match &args.out {
        Some(path) => fs::write(path, buf)?,
        None => out.write_all(&buf)?,
    }
    Ok(())
}

fn error_line(e: &Error) -> String {
    json!({"error": {"module": e.module(), "kind": e.kind(), "message": e.to_string()}}).to_string()
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code. Failures print one JSON error line to `err`.
pub fn dispatch_to<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    return 0;
                }
                _ => 2,
            };
            let _ = writeln!(
                err,
                "{}",
                json!({"error": {"module": "cli", "kind": "UsageError", "message": e.render().to_string().trim()}})
            );
            return code;
        }
    };
    let result = match &cli.command {
        Command::Ingest(a) => cmd_ingest(a, out).map(|_| true),
        Command::Synth(a) => cmd_synth(a, out).map(|_| true),
        Command::Simulate(a) => cmd_simulate(a, out).map(|_| true),
        Command::Run(a) => cmd_run(a, false, out, err),
        Command::Grid(a) => cmd_run(a, true, out, err),
        Command::Gradcheck(a) => cmd_gradcheck(a, out),
        Command::Report(a) => cmd_report(a, out).map(|_| true),
    };
    match result {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            let _ = writeln!(err, "{}", error_line(&e));
            1
        }
    }
}

/// [`dispatch_to`] on the process's stdout and stderr.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let stdout = io::stdout();
    let stderr = io::stderr();
    dispatch_to(argv, &mut stdout.lock(), &mut stderr.lock())
}

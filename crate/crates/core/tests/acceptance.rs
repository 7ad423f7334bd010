//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fail.
//!
//! Runs as a plain binary (`harness = false`) so the lines are always shown.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use v2x_loadcast::cli::dispatch_to;
use v2x_loadcast::config::AppConfig;
use v2x_loadcast::experiment::{run_experiment, run_scenario_grid, table1_grid, RunReport};
use v2x_loadcast::features::{discretize_speed, fit_normalizer, raw_samples, FeatureMode, SpeedEncoding};
use v2x_loadcast::nn::{grad_check, loss_mse, metric_mae, random_case, CellKind};
use v2x_loadcast::road::synthesize_road_series;
use v2x_loadcast::sim::{expected_calls, simulate_calls, simulate_intervals, ScenarioConfig};

const GRAD_TOLERANCE: f64 = 1e-4;
const GRAD_STEP: f64 = 1e-5;
const GRAD_BUDGET: Duration = Duration::from_secs(30);
const SIM_BUDGET: Duration = Duration::from_secs(10);
const RUN_BUDGET: Duration = Duration::from_secs(600);
const CLAIM_RATIO: f64 = 0.8;
const ROUNDTRIP_TOLERANCE: f64 = 1e-12;
const SEEDS: [u64; 3] = [1, 2, 3];
const ROAD_SEED: u64 = 1;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: String) -> Check {
    if cond {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn ac1_gradients() -> Check {
    let started = Instant::now();
    let mut worst = 0.0f64;
    let mut failed = Vec::new();
    for seed in 0..100u64 {
        let kind = if seed % 2 == 0 { CellKind::Lstm } else { CellKind::Gru };
        let dim = if (seed / 2) % 2 == 0 { 1 } else { 3 };
        let (params, inputs, target) = random_case(seed, kind, dim, 4, 5);
        let report = grad_check(&params, &inputs, target, GRAD_STEP, GRAD_TOLERANCE).map_err(|e| e.to_string())?;
        worst = worst.max(report.max_relative_error);
        if !report.passed {
            failed.push(seed);
        }
    }
    let elapsed = started.elapsed();
    ensure(
        failed.is_empty() && elapsed < GRAD_BUDGET,
        format!(
            "100 models, max relative error {worst:.2e} (tol {GRAD_TOLERANCE:e}), failing seeds {failed:?}, {:.2} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn ac2_simulator() -> Check {
    let started = Instant::now();
    let cfg = ScenarioConfig {
        lambda: 0.2,
        handover_prob: 0.5,
        cell_range: 1.5,
        seed: 2024,
        ..Default::default()
    };
    let expected = expected_calls(100.0, 60.0, &cfg).map_err(|e| e.to_string())?;
    let (n, warmup) = (10_000, 2);
    let calls = simulate_intervals(&vec![100; n + warmup], &vec![60.0; n + warmup], &cfg).map_err(|e| e.to_string())?;
    let xs: Vec<f64> = calls.counts()[warmup..].iter().map(|&c| c as f64).collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    let elapsed = started.elapsed();
    ensure(
        (expected - 80.0).abs() < 1e-12 && (mean - expected).abs() <= 3.0 * se && elapsed < SIM_BUDGET,
        format!(
            "mean {mean:.3} vs {expected} over {n} intervals, |diff| {:.3} <= 3se {:.3}, {:.2} s",
            (mean - expected).abs(),
            3.0 * se,
            elapsed.as_secs_f64()
        ),
    )
}

/// Test MAEs of the grid rows the trend criteria need, keyed by
/// (scenario id, mode, seed).
struct TrendRuns {
    reports: BTreeMap<(String, FeatureMode, u64), RunReport>,
}

impl TrendRuns {
    fn compute() -> Result<Self, String> {
        let cfg = AppConfig::default();
        let road = synthesize_road_series(cfg.days, ROAD_SEED).map_err(|e| e.to_string())?;
        let base = cfg.experiment(FeatureMode::NetRoad, 0).map_err(|e| e.to_string())?;
        let wanted = |s: &v2x_loadcast::ExperimentSpec| match s.scenario_id.as_str() {
            "r1.5-l1-h0.5" => true,
            "r1.5-l1-h1" | "r1.5-l1-h0" | "r6-l1-h0.5" => s.mode == FeatureMode::NetRoad,
            _ => false,
        };
        let specs: Vec<_> = table1_grid(&base, &SEEDS).into_iter().filter(wanted).collect();
        let grid = run_scenario_grid(&specs, &road, None).map_err(|e| e.to_string())?;
        if let Some((spec, e)) = grid.failures().next() {
            return Err(format!("{} {} seed {}: {e}", spec.scenario_id, spec.mode, spec.seed));
        }
        let reports = grid
            .reports()
            .map(|r| ((r.scenario_id.clone(), r.mode, r.seed), r.clone()))
            .collect();
        Ok(Self { reports })
    }

    fn get(&self, id: &str, mode: FeatureMode, seed: u64) -> &RunReport {
        &self.reports[&(id.to_string(), mode, seed)]
    }

    fn mae(&self, id: &str, mode: FeatureMode, seed: u64) -> f64 {
        self.get(id, mode, seed).test_mae
    }
}

fn majority(per_seed: &[bool]) -> bool {
    per_seed.iter().filter(|&&b| b).count() >= 2
}

fn ac3_claim(runs: &TrendRuns) -> Check {
    let id = "r1.5-l1-h0.5";
    let mut ok = Vec::new();
    let mut parts = Vec::new();
    let mut slowest = 0u64;
    for seed in SEEDS {
        let net = runs.get(id, FeatureMode::Net, seed);
        let road = runs.get(id, FeatureMode::NetRoad, seed);
        slowest = slowest.max(net.wall_ms).max(road.wall_ms);
        let ratio = road.test_mae / net.test_mae;
        ok.push(ratio <= CLAIM_RATIO);
        parts.push(format!(
            "seed {seed}: Net {:.4} Net&Road {:.4} ratio {ratio:.3} (persistence {:.4})",
            net.test_mae, road.test_mae, road.naive_test_mae
        ));
    }
    let within_budget = Duration::from_millis(slowest) < RUN_BUDGET;
    ensure(
        majority(&ok) && within_budget,
        format!("{}; slowest run {:.1} s", parts.join("; "), slowest as f64 / 1000.0),
    )
}

fn ac4_handover(runs: &TrendRuns) -> Check {
    let mut ok = Vec::new();
    let mut parts = Vec::new();
    for seed in SEEDS {
        let hi = runs.mae("r1.5-l1-h1", FeatureMode::NetRoad, seed);
        let lo = runs.mae("r1.5-l1-h0", FeatureMode::NetRoad, seed);
        ok.push(hi < lo);
        parts.push(format!("seed {seed}: h=1 {hi:.4} vs h=0 {lo:.4}"));
    }
    ensure(majority(&ok), parts.join("; "))
}

fn ac5_range(runs: &TrendRuns) -> Check {
    let mut ok = Vec::new();
    let mut parts = Vec::new();
    for seed in SEEDS {
        let wide = runs.mae("r6-l1-h0.5", FeatureMode::NetRoad, seed);
        let narrow = runs.mae("r1.5-l1-h0.5", FeatureMode::NetRoad, seed);
        ok.push(wide <= narrow);
        parts.push(format!("seed {seed}: 6 mi {wide:.4} vs 1.5 mi {narrow:.4}"));
    }
    ensure(majority(&ok), parts.join("; "))
}

fn ac6_metrics() -> Check {
    let cases: [(&str, f64, f64); 6] = [
        ("mse identity", loss_mse(&[1.5, -2.0], &[1.5, -2.0]).unwrap(), 0.0),
        ("mse [0,0] vs [1,3]", loss_mse(&[0.0, 0.0], &[1.0, 3.0]).unwrap(), 5.0),
        ("mse (2,5)", loss_mse(&[2.0], &[5.0]).unwrap(), 9.0),
        ("mae identity", metric_mae(&[1.5, -2.0], &[1.5, -2.0]).unwrap(), 0.0),
        ("mae [0,0] vs [1,3]", metric_mae(&[0.0, 0.0], &[1.0, 3.0]).unwrap(), 2.0),
        ("mae swapped", metric_mae(&[1.0, 3.0], &[0.0, 0.0]).unwrap(), 2.0),
    ];
    let wrong: Vec<String> = cases
        .iter()
        .filter(|(_, got, want)| got != want)
        .map(|(name, got, want)| format!("{name}: {got} != {want}"))
        .collect();
    let empty_rejected = loss_mse::<f64>(&[], &[]).is_err() && metric_mae::<f64>(&[], &[]).is_err();
    ensure(
        wrong.is_empty() && empty_rejected,
        if wrong.is_empty() {
            format!("{} hand-computed values exact, empty batch rejected: {empty_rejected}", cases.len())
        } else {
            wrong.join("; ")
        },
    )
}

fn ac7_hygiene() -> Check {
    let road = synthesize_road_series(20, ROAD_SEED).map_err(|e| e.to_string())?;
    let cfg = AppConfig {
        hidden: 4,
        max_epochs: 1,
        ..AppConfig::default()
    };
    let spec = cfg.experiment(FeatureMode::NetRoad, 7).map_err(|e| e.to_string())?;
    let report = run_experiment(&spec, &road).map_err(|e| e.to_string())?;

    // independent train-only recomputation
    let sim = ScenarioConfig {
        seed: spec.simulation_seed(),
        ..spec.scenario.clone()
    };
    let calls = simulate_calls(&road, &sim).map_err(|e| e.to_string())?;
    let raw = raw_samples(&road, &calls, SpeedEncoding::Level).map_err(|e| e.to_string())?;
    let plan = spec.split.plan(road.days(), road.points_per_day()).map_err(|e| e.to_string())?;
    let train_stats = fit_normalizer(&raw[plan.train.clone()]).map_err(|e| e.to_string())?;
    let val_stats = fit_normalizer(&raw[plan.val.clone()]).map_err(|e| e.to_string())?;
    let test_stats = fit_normalizer(&raw[plan.test.clone()]).map_err(|e| e.to_string())?;
    let leakage_ok = report.norm_checksum == train_stats.checksum()
        && val_stats.checksum() != train_stats.checksum()
        && test_stats.checksum() != train_stats.checksum();

    let mut worst = 0.0f64;
    for x in &raw {
        let back = train_stats.inverse_transform(&train_stats.transform(x));
        for k in 0..3 {
            worst = worst.max((back[k] - x[k]).abs() / x[k].abs().max(1.0));
        }
    }

    let probes = [0.0, 19.99, 20.0, 33.0, 40.0, 59.99, 60.0, 100.0];
    let pinned = [1u8, 1, 2, 3, 5, 7, 8, 8];
    let levels: Vec<u8> = probes.iter().map(|&s| discretize_speed(s)).collect();

    ensure(
        worst < ROUNDTRIP_TOLERANCE && leakage_ok && levels == pinned,
        format!(
            "round-trip max rel error {worst:.1e} over {} samples; stats checksum {:016x} matches train-only refit: {leakage_ok}; probe levels {levels:?}",
            raw.len(),
            report.norm_checksum
        ),
    )
}

fn ac8_determinism() -> Check {
    let dir = tempfile::TempDir::new().map_err(|e| e.to_string())?;
    let cfg_path = dir.path().join("run.toml");
    std::fs::write(&cfg_path, "days = 5\nhidden = 4\nmax_epochs = 2\nseeds = [5, 6]\n").map_err(|e| e.to_string())?;
    let mut csvs = Vec::new();
    for name in ["first", "second"] {
        let out = dir.path().join(name);
        let argv = [
            "v2x-loadcast",
            "run",
            "--config",
            cfg_path.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ];
        let (mut stdout, mut stderr) = (Vec::new(), Vec::new());
        let code = dispatch_to(argv, &mut stdout, &mut stderr);
        if code != 0 {
            return Err(format!("run exited {code}: {}", String::from_utf8_lossy(&stderr)));
        }
        csvs.push(std::fs::read(out.join("metrics.csv")).map_err(|e| e.to_string())?);
    }
    let rows = String::from_utf8_lossy(&csvs[0]).lines().count() - 1;
    ensure(
        csvs[0] == csvs[1] && rows == 4,
        format!("two runs, {rows} metric rows, {} bytes, identical: {}", csvs[0].len(), csvs[0] == csvs[1]),
    )
}

fn guarded(f: impl FnOnce() -> Check) -> Check {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    }
}

fn main() {
    let mut results: Vec<(&str, &str, Check)> = vec![
        ("AC1", "gradient correctness", guarded(ac1_gradients)),
        ("AC2", "simulator statistics", guarded(ac2_simulator)),
    ];
    let trend = catch_unwind(TrendRuns::compute).unwrap_or_else(|_| Err("trend runs panicked".into()));
    match &trend {
        Ok(runs) => {
            results.push(("AC3", "Net&Road vs Net", guarded(|| ac3_claim(runs))));
            results.push(("AC4", "handover trend", guarded(|| ac4_handover(runs))));
            results.push(("AC5", "range trend", guarded(|| ac5_range(runs))));
        }
        Err(e) => {
            for (id, title) in [("AC3", "Net&Road vs Net"), ("AC4", "handover trend"), ("AC5", "range trend")] {
                results.push((id, title, Err(format!("training failed: {e}"))));
            }
        }
    }
    results.push(("AC6", "metric units", guarded(ac6_metrics)));
    results.push(("AC7", "pipeline hygiene", guarded(ac7_hygiene)));
    results.push(("AC8", "determinism", guarded(ac8_determinism)));

    println!();
    let mut failed = 0;
    for (id, title, r) in &results {
        let (tag, detail) = match r {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{id} {tag} {title}: {detail}");
    }
    println!("\nacceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

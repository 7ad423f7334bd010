use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_v2x-loadcast"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

const SMALL: &str = "days = 5\nhidden = 3\nmax_epochs = 2\nbatch_size = 64\nseeds = [1]\n";

fn write_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, format!("{SMALL}{extra}")).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn help_exits_zero() {
    let out = run(&["--help"]);
    assert!(out.status.success());
    let usage = text(&out.stdout);
    for sub in ["ingest", "simulate", "run", "grid", "gradcheck", "report"] {
        assert!(usage.contains(sub), "{usage}");
    }
}

#[test]
fn unknown_key_is_reported() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "lamda = 0.2\n").unwrap();
    let out = run(&["run", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    let line: serde_json::Value = serde_json::from_str(text(&out.stderr).trim()).unwrap();
    assert_eq!(line["error"]["module"], "config");
    assert_eq!(line["error"]["kind"], "ConfigError");
    assert!(line["error"]["message"].as_str().unwrap().contains("lamda"));
}

#[test]
fn bad_flag_is_usage_error() {
    let out = run(&["run", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("UsageError"));
}

#[test]
fn gradcheck_reports_and_passes() {
    let out = run(&["gradcheck", "--seeds", "20"]);
    assert!(out.status.success(), "{}", text(&out.stdout));
    let s = text(&out.stdout);
    assert!(s.contains("max relative error"));
    assert!(s.contains("result: PASS"));
}

#[test]
fn gradcheck_fails_with_coarse_step() {
    let out = run(&["gradcheck", "--seeds", "4", "--step", "0.5", "--tolerance", "1e-9"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stdout).contains("result: FAIL"));
}

#[test]
fn run_is_byte_reproducible() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let dump = dir.path().join("dump.toml");
    let out = run(&["run", "--config", &cfg, "--out", a.to_str().unwrap(), "--dump-config", dump.to_str().unwrap()]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    // the dumped config alone reproduces the run
    let out = run(&["run", "--config", dump.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let ma = fs::read(a.join("metrics.csv")).unwrap();
    assert_eq!(ma, fs::read(b.join("metrics.csv")).unwrap());
    assert_eq!(text(&ma).lines().count(), 3);
    assert!(a.join("runs").join("r1.5-lambda0.2-h0.5_netroad_1.json").exists());
    assert!(a.join("comparison.txt").exists());
}

#[test]
fn grid_independent_of_thread_count() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "");
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let out_dir = dir.path().join(format!("grid{threads}"));
        let out = bin()
            .args(["grid", "--config", &cfg, "--max-epochs", "1", "--out", out_dir.to_str().unwrap()])
            .env("V2X_LOADCAST_THREADS", threads)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", text(&out.stderr));
        outputs.push(fs::read(out_dir.join("metrics.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(text(&outputs[0]).lines().count(), 15);
}

#[test]
fn synth_simulate_report_pipeline() {
    let dir = TempDir::new().unwrap();
    let road = dir.path().join("road.csv");
    let sim = dir.path().join("sim.csv");
    let corr = dir.path().join("corr.csv");
    assert!(run(&["synth", "--days", "2", "--seed", "4", "--out", road.to_str().unwrap()]).status.success());

    let out = run(&["ingest", "--input", road.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(text(&out.stdout).contains("records: 576"));

    let args = ["simulate", "--road", road.to_str().unwrap(), "--lambda", "0.2", "--h", "0.5", "--range", "1.5"];
    let out = bin().args(args).args(["--seed", "8", "--out", sim.to_str().unwrap()]).output().unwrap();
    assert!(out.status.success(), "{}", text(&out.stderr));
    let csv = fs::read_to_string(&sim).unwrap();
    assert!(csv.starts_with("timestamp,flow,speed,calls\n"));
    assert_eq!(csv.lines().count(), 577);

    let out = run(&["report", "--input", sim.to_str().unwrap(), "--out", corr.to_str().unwrap()]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let table = fs::read_to_string(&corr).unwrap();
    assert!(table.starts_with("variable,flow,speed,calls\n"), "{table}");
}

#[test]
fn gap_error_is_machine_readable() {
    let dir = TempDir::new().unwrap();
    let road = dir.path().join("road.csv");
    let mut lines: Vec<String> = (0..288).map(|i| format!("{},50,60", 1_616_976_000 + i * 300)).collect();
    lines.remove(12);
    fs::write(&road, format!("timestamp,flow,speed\n{}\n", lines.join("\n"))).unwrap();
    let out = run(&["ingest", "--input", road.to_str().unwrap()]);
    assert!(!out.status.success());
    let line: serde_json::Value = serde_json::from_str(text(&out.stderr).trim()).unwrap();
    assert_eq!(line["error"]["module"], "road_ingest");
    assert_eq!(line["error"]["kind"], "GapError");

    let out = run(&["ingest", "--input", road.to_str().unwrap(), "--impute=hold"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("imputed: 1"));
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_v2g-sim")).args(args).env_remove("V2G_SIM_CONFIG").output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A config with a short year so commands that age the fleet stay quick.
fn short_year_config(dir: &Path, days: usize) -> std::path::PathBuf {
    let path = dir.join("short.toml");
    fs::write(&path, format!("[year]\ndays = {days}\n")).unwrap();
    path
}

fn column_max(path: &Path, name: &str) -> f64 {
    let mut r = csv::Reader::from_path(path).unwrap();
    let i = r.headers().unwrap().iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    r.records().map(|rec| rec.unwrap()[i].parse::<f64>().unwrap()).fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn training_twice_gives_identical_curves() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        ok(&["train", "--episodes", "10", "--fleet-size", "5", "--seed", "1", "--out", p(dir)]);
    }
    let curve = fs::read(a.join("learning_curve.csv")).unwrap();
    assert_eq!(curve, fs::read(b.join("learning_curve.csv")).unwrap());
    assert_eq!(csv::Reader::from_reader(&curve[..]).records().count(), 10);
    assert!(a.join("checkpoint.json").exists());

    let snapshot = fs::read_to_string(a.join("config.toml")).unwrap();
    let table: toml::Table = snapshot.parse().unwrap();
    assert!(table["paths"].as_table().unwrap().get("out").is_none());
    assert_eq!(table["ppo"]["episodes"].as_integer(), Some(10));
    assert_eq!(table["fleet"]["size"].as_integer(), Some(5));
}

#[test]
fn uncontrolled_charging_raises_the_peak() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = short_year_config(tmp.path(), 2);
    let out = tmp.path().join("bl1");
    ok(&["evaluate", "--baseline", "bl1", "--config", p(&cfg), "--out", p(&out)]);
    let load = out.join("load.csv");
    let mut r = csv::Reader::from_path(&load).unwrap();
    let headers: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
    let grid = headers.iter().position(|h| h == "grid_kw").unwrap();
    let base = headers.iter().position(|h| h == "baseload_kw").unwrap();
    let (mut grid_max, mut base_max) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for rec in r.records() {
        let rec = rec.unwrap();
        grid_max = grid_max.max(rec[grid].parse().unwrap());
        base_max = base_max.max(rec[base].parse().unwrap());
    }
    assert!(grid_max > base_max, "grid peak {grid_max} vs baseload peak {base_max}");
    let indices: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("indices.json")).unwrap()).unwrap();
    assert_eq!(indices["strategy"], "bl1");

    // The evaluated schedule feeds the allocator.
    let alloc = tmp.path().join("alloc");
    ok(&["allocate", "--schedule", p(&out.join("schedule.csv")), "--config", p(&cfg), "--out", p(&alloc)]);
    for f in ["trace.csv", "settlement.csv", "allocation.json"] {
        assert!(alloc.join(f).exists(), "{f}");
    }
    assert!(column_max(&alloc.join("trace.csv"), "soc_after") <= 1.0);
}

#[test]
fn report_writes_seven_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = short_year_config(tmp.path(), 3);
    let run_dir = tmp.path().join("run");
    ok(&["train", "--episodes", "4", "--fleet-size", "6", "--config", p(&cfg), "--out", p(&run_dir)]);
    ok(&["report", "--run", p(&run_dir)]);
    let mut files: Vec<String> =
        fs::read_dir(run_dir.join("report")).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    files.sort();
    assert_eq!(files, ["costs.csv", "indices.csv", "load.csv", "power_sop.csv", "soc_dist.csv", "soh_year.csv", "summary.json"]);
    // The learned policy leads, followed by the four baselines.
    let indices = csv::Reader::from_path(run_dir.join("report/indices.csv")).unwrap().records().count();
    assert_eq!(indices, 5);
}

#[test]
fn exit_codes_follow_error_category() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    let missing = tmp.path().join("missing.json");
    assert_eq!(run(&["evaluate", "--checkpoint", p(&missing), "--out", p(&out)]).status.code(), Some(3));

    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "[ppo]\nlearning_rate = 0.1\n").unwrap();
    assert_eq!(run(&["train", "--config", p(&bad), "--out", p(&out)]).status.code(), Some(2));

    assert_eq!(run(&["train", "--fleet-size", "many"]).status.code(), Some(2));
    assert_eq!(run(&["evaluate", "--baseline", "bl9"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn gen_profiles_writes_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("gen");
    ok(&["gen-profiles", "--fleet-size", "12", "--seed", "4", "--out", p(&out)]);
    let profiles = csv::Reader::from_path(out.join("profiles.csv")).unwrap().records().count();
    let fleet = csv::Reader::from_path(out.join("fleet.csv")).unwrap().records().count();
    assert_eq!((profiles, fleet), (24, 12));
}

#[test]
fn simulate_year_reports_each_day() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = short_year_config(tmp.path(), 5);
    let out = tmp.path().join("year");
    ok(&["simulate-year", "--baseline", "bl3", "--fleet-size", "10", "--config", p(&cfg), "--out", p(&out)]);
    let mut r = csv::Reader::from_path(out.join("soh_year.csv")).unwrap();
    let soh: Vec<f64> = r.records().map(|rec| rec.unwrap()[1].parse().unwrap()).collect();
    assert_eq!(soh.len(), 6);
    assert!(soh.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(csv::Reader::from_path(out.join("soh_final.csv")).unwrap().records().count(), 10);
}

//! End-to-end runs of the `hjm` binary against copies of the fixtures.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;
use tempfile::TempDir;

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");

/// Small enough that a full pipeline takes a few seconds.
const FAST_CONFIG: &str = r#"
seed = 5
quotes = "quotes.csv"
out = "out"
n_paths = 100
horizon_days = 15
short_horizon_days = 10
short_horizon_paths = 100
spot_days = 20
swing = "swing.toml"
storage = "storage.toml"
"#;

fn workspace(config: &str) -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    for name in ["quotes.csv", "swing.toml", "storage.toml", "vpp.toml"] {
        fs::copy(Path::new(FIXTURES).join(name), dir.path().join(name)).unwrap();
    }
    fs::write(dir.path().join("run.toml"), config).unwrap();
    dir
}

fn hjm(dir: &Path, args: &[&str]) -> i32 {
    let config = dir.join("run.toml");
    let out = Command::new(env!("CARGO_BIN_EXE_hjm"))
        .args(args)
        .arg("--config")
        .arg(&config)
        .env("RUST_LOG", "error")
        .output()
        .unwrap();
    out.status.code().expect("terminated by signal")
}

fn read_json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn csv_rows(path: PathBuf) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(Result::unwrap).collect()
}

fn output_files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = match fs::read_dir(dir) {
        Ok(entries) => entries.map(|e| e.unwrap().file_name().into_string().unwrap()).collect(),
        Err(_) => Vec::new(),
    };
    names.sort();
    names
}

#[test]
fn empty_quotes_file_fails_without_outputs() {
    let dir = workspace(FAST_CONFIG);
    fs::write(dir.path().join("quotes.csv"), "trading_date,market,delivery_start,delivery_end,price\n").unwrap();
    assert_eq!(hjm(dir.path(), &["ingest"]), 1);
    assert!(output_files(&dir.path().join("out")).is_empty());
}

#[test]
fn bad_row_is_reported_and_panel_still_built() {
    let dir = workspace(FAST_CONFIG);
    let path = dir.path().join("quotes.csv");
    let mut text = fs::read_to_string(&path).unwrap();
    let rows = text.lines().count() - 1;
    text.push_str("2020-06-01,DE,2020-07-01,2020-07-31,not-a-price\n");
    fs::write(&path, text).unwrap();

    assert_eq!(hjm(dir.path(), &["ingest"]), 0);
    let report = read_json(dir.path().join("out/ingest_report.json"));
    let rejected = report["rejected"].as_array().unwrap();
    assert_eq!(rejected.len(), 1);
    assert_eq!(rejected[0]["row"].as_u64().unwrap() as usize, rows + 1);
    assert_eq!(report["accepted_rows"].as_u64().unwrap() as usize, rows);
    assert!(!csv_rows(dir.path().join("out/panel_DE.csv")).is_empty());
}

#[test]
fn unit_threshold_keeps_every_positive_eigenvalue() {
    let dir = workspace(FAST_CONFIG);
    assert_eq!(hjm(dir.path(), &["ingest"]), 0);
    assert_eq!(hjm(dir.path(), &["calibrate", "--threshold", "1.0"]), 0);
    let model = read_json(dir.path().join("out/model.json"));
    let eig: Vec<f64> = model["eigenvalues"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let rank = eig.iter().filter(|&&l| l > eig[0] * 1e-12).count();
    assert_eq!(model["n_factors"].as_u64().unwrap() as usize, rank);
    assert_eq!(model["sigma_star"][0].as_array().unwrap().len(), rank);
}

#[test]
fn fixed_factor_count_overrides_threshold() {
    let dir = workspace(FAST_CONFIG);
    assert_eq!(hjm(dir.path(), &["ingest"]), 0);
    assert_eq!(hjm(dir.path(), &["calibrate", "--factors", "2"]), 0);
    let model = read_json(dir.path().join("out/model.json"));
    assert_eq!(model["n_factors"].as_u64(), Some(2));
}

#[test]
fn zero_volatility_model_gives_constant_paths() {
    let dir = workspace(&format!("{FAST_CONFIG}export_paths = true\n"));
    for stage in ["ingest", "curve", "calibrate"] {
        assert_eq!(hjm(dir.path(), &[stage]), 0, "{stage}");
    }
    let model_path = dir.path().join("out/model.json");
    let mut model = read_json(model_path.clone());
    for row in model["sigma_star"].as_array_mut().unwrap() {
        for v in row.as_array_mut().unwrap() {
            *v = Value::from(0.0);
        }
    }
    fs::write(&model_path, serde_json::to_string(&model).unwrap()).unwrap();

    assert_eq!(hjm(dir.path(), &["simulate"]), 0);
    let sanity = csv_rows(dir.path().join("out/sanity.csv"));
    assert!(!sanity.is_empty());
    for r in &sanity {
        assert_eq!(r[2].parse::<f64>().unwrap(), 0.0, "empirical variance");
        assert_eq!(r[3].parse::<f64>().unwrap(), 0.0, "model variance");
        assert_eq!(r[6].parse::<f64>().unwrap(), 0.0, "z-score");
    }
    for r in csv_rows(dir.path().join("out/fixed_delivery_summary.csv")) {
        let [mean, q05, q95] = [2, 3, 4].map(|i| r[i].parse::<f64>().unwrap());
        assert_eq!(q05, q95, "{r:?}");
        assert!((mean - q05).abs() <= 1e-12 * q05, "{r:?}");
    }
}

#[test]
fn missing_stage_input_is_a_validation_error() {
    let dir = workspace(FAST_CONFIG);
    assert_eq!(hjm(dir.path(), &["calibrate"]), 1);
    assert_eq!(hjm(dir.path(), &["simulate"]), 1);
    assert_eq!(hjm(dir.path(), &["price"]), 1);
}

#[test]
fn invalid_configuration_is_a_validation_error() {
    let unknown = workspace(&format!("{FAST_CONFIG}n_pathz = 3\n"));
    assert_eq!(hjm(unknown.path(), &["ingest"]), 1);

    let no_seed = workspace(&FAST_CONFIG.replace("seed = 5", ""));
    assert_eq!(hjm(no_seed.path(), &["ingest"]), 1);

    let missing_quotes = workspace(&FAST_CONFIG.replace("quotes.csv", "absent.csv"));
    assert_eq!(hjm(missing_quotes.path(), &["ingest"]), 1);

    let status = Command::new(env!("CARGO_BIN_EXE_hjm")).arg("frobnicate").output().unwrap().status;
    assert_eq!(status.code(), Some(1));
}

#[test]
fn sanity_breach_exits_with_numerical_code() {
    let dir = workspace(&format!("{FAST_CONFIG}sanity_z = 1e-6\n"));
    for stage in ["ingest", "curve", "calibrate"] {
        assert_eq!(hjm(dir.path(), &[stage]), 0, "{stage}");
    }
    assert_eq!(hjm(dir.path(), &["simulate"]), 2);
    let report = read_json(dir.path().join("out/simulation_report.json"));
    assert_eq!(report["breach"], Value::Bool(true));
}

#[test]
fn stages_compose_into_the_pipeline() {
    let staged = workspace(FAST_CONFIG);
    for stage in ["ingest", "curve", "calibrate", "simulate", "price"] {
        assert_eq!(hjm(staged.path(), &[stage]), 0, "{stage}");
    }
    let whole = workspace(FAST_CONFIG);
    assert_eq!(hjm(whole.path(), &["pipeline"]), 0);

    let a = output_files(&staged.path().join("out"));
    let b = output_files(&whole.path().join("out"));
    assert_eq!(a, b);
    for name in a.iter().filter(|n| n.as_str() != "timings.csv") {
        let x = fs::read(staged.path().join("out").join(name)).unwrap();
        let y = fs::read(whole.path().join("out").join(name)).unwrap();
        assert!(x == y, "{name} differs between staged and pipeline runs");
    }
    let valuation = read_json(whole.path().join("out/valuation.json"));
    assert!(valuation.get("swing").is_some() && valuation.get("storage").is_some());
}

#[test]
fn command_line_overrides_take_precedence() {
    let dir = workspace(FAST_CONFIG);
    for stage in ["ingest", "curve", "calibrate"] {
        assert_eq!(hjm(dir.path(), &[stage]), 0, "{stage}");
    }
    assert_eq!(hjm(dir.path(), &["simulate", "--paths", "50", "--seed", "9"]), 0);
    let report = read_json(dir.path().join("out/simulation_report.json"));
    assert_eq!(report["n_paths"].as_u64(), Some(50));
    assert_eq!(report["seed"].as_u64(), Some(9));
}

use std::path::Path;
use std::process::{Command, Output};

fn cellfree(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cellfree")).args(args).output().unwrap()
}

fn stdout(output: &Output) -> String {
    assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    String::from_utf8(output.stdout.clone()).unwrap()
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("small.json");
    std::fs::write(&path, r#"{"M": 8, "K": 3, "tau_p": 3, "realizations": 4, "alpha": 2}"#).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn quantizer_table_lists_designs() {
    let text = stdout(&cellfree(&["quantizer-table", "--max-bits", "3"]));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "alpha,step,distortion,gain");
    assert_eq!(lines.len(), 4);
    let row: Vec<f64> = lines[2].split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!(row[0], 2.0);
    assert!((row[1] - 0.9957).abs() < 1e-3);
    assert!((row[3] - 0.88115).abs() < 1e-4);
}

#[test]
fn run_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let out = dir.path().join("out");
    let summary = stdout(&cellfree(&["run", "--config", &config, "--out", out.to_str().unwrap(), "--seed", "9"]));
    let summary: serde_json::Value = serde_json::from_str(&summary).unwrap();
    assert_eq!(summary["schema_version"], 1);
    assert_eq!(summary["config"]["seed"], 9);
    assert_eq!(summary["realizations"], 4);
    let rates = std::fs::read_to_string(out.join("rates.csv")).unwrap();
    assert!(rates.starts_with("realization,user,rate"));
    assert_eq!(rates.lines().count(), 1 + 4 * 3);
    let cdf = std::fs::read_to_string(out.join("cdf.csv")).unwrap();
    assert!(cdf.starts_with("rate,probability\n"));
    assert!(cdf.trim_end().ends_with(",1.0"));
    let on_disk: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(on_disk, summary);
}

#[test]
fn repeated_runs_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let first = stdout(&cellfree(&["run", "--config", &config, "--mode", "baseline", "--case", "1"]));
    let second = stdout(&cellfree(&["run", "--config", &config, "--mode", "baseline", "--case", "1"]));
    assert_eq!(first, second);
    assert!(first.contains("\"mode\": \"baseline\""));
}

#[test]
fn duality_check_passes_on_small_network() {
    let dir = tempfile::tempdir().unwrap();
    let text = stdout(&cellfree(&["duality-check", "--config", &small_config(dir.path())]));
    let summary: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(summary["duality"]["passed"], 4);
}

#[test]
fn assign_emits_csv() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let single = stdout(&cellfree(&["assign", "--config", &config, "--km", "2"]));
    assert_eq!(single.lines().count(), 2);
    assert!(single.starts_with("k_m,alpha2,average_rate,outage_rate\n2,"));
    let sweep = stdout(&cellfree(&["assign", "--config", &config, "--sweep"]));
    let k_values: Vec<&str> = sweep.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(k_values, ["1", "2", "3"]);
}

#[test]
fn bad_input_fails_cleanly() {
    for args in [
        &["run", "--mode", "fastest"][..],
        &["run", "--case", "3"],
        &["run", "--profile", "huge"],
        &["assign"],
        &["quantizer-table", "--max-bits", "0"],
    ] {
        let output = cellfree(args);
        assert!(!output.status.success(), "{args:?} should fail");
        assert!(!output.stderr.is_empty());
    }
    let output = cellfree(&["run", "--config", "/nonexistent/config.json"]);
    assert!(String::from_utf8_lossy(&output.stderr).contains("/nonexistent/config.json"));
}

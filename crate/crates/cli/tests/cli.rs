use std::path::Path;
use std::process::Command;

use sdis_cli::{aggregate, read_csv, run_experiment, ExperimentConfig, Format, Method};

fn sdis() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sdis"))
}

fn run_json(dir: &Path, name: &str, extra: &[&str]) -> Vec<u8> {
    let out = dir.join(name);
    let status = sdis()
        .args(["run", "--benchmark", "linear", "--dim", "3", "--reps", "3", "--seed", "42", "--format", "json"])
        .args(extra)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    std::fs::read(out).unwrap()
}

#[test]
fn identical_configs_give_identical_json() {
    let dir = tempfile::tempdir().unwrap();
    let a = run_json(dir.path(), "a.json", &["--threads", "1"]);
    let b = run_json(dir.path(), "b.json", &["--threads", "2"]);
    assert_eq!(a, b);
    let report: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(report["reps"], 3);
    assert_eq!(report["records"][0]["seed"], 42);
    assert_eq!(report["records"][2]["seed"], 44);
}

#[test]
fn csv_reproduces_aggregates() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("runs.csv");
    let cfg = ExperimentConfig {
        benchmark: "linear".into(),
        dim: Some(2),
        method: Method::Sus,
        reps: 5,
        seed: 3,
        format: Format::Csv,
        out: Some(csv_path.clone()),
        ..Default::default()
    };
    let report = run_experiment(&cfg).unwrap();
    sdis_cli::emit_to(&report, &cfg).unwrap();

    let header = std::fs::read_to_string(&csv_path).unwrap();
    assert!(header.starts_with("seed,pf_hat,cov_hat,total_evals,levels,fallback,converged\n"));
    let records = read_csv(&csv_path).unwrap();
    let again = aggregate(
        &records,
        &report.benchmark,
        report.dim,
        report.method,
        report.base_seed,
        report.reference_pf,
        &report.reference_source,
        report.root_histogram.clone(),
    );
    assert_eq!(again, report);
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(
        &cfg,
        "benchmark = \"gamma-sum\"\ndim = 4\nmethod = \"sus\"\nreps = 2\nformat = \"json\"\n[sus]\nn_level = 500\n",
    )
    .unwrap();
    let output = sdis().args(["run", "--config"]).arg(&cfg).args(["--reps", "1"]).output().unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let report: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert_eq!(report["benchmark"], "gamma-sum");
    assert_eq!(report["dim"], 4);
    assert_eq!(report["reps"], 1);
    assert_eq!(report["records"][0]["total_evals"].as_u64().unwrap() % 500, 0);
}

#[test]
fn errors_are_reported_as_json() {
    let output = sdis().args(["run", "--benchmark", "nope"]).output().unwrap();
    assert!(!output.status.success());
    let err: serde_json::Value = serde_json::from_slice(&output.stderr).unwrap();
    assert_eq!(err["error"], "unknown_benchmark");

    let output = sdis().args(["run", "--config", "/nonexistent/exp.toml"]).output().unwrap();
    assert!(!output.status.success());
    let err: serde_json::Value = serde_json::from_slice(&output.stderr).unwrap();
    assert_eq!(err["error"], "io");
    assert!(err["message"].as_str().unwrap().contains("/nonexistent/exp.toml"));

    let output = sdis().args(["run", "--reps", "0"]).output().unwrap();
    assert!(!output.status.success());
}

#[test]
fn bounds_table() {
    let output = sdis().args(["bounds", "--dims", "10,100"]).output().unwrap();
    assert!(output.status.success());
    let text = String::from_utf8(output.stdout).unwrap();
    assert!(text.contains("0.21338") && text.contains("8.35043"));
    assert!(text.contains("5.80471") && text.contains("14.83888"));
}

#[test]
fn table_output_lists_columns() {
    let output = sdis().args(["run", "--benchmark", "linear", "--dim", "2", "--reps", "2"]).output().unwrap();
    assert!(output.status.success());
    let text = String::from_utf8(output.stdout).unwrap();
    for col in ["E(Pf)", "d(Pf)", "E(d)", "E(Nt)", "relEff"] {
        assert!(text.contains(col), "{text}");
    }
}

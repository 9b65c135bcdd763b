//! End-to-end checks of the command-line binary: exit codes, output files and
//! table contents.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use biased_qkd::postprocess::bits_from_hex;
use biased_qkd::session::RECORDS_CSV_HEADER;
use serde_json::Value;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_biased-qkd"));
    cmd.env_remove("QKD_SEED");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

/// Small session whose diagonal subsets still hold enough records to sample.
const SMALL: [&str; 6] = [
    "--pairs",
    "20000",
    "--epsilon",
    "0.3",
    "--samples",
    "20,20,20,20,20,20",
];

fn run_small(extra: &[&str]) -> Output {
    let mut args = vec!["run"];
    args.extend_from_slice(&SMALL);
    args.extend_from_slice(extra);
    run(&args)
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn passive_run_accepts_and_writes_a_key() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let key = dir.path().join("key.hex");
    let out = run_small(&[
        "--seed",
        "5",
        "--report-out",
        path_str(&report),
        "--key-out",
        path_str(&key),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let json: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["error_report"]["refined_decision"], "accept");
    assert_eq!(json["error_report"]["naive_decision"], "accept");
    let final_len = json["key"]["final_key_length"].as_u64().unwrap() as usize;
    assert!(final_len > 0);

    let hex = fs::read_to_string(&key).unwrap();
    assert_eq!(hex.trim().len(), final_len.div_ceil(8) * 2);
    assert!(bits_from_hex(hex.trim(), final_len).is_ok());
}

#[test]
fn rectilinear_attack_aborts_with_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let key = dir.path().join("key.hex");
    let out = run(&[
        "run",
        "--seed",
        "7",
        "--attack",
        "1,0,0",
        "--report-out",
        path_str(&report),
        "--key-out",
        path_str(&key),
    ]);
    assert_eq!(code(&out), 2);
    let json: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["error_report"]["refined_decision"], "abort");
    assert_eq!(json["error_report"]["naive_decision"], "accept");
    assert!(json["key"].is_null());
    assert!(!key.exists(), "no key may be written on abort");
}

#[test]
fn report_goes_to_stdout_by_default() {
    let out = run_small(&["--seed", "1"]);
    assert_eq!(code(&out), 0);
    let json: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["config"]["n_pairs"], 20000);
    assert_eq!(json["config"]["seed"], 1);
}

#[test]
fn records_csv_has_header_and_one_row_per_pair() {
    let dir = tempfile::tempdir().unwrap();
    let records = dir.path().join("records.csv");
    let out = run(&[
        "run",
        "--pairs",
        "3000",
        "--samples",
        "10,10,10,10,10,10",
        "--epsilon",
        "0.5",
        "--attack",
        "0.2,0.2,0.2",
        "--records-out",
        path_str(&records),
    ]);
    assert!(
        matches!(code(&out), 0 | 2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = fs::read_to_string(&records).unwrap();
    assert_eq!(text.lines().next(), Some(RECORDS_CSV_HEADER));
    let rows = csv_rows(&text);
    assert_eq!(rows.len(), 3000);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r.len(), 8);
        assert_eq!(r[0], i.to_string());
        assert!(["plain", "primed"].contains(&r[1].as_str()));
        assert!(["rect", "diag"].contains(&r[2].as_str()));
        assert!(["0", "1"].contains(&r[3].as_str()));
        assert!(
            r[4] == "passive"
                || ["rect:", "plus:", "minus:"]
                    .iter()
                    .any(|p| r[4].strip_prefix(p).is_some_and(|b| b == "0" || b == "1"))
        );
        assert!(["rect", "plus_theta", "minus_theta"].contains(&r[5].as_str()));
        assert!(["", "e1", "e1p", "e2", "e2p", "e3", "e3p"].contains(&r[7].as_str()));
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for k in 0..2 {
        let records = dir.path().join(format!("r{k}.csv"));
        let report = dir.path().join(format!("j{k}.json"));
        let out = run_small(&[
            "--seed",
            "123",
            "--attack",
            "0.1,0.1,0.1",
            "--records-out",
            path_str(&records),
            "--report-out",
            path_str(&report),
        ]);
        assert!(
            matches!(code(&out), 0 | 2),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        outputs.push((fs::read(records).unwrap(), fs::read(report).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn env_seed_applies_only_without_flag() {
    let from_env = bin()
        .env("QKD_SEED", "77")
        .arg("run")
        .args(SMALL)
        .output()
        .unwrap();
    let from_flag = run_small(&["--seed", "77"]);
    assert_eq!(from_env.stdout, from_flag.stdout);

    let overridden = bin()
        .env("QKD_SEED", "77")
        .arg("run")
        .args(SMALL)
        .args(["--seed", "78"])
        .output()
        .unwrap();
    let json: Value = serde_json::from_slice(&overridden.stdout).unwrap();
    assert_eq!(json["config"]["seed"], 78);
}

#[test]
fn invalid_inputs_exit_with_usage_error() {
    assert_eq!(code(&run(&["run", "--epsilon", "0"])), 1);
    assert_eq!(code(&run(&["run", "--epsilon", "1.5"])), 1);
    assert_eq!(code(&run(&["run", "--alpha-sq", "1.2"])), 1);
    assert_eq!(code(&run(&["run", "--attack", "0.6,0.6,0"])), 1);
    assert_eq!(code(&run(&["run", "--attack", "0.5,0.5"])), 1);
    assert_eq!(code(&run(&["run", "--bogus"])), 1);
    assert_eq!(
        code(&run(&["run", "--pairs", "1000"])),
        1,
        "too few records to sample"
    );
    assert_eq!(
        code(&run(&[
            "sweep",
            "--param",
            "epsilon",
            "--range",
            "0.5:0.1:0.1"
        ])),
        1
    );
    assert_eq!(code(&run(&[])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn zero_epsilon_in_config_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"epsilon": 0.0, "n_pairs": 1000}"#).unwrap();
    let out = run(&["run", "--config", path_str(&cfg)]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("epsilon"));

    fs::write(&cfg, r#"{"epsilon": 0.2, "unknown_key": 1}"#).unwrap();
    assert_eq!(code(&run(&["run", "--config", path_str(&cfg)])), 1);
}

#[test]
fn config_file_values_are_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"epsilon": 0.3, "n_pairs": 20000, "seed": 4, "m_samples": [20, 20, 20, 20, 20, 20]}"#,
    )
    .unwrap();
    let out = run(&["run", "--config", path_str(&cfg), "--epsilon", "0.25"]);
    assert_eq!(code(&out), 0);
    let json: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["config"]["epsilon"], 0.25);
    assert_eq!(json["config"]["n_pairs"], 20000);
    assert_eq!(json["config"]["seed"], 4);
}

#[test]
fn verify_with_too_few_pairs_reports_insufficient_samples() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("verify.csv");
    let out = run(&[
        "verify",
        "--pairs",
        "1000",
        "--alpha-grid",
        "0.8",
        "--policy-grid",
        "1,0,0",
        "--table-out",
        path_str(&table),
    ]);
    assert_eq!(code(&out), 2);
    let text = fs::read_to_string(&table).unwrap();
    assert!(text.contains("insufficient_samples:"), "{text}");
}

#[test]
fn verify_product_state_cell_is_all_zero() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("verify.csv");
    let out = run(&[
        "verify",
        "--pairs",
        "200000",
        "--epsilon",
        "0.3",
        "--alpha-grid",
        "1.0",
        "--policy-grid",
        "0.3333333333,0.3333333333,0.3333333333",
        "--table-out",
        path_str(&table),
    ]);
    assert_eq!(code(&out), 0);
    let text = fs::read_to_string(&table).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    let emp = header.iter().position(|h| *h == "empirical").unwrap();
    let pred = header.iter().position(|h| *h == "predicted").unwrap();
    let rows = csv_rows(&text);
    assert_eq!(rows.len(), 7);
    for r in rows {
        assert_eq!(r[emp].parse::<f64>().unwrap(), 0.0);
        assert_eq!(r[pred].parse::<f64>().unwrap(), 0.0);
    }
}

fn sweep(args: &[&str]) -> (Vec<String>, Vec<Vec<String>>) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    let mut full = vec!["sweep"];
    full.extend_from_slice(args);
    full.extend_from_slice(&["--out", path_str(&path)]);
    let out = run(&full);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&path).unwrap();
    let header = text
        .lines()
        .next()
        .unwrap()
        .split(',')
        .map(str::to_string)
        .collect();
    (header, csv_rows(&text))
}

fn column(header: &[String], rows: &[Vec<String>], name: &str) -> Vec<f64> {
    let i = header.iter().position(|h| h == name).unwrap();
    rows.iter().map(|r| r[i].parse().unwrap()).collect()
}

#[test]
fn epsilon_sweep_lowers_average_but_not_diagonal_rate() {
    let (h, rows) = sweep(&[
        "--param",
        "epsilon",
        "--values",
        "0.5,0.3,0.15",
        "--attack",
        "1,0,0",
        "--seed",
        "3",
    ]);
    assert_eq!(rows.len(), 3);
    let avg = column(&h, &rows, "avg_error_predicted");
    assert!(avg[0] > avg[1] && avg[1] > avg[2]);
    let avg_emp = column(&h, &rows, "avg_error_empirical");
    assert!(avg_emp[0] > avg_emp[2]);
    for e2 in column(&h, &rows, "e2") {
        assert!((e2 - 0.32).abs() < 0.03, "e2 = {e2}");
    }
}

#[test]
fn alpha_sweep_follows_entanglement_strength() {
    let (h, rows) = sweep(&[
        "--param",
        "alpha-sq",
        "--range",
        "0.5:1.0:0.25",
        "--attack",
        "1,0,0",
        "--epsilon",
        "0.3",
    ]);
    let alphas = column(&h, &rows, "value");
    assert_eq!(alphas, vec![0.5, 0.75, 1.0]);
    let e2 = column(&h, &rows, "e2");
    for (a, e) in alphas.iter().zip(&e2) {
        let expected = 2.0 * a * (1.0 - a);
        assert!((e - expected).abs() < 0.03, "alpha²={a}: {e} vs {expected}");
    }
    assert_eq!(e2[2], 0.0);
}

#[test]
fn pairs_sweep_tracks_minimum_epsilon() {
    let (h, rows) = sweep(&[
        "--param",
        "pairs",
        "--values",
        "50000,400000",
        "--epsilon",
        "0.2",
    ]);
    let n = column(&h, &rows, "value");
    let min_eps = column(&h, &rows, "min_epsilon");
    for (n, e) in n.iter().zip(&min_eps) {
        assert!((e - 2.0 * (2.0 * 500.0 / n).sqrt()).abs() < 1e-12);
    }
    let i = h.iter().position(|c| c == "epsilon_sufficient").unwrap();
    assert_eq!(rows[0][i], "false");
    assert_eq!(rows[1][i], "true");
}

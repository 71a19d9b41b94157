use std::fs;
use std::process::{Command, Output};

fn cirboost(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cirboost")).args(args).output().unwrap()
}

fn error_record(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().rev().find(|l| l.starts_with('{')).expect("no json on stderr");
    serde_json::from_str(line).unwrap()
}

#[test]
fn oracle_check_succeeds() {
    let out = cirboost(&["oracle-check"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v.is_object());
}

#[test]
fn bad_flag_value_gives_json_error() {
    let out = cirboost(&["converge", "--n", "1", "--samples", "100"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_record(&out)["error"]["kind"], "config");
}

#[test]
fn unknown_scheme_gives_json_error() {
    let out = cirboost(&["price", "--scheme", "euler-maruyama"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_record(&out)["error"]["kind"], "config");
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    fs::write(&path, "samples = 100\nsamplez = 3\n").unwrap();
    let out = cirboost(&["price", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_record(&out)["error"]["kind"], "config");
}

#[test]
fn config_file_and_flags_produce_csv_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    let csv = dir.path().join("price.csv");
    fs::write(
        &cfg,
        "preset = \"cir-mild\"\nscheme = [\"nv\"]\norder = [1, 2]\nn = [2, 3]\nsamples = 2000\nseed = 9\nworkers = 1\nreproducible = true\n",
    )
    .unwrap();
    // the flag overrides the file
    let out = cirboost(&["price", "--config", cfg.to_str().unwrap(), "--seed", "11", "--out", csv.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let text = fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("n,order,estimate,se,reference,bias,rel_bias,samples,seconds,seed"));
    let rows: Vec<_> = lines.collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.ends_with(",11")), "{rows:?}");

    let side: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(csv.with_extension("json")).unwrap()).unwrap();
    assert_eq!(side["config"]["seed"], 11);
    assert_eq!(side["config"]["samples"], 2000);
    assert!(side.get("git_revision").is_some());
    assert!(side["timestamp"].is_string());
}

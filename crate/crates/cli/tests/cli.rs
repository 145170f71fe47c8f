use std::path::Path;
use std::process::{Command, Output};

fn scil(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scil"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn prints_each_default_config() {
    for name in ["blob", "sea", "vib"] {
        let out = scil(&["print-default-config", name]);
        assert!(out.status.success(), "{name}");
        let text = stdout(&out);
        assert!(text.contains(&format!("name = \"{name}\"")));
        assert!(text.contains("[engine]"));
    }
}

#[test]
fn unknown_dataset_is_a_config_error() {
    let out = scil(&["print-default-config", "nope"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown dataset"));
}

#[test]
fn generate_then_diff() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let c = dir.path().join("c.csv");
    for (path, seed) in [(&a, "4"), (&b, "4"), (&c, "5")] {
        let out = scil(&["generate", "--dataset", "vib", "--seed", seed, "--length", "500", "-o", arg(path)]);
        assert!(out.status.success());
    }
    let lines = std::fs::read_to_string(&a).unwrap().lines().count();
    assert_eq!(lines, 501);

    let same = scil(&["diff", arg(&a), arg(&b)]);
    assert_eq!(same.status.code(), Some(0));
    let differ = scil(&["diff", arg(&a), arg(&c)]);
    assert_eq!(differ.status.code(), Some(1));
}

#[test]
fn diff_of_a_missing_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    let out = scil(&["diff", arg(&missing), arg(&missing)]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn runs_a_short_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let config = stdout(&scil(&["print-default-config", "sea"])).replace("length = 15000", "length = 4000");
    let path = dir.path().join("sea.toml");
    std::fs::write(&path, config).unwrap();
    let out_dir = dir.path().join("out");
    let out = scil(&["run", arg(&path), "--runs", "1", "--out", arg(&out_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(summary["name"], "sea");
    assert!(out_dir.join("sea/summary.json").exists());
    assert!(out_dir.join("sea/1/steps.csv").exists());
}

#[test]
fn malformed_config_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "name = [").unwrap();
    let out = scil(&["run", arg(&path)]);
    assert_eq!(out.status.code(), Some(2));
}

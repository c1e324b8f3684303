use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn golden() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/golden.toml")
}

fn demix(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_demix"))
        .args(args)
        .env_remove("DEMIX_MAX_DIM")
        .output()
        .expect("spawn demix")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Golden scenario with extra top-level lines prepended.
fn variant(dir: &Path, prefix: &str, tail: &str) -> PathBuf {
    let text = std::fs::read_to_string(golden()).unwrap();
    let path = dir.join("variant.toml");
    std::fs::write(&path, format!("{prefix}\n{text}\n{tail}\n")).unwrap();
    path
}

#[test]
fn list_checks_prints_catalogue() {
    let out = demix(&["list-checks"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    for c in demix::harness::CHECKS {
        assert!(text.contains(c.name), "missing {}", c.name);
    }
}

#[test]
fn validate_reports_dimension() {
    let out = demix(&["validate", golden().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("dimension 49"));
}

#[test]
fn syntax_error_is_config_error_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "name = \"x\"\nseed = \n").unwrap();
    let out = demix(&["validate", path.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));
}

#[test]
fn unknown_key_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = variant(dir.path(), "bogus = 1", "");
    let out = demix(&["validate", path.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("bogus"), "{}", stderr(&out));
}

#[test]
fn env_cap_rejects_large_scenarios() {
    let out = Command::new(env!("CARGO_BIN_EXE_demix"))
        .args(["validate", golden().to_str().unwrap()])
        .env("DEMIX_MAX_DIM", "10")
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("dimension"));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(code(&demix(&["run", golden().to_str().unwrap()])), 2);
    assert_eq!(code(&demix(&["frobnicate"])), 2);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(
        code(&demix(&[
            "run",
            golden().to_str().unwrap(),
            "--out",
            out,
            "--format",
            "xml"
        ])),
        2
    );
    assert_eq!(code(&demix(&["run", "missing.toml", "--out", out])), 2);
}

#[test]
fn run_writes_outputs_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = demix(&["run", golden().to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}{}", stdout(&out), stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("runtime"));
    assert!(!text.contains("FAIL"));
    for file in ["manifest.json", "microsystem.csv", "expectations.csv", "lindblad.csv"] {
        assert!(dir.path().join(file).exists(), "{file}");
    }
}

#[test]
fn format_selects_files() {
    let dir = tempfile::tempdir().unwrap();
    let s = golden();
    let summary = dir.path().join("summary");
    let table = dir.path().join("table");
    assert_eq!(
        code(&demix(&[
            "run",
            s.to_str().unwrap(),
            "--out",
            summary.to_str().unwrap(),
            "--format",
            "summary"
        ])),
        0
    );
    assert_eq!(
        code(&demix(&[
            "run",
            s.to_str().unwrap(),
            "--out",
            table.to_str().unwrap(),
            "--format",
            "table"
        ])),
        0
    );
    assert!(summary.join("manifest.json").exists());
    assert!(!summary.join("microsystem.csv").exists());
    assert!(table.join("microsystem.csv").exists());
    assert!(!table.join("manifest.json").exists());
}

#[test]
fn seed_flag_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let out = demix(&[
        "run",
        golden().to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--seed",
        "99",
        "--format",
        "summary",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(json["seed"], 99);
}

#[test]
fn failed_check_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = variant(dir.path(), "", "[tolerances]\n\"micro.heisenberg\" = 1e-300");
    let out = demix(&[
        "run",
        path.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
    assert!(stdout(&out).contains("FAIL"));
    assert!(stderr(&out).contains("micro.heisenberg"));
}

#[test]
fn stage_failure_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(golden())
        .unwrap()
        .replace("energy = 1.2", "energy = 0.01");
    let path = dir.path().join("stage.toml");
    std::fs::write(&path, text).unwrap();
    let out = demix(&[
        "run",
        path.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("stage"), "{}", stderr(&out));
}

use std::path::Path;
use std::process::{Command, Output};

const PEAKING: &str = r#"name = "small_peaking"
tier = "exact"
pipeline = "peaking"
seed = 4

lattice.sites = 6

state.a.kind = "gaussian"
state.a.center = 2.0
state.a.width = 1.2

observable.kind = "number"
observable.start = 0
observable.len = 3

peaking.particles = [1, 2, 3, 4]
"#;

fn decohist(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_decohist"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn passing_run_exits_zero_and_writes_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "ok.cfg",
        &format!("{PEAKING}checks.slope = -1.0\nchecks.slope_tolerance = 0.02\n"),
    );
    let out = tmp.path().join("out");
    let o = decohist(&["run", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.lines().any(|l| l.starts_with("PASS slope_N")));
    for f in [
        "peaking.csv",
        "invariants.csv",
        "config.materialized.cfg",
        "summary.txt",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let peaking = std::fs::read_to_string(out.join("peaking.csv")).unwrap();
    assert!(peaking.starts_with("particles,mean,variance,ratio\n"));
}

#[test]
fn failing_invariant_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "bad.cfg",
        &format!("{PEAKING}checks.slope = 2.0\nchecks.slope_tolerance = 0.01\n"),
    );
    let out = tmp.path().join("out");
    let o = decohist(&["run", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL slope_N"));
    let inv = std::fs::read_to_string(out.join("invariants.csv")).unwrap();
    assert!(inv.contains(",FAIL\n"));
}

#[test]
fn config_and_usage_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "typo.cfg",
        &format!("{PEAKING}lattice.sitez = 3\n"),
    );
    let o = decohist(&["validate", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("sitez"), "{err}");
    assert!(err.contains("typo.cfg:17"), "{err}");

    let o = decohist(&["run", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(decohist(&["run"]).status.code(), Some(1));
    assert_eq!(decohist(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(
        decohist(&["run", "demo:no_such_demo"]).status.code(),
        Some(1)
    );
    let missing = tmp.path().join("absent.cfg");
    assert_eq!(
        decohist(&["validate", missing.to_str().unwrap()])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(decohist(&["--help"]).status.code(), Some(0));
}

#[test]
fn validate_and_list_demos() {
    let o = decohist(&["list-demos"]);
    assert_eq!(o.status.code(), Some(0));
    let names: Vec<String> = String::from_utf8_lossy(&o.stdout)
        .lines()
        .map(String::from)
        .collect();
    assert!(names.contains(&"exact_conserved".to_string()));
    assert_eq!(names.len(), decohist::harness::DEMOS.len());
    for name in &names {
        let o = decohist(&["validate", &format!("demo:{name}")]);
        assert_eq!(o.status.code(), Some(0), "{name}");
        assert!(String::from_utf8_lossy(&o.stdout).contains("config_hash"));
    }
}

#[test]
fn output_is_independent_of_threads_and_reruns() {
    let tmp = tempfile::tempdir().unwrap();
    let dirs: Vec<_> = [("1", "a"), ("4", "b"), ("4", "c")]
        .iter()
        .map(|(jobs, label)| {
            let dir = tmp.path().join(label);
            let o = decohist(&[
                "run",
                "demo:exact_conserved",
                "--out",
                dir.to_str().unwrap(),
                "--jobs",
                jobs,
            ]);
            assert_eq!(o.status.code(), Some(0));
            read_dir_sorted(&dir)
        })
        .collect();
    assert!(dirs[0].len() >= 5);
    assert_eq!(dirs[0], dirs[1]);
    assert_eq!(dirs[1], dirs[2]);
}

#[test]
fn seed_override_is_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "p.cfg", PEAKING);
    let out = tmp.path().join("out");
    let o = decohist(&[
        "run",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "18446744073709551615",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(out.join("config.materialized.cfg")).unwrap();
    assert!(text.contains("seed = 18446744073709551615\n"), "{text}");
    let summary = std::fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.contains("seed 18446744073709551615"));
}

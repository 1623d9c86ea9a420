use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_formnet"))
}

fn preset() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/sff_meo.cfg")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn formnet")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn write_cfg(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("scenario.cfg");
    fs::write(&p, body).unwrap();
    p
}

#[test]
fn simulate_preset_writes_all_channels() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = run(&[
        "simulate",
        preset().to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let paths: Vec<PathBuf> = stdout(&o).lines().map(PathBuf::from).collect();
    assert_eq!(paths.len(), 3);
    assert!(paths.iter().all(|p| p.exists()));
    assert!(stderr(&o).contains("final max position error"));

    let csv = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header.len(), 1 + 6 * 12);
    for id in 0..6 {
        for ch in ["q", "p", "u", "eq"] {
            for ax in ["x", "y", "z"] {
                let col = format!("agent_{id}_{ch}{ax}");
                assert!(header.contains(&col.as_str()), "missing {col}");
            }
        }
    }
    assert_eq!(lines.count(), 20_001);

    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert!(summary["max_final_error"].as_f64().unwrap() < 1e-3);
    assert_eq!(summary["scenario_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn simulate_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let csv = |name: &str| {
        let out = dir.path().join(name);
        let o = run(&[
            "simulate",
            "--t-end",
            "1",
            "--seed",
            "9",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        fs::read(out.join("trajectory.csv")).unwrap()
    };
    assert_eq!(csv("a"), csv("b"));
}

#[test]
fn zero_step_is_a_config_error() {
    let o = run(&["simulate", "--dt", "0", "--out", "/nonexistent/never"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("dt"), "{}", stderr(&o));
    assert!(stdout(&o).is_empty());
}

#[test]
fn fd_accel_mode_accepted() {
    let dir = tempfile::tempdir().unwrap();
    for mode in ["fd", "fd-accel", "exact"] {
        let o = run(&[
            "simulate",
            "--t-end",
            "0.1",
            "--accel-mode",
            mode,
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{mode}: {}", stderr(&o));
    }
    let o = run(&["simulate", "--accel-mode", "lagged"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn certify_preset_passes() {
    let o = run(&["--config", preset().to_str().unwrap(), "certify"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["certified"], true);
    assert_eq!(v["contractivity"]["certified"], true);
    assert_eq!(v["temporal"]["b_hurwitz"], true);
    assert!((v["contractivity"]["eta"].as_f64().unwrap() - 29.0 / 30.0).abs() < 1e-12);
}

#[test]
fn certify_undamped_fails_both() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        "[gains]\ndamping = { diag = [0.0, 0.0, 0.0] }\n",
    );
    let o = run(&["certify", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["contractivity"]["certified"], false);
    assert_eq!(v["temporal"]["certified"], false);
}

#[test]
fn certify_rejects_singular_stiffness() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        "[gains]\nstiffness = { diag = [30.0, 0.0, 20.0] }\n",
    );
    let o = run(&["certify", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(
        err.contains("gains.stiffness") && err.contains("eigenvalue"),
        "{err}"
    );
}

#[test]
fn non_skew_interconnection_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        "[gains]\ninterconnection = [[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]\n",
    );
    let o = run(&["print-config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Jbar skew-symmetry violated"));
}

#[test]
fn sweep_small_chains() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .args([
            "sweep",
            "--sizes",
            "2,3,4",
            "--out",
            dir.path().to_str().unwrap(),
        ])
        .env("FORMNET_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "N,peak_error,final_error,bound");
    assert_eq!(lines.len(), 4);
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("sweep.json")).unwrap()).unwrap();
    assert_eq!(v["result"]["sas_pass"], true);
}

#[test]
fn sweep_mesh_sizes_syntax() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "sweep",
        "--sizes",
        "3x2;2x2",
        "--t-end",
        "20",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("6,"));
}

#[test]
fn sweep_undamped_reports_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        "[gains]\ndamping = { diag = [0.0, 0.0, 0.0] }\n[sim]\nt_end = 2.0\n",
    );
    let out = dir.path().join("out");
    let o = run(&[
        "sweep",
        cfg.to_str().unwrap(),
        "--sizes",
        "2,3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("not Hurwitz"), "{}", stderr(&o));
}

#[test]
fn sweep_usage_errors() {
    assert_eq!(run(&["sweep", "--sizes", ""]).status.code(), Some(2));
    assert_eq!(run(&["sweep", "--sizes", "2,zero"]).status.code(), Some(2));
    let o = bin()
        .args(["sweep", "--sizes", "2"])
        .env("FORMNET_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn print_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["print-config"]);
    assert!(o.status.success());
    let echoed = stdout(&o);
    let cfg = write_cfg(dir.path(), &echoed);
    let again = run(&[
        "--print-config",
        "--config",
        cfg.to_str().unwrap(),
        "simulate",
    ]);
    assert!(again.status.success());
    assert_eq!(stdout(&again), echoed);

    let minimal = write_cfg(dir.path(), "");
    let o = run(&["print-config", minimal.to_str().unwrap()]);
    assert_eq!(stdout(&o), echoed);
    let bundled = run(&["print-config", preset().to_str().unwrap()]);
    assert_eq!(stdout(&bundled), echoed);
}

#[test]
fn unknown_key_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "[sim]\nhorizon = 3.0\n");
    let o = run(&["print-config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("horizon"), "{}", stderr(&o));
}

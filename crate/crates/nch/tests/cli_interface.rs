//! Black-box tests of the installed binary: exit codes, determinism of the
//! written artifacts, and the file formats a user scripts against.

use std::path::Path;
use std::process::{Command, Output};

fn nch(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nch"))
        .args(args)
        .current_dir(dir)
        .env_remove("NCH_SEED")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &serde_json::Value) -> String {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_vec_pretty(body).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

fn base_config() -> serde_json::Value {
    serde_json::json!({
        "grid": {
            "half_width_x": std::f64::consts::PI,
            "half_width_y": std::f64::consts::PI,
            "nx": 16,
            "ny": 16
        },
        "kernel": {"kind": "gaussian", "sigma": 0.5},
        "epsilon": 0.5,
        "dt": 1e-3,
        "t_end": 1e-2
    })
}

#[test]
fn run_writes_deterministic_diagnostics_and_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let mut body = base_config();
    body["snapshot_every"] = serde_json::json!(5);
    let config = write_config(dir.path(), "c.json", &body);

    let out1 = nch(&["run", "--config", &config, "--out", "a"], dir.path());
    assert!(out1.status.success(), "{}", String::from_utf8_lossy(&out1.stderr));
    assert!(String::from_utf8_lossy(&out1.stdout).contains("completed 10 steps"));
    let out2 = nch(&["run", "--config", &config, "--out", "b"], dir.path());
    assert!(out2.status.success());

    let csv_a = std::fs::read(dir.path().join("a/diagnostics.csv")).unwrap();
    let csv_b = std::fs::read(dir.path().join("b/diagnostics.csv")).unwrap();
    assert_eq!(csv_a, csv_b, "repeat runs must write identical bytes");
    assert!(csv_a.starts_with(b"step,time,energy_total"));

    // Snapshots at steps 0, 5, 10 plus the index that names them.
    let (field, t) = nch::io::read_field(&dir.path().join("a/field_00000010.dat")).unwrap();
    assert_eq!((field.grid().nx(), field.grid().ny()), (16, 16));
    assert_eq!(t, 1e-2);
    let index: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("a/index.json")).unwrap()).unwrap();
    assert_eq!(index["snapshots"].as_array().unwrap().len(), 3);
    assert_eq!(index["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn seed_override_changes_only_seeded_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut body = base_config();
    body["initial"] = serde_json::json!({"kind": "random_uniform", "amplitude": 0.2, "seed": 3});
    let config = write_config(dir.path(), "c.json", &body);

    let run = |out: &str, seed: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_nch"));
        cmd.args(["run", "--config", &config, "--out", out])
            .current_dir(dir.path())
            .env_remove("NCH_SEED");
        if let Some(s) = seed {
            cmd.env("NCH_SEED", s);
        }
        cmd.output().expect("binary runs")
    };
    assert!(run("a", Some("99")).status.success());
    assert!(run("b", Some("99")).status.success());
    assert!(run("c", None).status.success());
    let read = |out: &str| std::fs::read(dir.path().join(out).join("diagnostics.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));

    let bad = run("d", Some("not-a-number"));
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("NCH_SEED"));
}

#[test]
fn config_errors_exit_one_with_context() {
    let dir = tempfile::tempdir().unwrap();
    let mut body = base_config();
    body["epsilon"] = serde_json::json!(1e-3);
    let config = write_config(dir.path(), "c.json", &body);
    let out = nch(&["run", "--config", &config, "--out", "x"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("kernel too wide for epsilon: gamma0="),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let out = nch(&["run", "--config", "missing.json", "--out", "x"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn blow_up_exits_two_and_names_the_step() {
    let dir = tempfile::tempdir().unwrap();
    let mut body = base_config();
    // Explicit cubic of a huge state amplifies until values overflow; the
    // stabilizer is pinned at zero so nothing damps it.
    body["dt"] = serde_json::json!(1.0);
    body["t_end"] = serde_json::json!(8.0);
    body["initial"] =
        serde_json::json!({"kind": "cosine_product", "amplitude": 1e3, "kx": 1, "ky": 1});
    body["stabilizer"] = serde_json::json!({"mode": "fixed", "a": 0.0});
    let config = write_config(dir.path(), "c.json", &body);
    let out = nch(&["run", "--config", &config, "--out", "x"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("blew up at step"),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn converge_writes_reports_for_both_axes() {
    let dir = tempfile::tempdir().unwrap();
    let mut body = base_config();
    body["study"] = serde_json::json!({
        "temporal": {"dts": [4e-3, 2e-3], "t_end": 0.04},
        "spatial": {"grids": [[8, 8], [16, 16]], "dt": 1e-4, "t_end": 1e-3}
    });
    let config = write_config(dir.path(), "c.json", &body);

    let out = nch(
        &["converge", "--config", &config, "--axis", "time", "--out", "t", "--jobs", "2"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("order_hm1"));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("t/report.json")).unwrap()).unwrap();
    assert_eq!(report["axis"], "time");
    assert_eq!(report["levels"].as_array().unwrap().len(), 2);
    assert_eq!(report["config_hash"].as_str().unwrap().len(), 64);
    let csv = std::fs::read_to_string(dir.path().join("t/report.csv")).unwrap();
    assert!(csv.starts_with("level,dt,nx,ny,err_hm1,order_hm1,err_l2l2,order_l2l2"));

    let out = nch(
        &["converge", "--config", &config, "--axis", "space", "--out", "s"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("s/report.json")).unwrap()).unwrap();
    assert_eq!(report["axis"], "space");
    assert_eq!(report["reference"]["nx"], 32);

    // The config carries no spatial section when asked for one: error path.
    let plain = write_config(dir.path(), "plain.json", &base_config());
    let out = nch(
        &["converge", "--config", &plain, "--axis", "time", "--out", "u"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn check_reports_every_property() {
    let dir = tempfile::tempdir().unwrap();
    let out = nch(&["check"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("PASS grid_inner_product_bilinear"));
    assert!(text.contains("PASS stepper_matches_dense_solve"));
    assert!(!text.contains("FAIL"));
    assert!(text.contains("properties passed"));

    let out = nch(&["check", "--nx", "4"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn usage_and_help_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(nch(&["--help"], dir.path()).status.code(), Some(0));
    assert_eq!(nch(&["--version"], dir.path()).status.code(), Some(0));
    assert_eq!(nch(&["run", "--help"], dir.path()).status.code(), Some(0));
    assert_eq!(nch(&[], dir.path()).status.code(), Some(1));
    assert_eq!(nch(&["frobnicate"], dir.path()).status.code(), Some(1));
    assert_eq!(nch(&["run"], dir.path()).status.code(), Some(1));
    assert_eq!(
        nch(&["converge", "--config", "x.json", "--axis", "sideways"], dir.path())
            .status
            .code(),
        Some(1)
    );
}

use std::path::Path;
use std::process::Command;

use serde_json::Value;

fn vefil(args: &[&str], dir: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_vefil"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path).unwrap()
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&read(path)).unwrap()
}

const SMALL: &str = r#"{"sim": {"n": 16, "t_end": 0.2}, "window": [0.1, 0.2]}"#;

#[test]
fn simulate_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "small.json", SMALL);
    let out = vefil(&["simulate", "--preset", "bad-swimmer", "--config", "small.json", "--out", "run"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = tmp.path().join("run");

    let traj = read(run.join("trajectory.csv"));
    let header: Vec<&str> = traj.lines().next().unwrap().split(',').collect();
    assert_eq!(header.len(), 3 + 2 * 16);
    assert_eq!(&header[..4], ["t", "x0", "y0", "theta_1"]);
    assert_eq!(header.last(), Some(&"xi_16"));

    let snaps = read(run.join("snapshots.csv"));
    let mut times: Vec<&str> = snaps.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    times.dedup();
    assert_eq!(times.len(), 10);
    assert_eq!(snaps.lines().count(), 1 + 10 * 17);

    let obs = read(run.join("observables.csv"));
    assert!(obs.starts_with("run_id,name,t,value\n"));
    for name in ["com[0]", "com[1]", "energy", "speed_formula", "periodicity_residual"] {
        assert!(obs.lines().any(|l| l.split(',').nth(1) == Some(name)), "{name}");
    }

    let report = json(run.join("report.json"));
    let dx = report["displacement"][0].as_f64().unwrap();
    assert!(dx < 0.0, "the bad swimmer moves backwards: {dx}");
    let manifest = json(run.join("manifest.json"));
    let sim = &manifest["config"]["sim"];
    assert_eq!(sim["n"], 16);
    assert_eq!(sim["reltol"], 1e-6);
    assert_eq!(sim["boundary_row_mode"], "consistent");
    assert_eq!(sim["curvature_stencil"], "central");
    assert_eq!(manifest["config"]["mode"], "simulate");
}

#[test]
fn manifest_recreates_the_run_bit_for_bit() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "small.json", SMALL);
    let first = vefil(&["simulate", "--preset", "relaxation", "--config", "small.json", "--out", "a"], tmp.path());
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let again = vefil(&["simulate", "--config", "a/manifest.json", "--out", "b"], tmp.path());
    assert!(again.status.success(), "{}", String::from_utf8_lossy(&again.stderr));
    for f in ["trajectory.csv", "observables.csv", "snapshots.csv", "report.json", "manifest.json"] {
        assert_eq!(read(tmp.path().join("a").join(f)), read(tmp.path().join("b").join(f)), "{f}");
    }
}

#[test]
fn sweep_marks_failed_points_and_keeps_the_rest() {
    let tmp = tempfile::tempdir().unwrap();
    write(
        tmp.path(),
        "grid.json",
        r#"{"sim": {"n": 12, "t_end": 0.1}, "window": [0.05, 0.1], "sweep": {"mu": [0, 1], "delta": [0, 1]}}"#,
    );
    let out = vefil(&["sweep", "--config", "grid.json", "--out", "s", "--jobs", "2"], tmp.path());
    assert_eq!(out.status.code(), Some(1), "partial failure exits with 1");
    let mut rdr = csv::Reader::from_path(tmp.path().join("s/sweep.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let status = headers.iter().position(|h| h == "status").unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 4);
    let failed: Vec<(&str, &str)> = rows.iter().filter(|r| &r[status] == "failed").map(|r| (&r[0], &r[1])).collect();
    assert_eq!(failed, vec![("1.0", "0.0")]);
    let manifest = json(tmp.path().join("s/manifest.json"));
    assert_eq!(manifest["metadata"]["failed"], 1);
    assert_eq!(manifest["success"], false);
}

#[test]
fn sweep_is_independent_of_the_worker_count() {
    let tmp = tempfile::tempdir().unwrap();
    write(
        tmp.path(),
        "grid.json",
        r#"{"sim": {"n": 12, "t_end": 0.1}, "window": [0.05, 0.1], "sweep": {"mu": [0, 2], "delta": [1]}}"#,
    );
    for (jobs, dir) in [("1", "one"), ("2", "two")] {
        let out = vefil(&["sweep", "--config", "grid.json", "--out", dir, "--jobs", jobs], tmp.path());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(read(tmp.path().join("one/sweep.csv")), read(tmp.path().join("two/sweep.csv")));
}

#[test]
fn newtonian_sweep_has_one_row() {
    let tmp = tempfile::tempdir().unwrap();
    write(
        tmp.path(),
        "grid.json",
        r#"{"sim": {"n": 12, "t_end": 0.1}, "window": [0.05, 0.1], "sweep": {"mu": [0], "delta": [1]}}"#,
    );
    let out = vefil(&["sweep", "--config", "grid.json", "--out", "s"], tmp.path());
    assert!(out.status.success());
    assert_eq!(read(tmp.path().join("s/sweep.csv")).lines().count(), 2);
}

#[test]
fn newtonian_theory_table_has_no_memory_terms() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "t.json", r#"{"theory": {"modes": 6, "optimize_modes": 4}}"#);
    let out = vefil(&["theory-table", "--config", "t.json", "--out", "t"], tmp.path());
    assert!(out.status.success());
    let table = read(tmp.path().join("t/w_table.csv"));
    let rows: Vec<Vec<f64>> = table
        .lines()
        .skip(2)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 36);
    for r in &rows {
        // W1 = Q_k, W2 = H_k, W3 = W4 = 0
        assert_eq!((r[5], r[6], r[7], r[8]), (r[3], r[4], 0.0, 0.0));
    }
    let manifest = json(tmp.path().join("t/manifest.json"));
    let meta = &manifest["metadata"];
    assert_eq!(meta["speed"], meta["speed_newtonian"]);
}

#[test]
fn optimize_beats_the_traveling_wave() {
    let tmp = tempfile::tempdir().unwrap();
    let out = vefil(&["optimize", "--out", "o"], tmp.path());
    assert!(out.status.success());
    let report = json(tmp.path().join("o/optimum.json"));
    assert_eq!(report["a"].as_array().unwrap().len(), 12);
    assert!(report["speed"].as_f64().unwrap() >= report["unit_traveling_wave_speed"].as_f64().unwrap().abs());
    assert_eq!(read(tmp.path().join("o/optimum_profiles.csv")).lines().count(), 202);
}

#[test]
fn validate_prints_one_line_per_criterion() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "v.json", r#"{"validate": {"criteria": [1, 12, 13]}}"#);
    let out = vefil(&["validate", "--config", "v.json", "--out", "v"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().filter(|l| l.starts_with("[PASS]") || l.starts_with("[FAIL]")).collect();
    assert_eq!(lines.len(), 3);
    assert!(text.contains("3/3 criteria passed"));
    assert_eq!(read(tmp.path().join("v/validation.csv")).lines().count(), 4);
}

#[test]
fn invalid_config_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "bad.json", r#"{"sim": {"n": 4}}"#);
    let out = vefil(&["simulate", "--config", "bad.json", "--out", "x"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("sim") && err.contains('n'), "{err}");
    write(tmp.path(), "empty.json", r#"{"sweep": {"mu": []}}"#);
    let out = vefil(&["sweep", "--config", "empty.json", "--out", "x"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("sweep"));
    let out = vefil(&["simulate", "--preset", "nope", "--out", "x"], tmp.path());
    assert!(!out.status.success());
}

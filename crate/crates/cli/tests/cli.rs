use std::collections::BTreeSet;
use std::path::Path;
use std::process::{Command, Output};

use dicke::model::ModelParams;
use dicke::semiclassical::{classify_attractor, seed_states, ClassifyOptions};
use serde_json::Value;

fn dicke(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dicke"))
        .current_dir(dir)
        .args(args)
        .arg("--quiet")
        .output()
        .expect("binary runs")
}

fn data_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

const SMALL_SWEEP: &[&str] = &[
    "sweep", "--values", "-1,0,1,3", "--grid-units", "omega", "--n-atoms", "2,3", "--n-max", "3",
];

#[test]
fn sweep_output_independent_of_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let mut a = SMALL_SWEEP.to_vec();
    a.extend(["--workers", "1", "--out", "a.csv"]);
    let mut b = SMALL_SWEEP.to_vec();
    b.extend(["--workers", "3", "--out", "b.csv"]);
    assert!(dicke(dir.path(), &a).status.success());
    assert!(dicke(dir.path(), &b).status.success());
    let ta = std::fs::read(dir.path().join("a.csv")).unwrap();
    let tb = std::fs::read(dir.path().join("b.csv")).unwrap();
    assert_eq!(ta, tb);
}

#[test]
fn sweep_rows_carry_parameters_and_reference_columns() {
    let dir = tempfile::tempdir().unwrap();
    let mut a = SMALL_SWEEP.to_vec();
    a.extend(["--out", "s.csv"]);
    assert!(dicke(dir.path(), &a).status.success());
    let text = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
    assert!(text.starts_with("# dicke "));
    assert!(text.contains("# n-atoms = 2,3\n"));
    let rows = data_rows(&text);
    let header = &rows[0];
    assert_eq!(rows.len(), 1 + 8);
    assert!(rows.iter().all(|r| r.len() == header.len()));
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    let first = &rows[1];
    assert_eq!(first[col("n_atoms")], "2");
    assert_eq!(first[col("u_mhz")], "-1");
    assert_eq!(first[col("sc_stable")], "Normal");
    assert_eq!(rows[4][col("sc_stable")], "LimitCycle");
    assert!(rows[1..].iter().all(|r| r[col("error")].is_empty()));
    let n: f64 = first[col("n")].parse().unwrap();
    assert!((0.0..0.05).contains(&n));
}

#[test]
fn empty_observable_list_fails_before_solving() {
    let dir = tempfile::tempdir().unwrap();
    let out = dicke(dir.path(), &["sweep", "--values", "0", "--observables", "", "--out", "x.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no observables"));
    assert!(!dir.path().join("x.csv").exists());
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("cut.conf"),
        "# low cut\ng = 0.05\nvalues = 0\nn_atoms = 2\nn-max = 3\nobservables = n\n",
    )
    .unwrap();
    let out = dicke(dir.path(), &["sweep", "--config", "cut.conf", "--g", "0.02", "--out", "c.csv"]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(dir.path().join("c.csv")).unwrap();
    assert!(text.contains("# g = 0.02\n"));
    assert!(text.contains("# observables = n\n"));
    assert_eq!(data_rows(&text)[1][2], "0.02");
}

#[test]
fn unknown_config_key_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.conf"), "gee = 1\n").unwrap();
    let out = dicke(dir.path(), &["sweep", "--config", "bad.conf", "--values", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn timed_out_points_are_marked_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let out = dicke(
        dir.path(),
        &["sweep", "--values", "0", "--n-atoms", "10", "--timeout", "0.001", "--out", "t.csv"],
    );
    assert!(out.status.success());
    let rows = data_rows(&std::fs::read_to_string(dir.path().join("t.csv")).unwrap());
    assert_eq!(rows[1].last().unwrap(), "timeout");
}

#[test]
fn solver_failure_recorded_and_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dicke(
        dir.path(),
        &["sweep", "--values", "0,1", "--n-atoms", "2", "--n-max", "3", "--tol", "1e-300", "--out", "f.csv"],
    );
    assert_eq!(out.status.code(), Some(1));
    let rows = data_rows(&std::fs::read_to_string(dir.path().join("f.csv")).unwrap());
    assert_eq!(rows.len(), 3);
    assert!(rows[1].last().unwrap().contains("did not converge"));
}

#[test]
fn decoupled_point_flags_degenerate_null_space() {
    let dir = tempfile::tempdir().unwrap();
    let out = dicke(
        dir.path(),
        &["point", "--g", "0", "--n-atoms", "2", "--n-max", "3", "--tasks", "scalars", "--out", "p"],
    );
    assert!(out.status.success());
    let m = manifest(&dir.path().join("p"));
    assert_eq!(m["solver"]["degenerate_null_space"], Value::Bool(true));
    assert_eq!(m["solver"]["warnings"][0]["kind"], "DegenerateNullSpace");
    assert_eq!(m["frequencies"]["omega"]["mhz"], 1.0);
}

#[test]
fn short_window_omits_spectrum() {
    let dir = tempfile::tempdir().unwrap();
    let out = dicke(
        dir.path(),
        &[
            "point", "--g", "0.1", "--n-atoms", "2", "--n-max", "4", "--tasks", "correlation,spectrum",
            "--corr-window", "0.5", "--out", "p",
        ],
    );
    assert!(out.status.success());
    let p = dir.path().join("p");
    let m = manifest(&p);
    assert_eq!(m["correlation"]["undecayed_correlation"], Value::Bool(true));
    assert!(p.join("correlation.csv").exists());
    assert!(!p.join("spectrum.csv").exists());
}

#[test]
fn decayed_correlation_emits_consistent_spectrum() {
    let dir = tempfile::tempdir().unwrap();
    let out = dicke(
        dir.path(),
        &["point", "--g", "0.1", "--n-atoms", "2", "--n-max", "4", "--tasks", "correlation,spectrum", "--out", "p"],
    );
    assert!(out.status.success());
    let p = dir.path().join("p");
    let m = manifest(&p);
    assert_eq!(m["correlation"]["undecayed_correlation"], Value::Bool(false));
    let c0 = m["correlation"]["c0_re"].as_f64().unwrap();
    let integral = m["spectrum"]["integral"].as_f64().unwrap();
    assert!((integral - c0).abs() < 0.02 * c0);
    let text = std::fs::read_to_string(p.join("spectrum.csv")).unwrap();
    assert!(text.starts_with("# dicke "));
}

#[test]
fn origin_centred_wigner_maximum_at_zero_u() {
    let dir = tempfile::tempdir().unwrap();
    let out = dicke(
        dir.path(),
        &["point", "--g", "0.1", "--u", "0", "--n-atoms", "10", "--tasks", "wigner,spin-q", "--out", "p"],
    );
    assert!(out.status.success());
    let p = dir.path().join("p");
    let m = manifest(&p);
    let maxima = m["wigner"]["local_maxima"].as_array().unwrap();
    assert_eq!(maxima.len(), 1);
    assert!(maxima[0]["x"].as_f64().unwrap().abs() < 1e-12);
    assert!(maxima[0]["y"].as_f64().unwrap().abs() < 1e-12);
    assert!((m["wigner"]["integral"].as_f64().unwrap() - 1.0).abs() < 0.01);
    assert!((m["spin_q"]["normalization"].as_f64().unwrap() - 1.0).abs() < 0.01);
    let rows = data_rows(&std::fs::read_to_string(p.join("wigner.csv")).unwrap());
    assert_eq!(rows.len(), 1 + 81 * 81);
}

#[test]
fn single_cell_phase_diagram_is_union_of_seed_attractors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dicke(
        dir.path(),
        &[
            "phase-diagram", "--g-min", "0.01", "--g-max", "0.01", "--g-points", "1", "--u-min", "-4",
            "--u-max", "-4", "--u-points", "1", "--out", "pd.csv",
        ],
    );
    assert!(out.status.success());
    let rows = data_rows(&std::fs::read_to_string(dir.path().join("pd.csv")).unwrap());
    assert_eq!(rows.len(), 2);
    let p = ModelParams::mhz(0.05, 1.0, 0.2, 0.01, -4.0);
    let opts = ClassifyOptions::default();
    let union: BTreeSet<_> = seed_states(&p, 8)
        .iter()
        .map(|s| classify_attractor(&p, s, &opts).unwrap())
        .collect();
    let expected: Vec<&str> = union.iter().map(|l| l.name()).collect();
    assert_eq!(rows[1][2], expected.join("+"));
    assert_eq!(rows[1][2], "Normal+Inverted");
}

#[test]
fn reversed_phase_grid_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = dicke(dir.path(), &["phase-diagram", "--u-min", "3", "--u-max", "-3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("u-min"));
}

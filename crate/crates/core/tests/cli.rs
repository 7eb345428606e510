use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use douglas_core::io::{
    format_matrix_market, parse_csv, parse_matrix_market, read_operator, write_operator, write_vector,
};
use douglas_core::linop::Operator;
use nalgebra::{DMatrix, DVector};
use serde_json::Value;
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_douglas-lab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout)
        .unwrap_or_else(|e| panic!("stdout is not JSON ({e}): {}", String::from_utf8_lossy(&out.stdout)))
}

fn write_matrix(dir: &Path, name: &str, rows: &[&[f64]]) -> PathBuf {
    let path = dir.join(name);
    write_operator(&path, &Operator::from_rows(rows).unwrap()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn check_with_equal_operators_reports_inclusion() {
    let dir = TempDir::new().unwrap();
    let a = write_matrix(dir.path(), "a.mtx", &[&[1.0, 2.0], &[0.0, 1.0], &[3.0, 0.0]]);
    let out = run(&["douglas", "check", s(&a), s(&a)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert_eq!(v["command"], "douglas check");
    assert_eq!(v["result"]["inclusion"], true);
    assert_eq!(v["schema"], 1);
    let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
    assert_eq!(keys[0], "header");
}

#[test]
fn factor_writes_matrix_and_fails_without_inclusion() {
    let dir = TempDir::new().unwrap();
    let b = write_matrix(dir.path(), "b.mtx", &[&[1.0, 0.0], &[0.0, 2.0], &[0.0, 0.0]]);
    let a = write_matrix(dir.path(), "a.mtx", &[&[2.0], &[4.0], &[0.0]]);
    let c_path = dir.path().join("c.mtx");
    let out = run(&["douglas", "factor", s(&a), s(&b), "--factor-out", s(&c_path)]);
    assert_eq!(out.status.code(), Some(0));
    let c = read_operator(&c_path).unwrap();
    assert!((c.matrix() - DMatrix::from_row_slice(2, 1, &[2.0, 2.0])).norm() < 1e-12);

    let bad = write_matrix(dir.path(), "bad.mtx", &[&[0.0], &[0.0], &[1.0]]);
    let report = dir.path().join("report.json");
    let out = run(&["douglas", "factor", s(&bad), s(&b), "--out", s(&report)]);
    assert_eq!(out.status.code(), Some(4));
    let v: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert!(v["error"]["message"].as_str().unwrap().contains("inclusion violated"));
}

#[test]
fn mixed_solve_with_infeasible_exact_block_exits_3() {
    let dir = TempDir::new().unwrap();
    let a1 = write_matrix(dir.path(), "a1.mtx", &[&[0.0], &[1.0]]);
    let b1 = write_matrix(dir.path(), "b1.mtx", &[&[1.0, 0.0], &[0.0, 0.0]]);
    let a2 = write_matrix(dir.path(), "a2.mtx", &[&[1.0]]);
    let b2 = write_matrix(dir.path(), "b2.mtx", &[&[1.0, 1.0]]);
    let h1 = dir.path().join("h1.mtx");
    write_vector(&h1, &DVector::from_element(1, 1.0)).unwrap();

    let check = run(&["douglas", "mixed-check", s(&a1), s(&a2), s(&b1), s(&b2)]);
    assert_eq!(check.status.code(), Some(0));
    assert_eq!(json(&check)["result"]["check"]["overall"], false);

    let out = run(&[
        "douglas",
        "mixed-solve",
        s(&a1),
        s(&a2),
        s(&b1),
        s(&b2),
        "--h1",
        s(&h1),
        "--eps",
        "0.1",
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("infeasible"));
}

#[test]
fn mixed_solve_feasible_and_epsilon_miss() {
    let dir = TempDir::new().unwrap();
    let a1 = write_matrix(dir.path(), "a1.mtx", &[&[1.0]]);
    let b1 = write_matrix(dir.path(), "b1.mtx", &[&[1.0, 0.0]]);
    let a2 = write_matrix(dir.path(), "a2.mtx", &[&[1.0], &[1.0]]);
    let b2 = write_matrix(dir.path(), "b2.mtx", &[&[1.0, 0.0], &[0.0, 0.0]]);
    let h1 = dir.path().join("h1.mtx");
    write_vector(&h1, &DVector::from_element(1, 1.0)).unwrap();
    let files = [s(&a1), s(&a2), s(&b1), s(&b2)];

    let mut args = vec!["douglas", "mixed-solve"];
    args.extend(files);
    args.extend(["--h1", s(&h1), "--eps", "2.0"]);
    let out = run(&args);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["result"]["epsilon_met"], true);
    assert!((v["result"]["approx_residual"].as_f64().unwrap() - 1.0).abs() < 1e-12);

    *args.last_mut().unwrap() = "0.5";
    let out = run(&args);
    assert_eq!(out.status.code(), Some(4));
    let v = json(&out);
    assert_eq!(v["error"]["partial"]["epsilon_met"], false);
}

#[test]
fn counterexample_sweep_writes_csv() {
    let out = run(&["counterexample", "sweep", "--dims", "8,16"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let body: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(body.len(), 3);
    assert!(body[0].starts_with("n,majorization_ok,sequential_defect,overall"));
    assert!(body[1].starts_with("8,true,"));
    assert!(body[2].starts_with("16,true,"));
}

#[test]
fn omega_without_grid_nodes_is_rejected() {
    let out = run(&["heat", "adjoint-check", "--n", "4", "--omega", "0.41:0.42"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("omega"));
}

#[test]
fn heat_synthesize_writes_control_and_trajectories() {
    let dir = TempDir::new().unwrap();
    let control = dir.path().join("h.mtx");
    let ytraj = dir.path().join("y.csv");
    let out = run(&[
        "heat",
        "synthesize",
        "--n",
        "12",
        "--m",
        "20",
        "--control-out",
        s(&control),
        "--y-trajectory",
        s(&ytraj),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert!(v["result"]["y_terminal_norm"].as_f64().unwrap() < 1e-8);
    assert!(v["result"]["z_error"].as_f64().unwrap() <= 1e-2);
    let h = parse_matrix_market(&fs::read_to_string(&control).unwrap()).unwrap();
    assert_eq!(h.nrows(), 20);
    let traj = fs::read_to_string(&ytraj).unwrap();
    assert!(traj.starts_with("time,node,value"));
    assert_eq!(traj.lines().count(), 1 + 21 * 12);
}

#[test]
fn config_file_sets_tolerances_and_flags_override() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "rank_rel = 1e-6\nseed = 5\n").unwrap();
    let a = write_matrix(dir.path(), "a.mtx", &[&[1.0]]);
    let out = run(&["--config", s(&cfg), "douglas", "check", s(&a), s(&a)]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["tolerances"]["rank_rel"], 1e-6);
    assert_eq!(v["seed"], 5);

    let out = run(&["--config", s(&cfg), "--seed", "9", "douglas", "check", s(&a), s(&a)]);
    assert_eq!(json(&out)["seed"], 9);

    fs::write(&cfg, "rank_tol = 1e-6\n").unwrap();
    let out = run(&["--config", s(&cfg), "douglas", "check", s(&a), s(&a)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_matrix_market_exits_2() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.mtx");
    fs::write(&bad, "%%MatrixMarket matrix array real general\n2 2\n1.0\n2.0\n").unwrap();
    let out = run(&["douglas", "check", s(&bad), s(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    let out = run(&["douglas", "check", "/nonexistent/a.mtx", "/nonexistent/b.mtx"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = run(&["douglas", "frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn suite_runs_are_deterministic_apart_from_header() {
    let args = ["--seed", "3", "suite", "theorem2", "--count", "10", "--max-dim", "8"];
    let mut a = json(&run(&args));
    let mut b = json(&run(&args));
    a.as_object_mut().unwrap().remove("header");
    b.as_object_mut().unwrap().remove("header");
    assert_eq!(a, b);
}

#[test]
fn matrix_market_and_csv_round_trip() {
    let m = DMatrix::from_row_slice(2, 3, &[1.5, -2.0, 1e-300, 0.0, 3.25, -7.0e12]);
    assert_eq!(parse_matrix_market(&format_matrix_market(&m)).unwrap(), m);
    let csv = douglas_core::io::format_csv(&m).unwrap();
    assert_eq!(parse_csv(&csv).unwrap(), m);

    let coordinate = "%%MatrixMarket matrix coordinate real symmetric\n% comment\n2 2 2\n1 1 4.0\n2 1 -1.0\n";
    assert_eq!(
        parse_matrix_market(coordinate).unwrap(),
        DMatrix::from_row_slice(2, 2, &[4.0, -1.0, -1.0, 0.0])
    );
}

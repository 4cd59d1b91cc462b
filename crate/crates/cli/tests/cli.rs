use std::path::Path;
use std::process::{Command, Output};

fn rtmpc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rtmpc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn parse_csv(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"))
}

#[test]
fn run_rti_writes_artifacts_with_solve_time_stats() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("a");
    let o = rtmpc(&["run", "--benchmark", "pendulum", "--mode", "rti", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["sim.csv", "timings.csv", "solver.csv", "summary.json", "spec.toml"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let st = &summary["solve_time"];
    assert!(st["mean"].as_f64().unwrap() > 0.0);
    assert!(st["max"].as_f64().unwrap() >= st["mean"].as_f64().unwrap());
    assert_eq!(summary["failures"], 0);
}

#[test]
fn same_seed_gives_identical_sim_csv() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = rtmpc(&[
            "run", "--benchmark", "pendulum", "--mode", "rti", "--seed", "7",
            "--set", "sim.noise_std=0.001", "--t-end", "2", "--out", out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(out.join("sim.csv")).unwrap()
    };
    let (a, b) = (run("a"), run("b"));
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn cmon_run_reports_partial_updates() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c");
    let o = rtmpc(&[
        "run", "--benchmark", "pendulum", "--cmon", "--eta-pri", "0.05", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (h, rows) = csv_rows(&out.join("solver.csv"));
    let c = column(&h, "update_fraction");
    let below = rows.iter().filter(|r| r[c].parse::<f64>().unwrap() < 1.0).count();
    assert!(below >= 1);
}

#[test]
fn check_exit_codes() {
    let o = rtmpc(&["check", "--benchmark", "pendulum", "--max-iters", "50"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let text = String::from_utf8_lossy(&o.stdout);
    for k in ["stationarity", "equality", "inequality"] {
        assert!(text.contains(k));
    }
    assert_eq!(code(&rtmpc(&["check", "--benchmark", "pendulum", "--max-iters", "1"])), 1);
    assert_eq!(code(&rtmpc(&["check", "--benchmark", "chain-linear", "--max-iters", "1"])), 0);
}

#[test]
fn invalid_input_exits_with_two() {
    assert_eq!(code(&rtmpc(&["run", "--benchmark", "rocket"])), 2);
    assert_eq!(code(&rtmpc(&["run"])), 2);
    assert_eq!(code(&rtmpc(&["check", "--benchmark", "pendulum", "--set", "sqp.colour=red"])), 2);
    assert_eq!(
        code(&rtmpc(&["check", "--benchmark", "pendulum", "--set", "qp.path=sparse", "--set", "condensing.mode=full"])),
        2
    );
    assert_eq!(code(&rtmpc(&["run", "--bogus-flag"])), 2);
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "version = 1\nbenchmark = \"pendulum\"\nunknown = 3\n").unwrap();
    assert_eq!(code(&rtmpc(&["check", "--spec", bad.to_str().unwrap()])), 2);
}

#[test]
fn spec_file_keys_are_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("s.toml");
    std::fs::write(&spec, "version = 1\nbenchmark = \"pendulum\"\n[sqp]\nmax_iters = 1\n").unwrap();
    let s = spec.to_str().unwrap();
    assert_eq!(code(&rtmpc(&["check", "--spec", s])), 1);
    assert_eq!(code(&rtmpc(&["check", "--spec", s, "--max-iters", "50"])), 0);
}

#[test]
fn bench_single_repeat_has_mean_equal_max() {
    let o = rtmpc(&["bench", "--benchmark", "pendulum", "--mode", "rti", "--repeats", "1", "--t-end", "1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (h, rows) = parse_csv(&String::from_utf8_lossy(&o.stdout));
    assert_eq!(rows.len(), 1);
    for p in ["solve", "generation", "condensing", "qp"] {
        let (m, x) = (column(&h, &format!("{p}_mean")), column(&h, &format!("{p}_max")));
        assert_eq!(rows[0][m].parse::<f64>().unwrap(), rows[0][x].parse::<f64>().unwrap());
    }
}

#[test]
fn bench_dense_and_sparse_agree_on_the_chain() {
    let o = rtmpc(&[
        "bench", "--benchmark", "chain-linear", "--mode", "rti", "--repeats", "1", "--horizon", "50",
        "--t-end", "2", "--sweep", "qp.path=dense,sparse",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (h, rows) = parse_csv(&String::from_utf8_lossy(&o.stdout));
    assert_eq!(rows.len(), 2);
    assert!(rows[0][0].contains("dense") && rows[1][0].contains("sparse"));
    let k = column(&h, "final_kkt");
    let (a, b): (f64, f64) = (rows[0][k].parse().unwrap(), rows[1][k].parse().unwrap());
    assert!((a - b).abs() <= 1e-6 * (1.0 + a.abs()), "{a} vs {b}");
    let t = column(&h, "qp_mean");
    assert!(rows.iter().all(|r| r[t].parse::<f64>().unwrap() > 0.0));
}

#[test]
fn bench_cmon_on_and_off() {
    let o = rtmpc(&[
        "bench", "--benchmark", "chain-nonlinear", "--mode", "rti", "--repeats", "1", "--t-end", "4",
        "--set", "cmon.eta_pri=0.1", "--set", "cmon.eta_dual=0.1", "--sweep", "cmon.enabled=false,true",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (h, rows) = parse_csv(&String::from_utf8_lossy(&o.stdout));
    let (tr, uf) = (column(&h, "tracking"), column(&h, "update_fraction"));
    let track: Vec<f64> = rows.iter().map(|r| r[tr].parse().unwrap()).collect();
    let frac: Vec<f64> = rows.iter().map(|r| r[uf].parse().unwrap()).collect();
    assert!((track[0] - track[1]).abs() <= 1e-2 * track[0].abs().max(1e-3), "{track:?}");
    assert_eq!(frac[0], 1.0);
    assert!(frac[1] < 1.0);
}

#[test]
fn bench_rejects_zero_repeats() {
    assert_eq!(code(&rtmpc(&["bench", "--benchmark", "pendulum", "--repeats", "0"])), 2);
}

#[test]
fn list_names_every_benchmark() {
    let o = rtmpc(&["list-benchmarks"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    for b in ["pendulum", "chain-linear", "chain-nonlinear"] {
        assert!(text.contains(b));
    }
}

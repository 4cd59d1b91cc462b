mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use rtmpc::benchmarks::{chain_nonlinear, pendulum, ProblemConfig};
use rtmpc::integrator::{simulate_interval, IntegratorConfig};
use rtmpc::shooting::CmonConfig;
use rtmpc::sim::{run_closed_loop, shift_warm_start, SampleStatus, SimConfig, SimLog};
use rtmpc::sqp::{sqp_solve, SolverOptions, SqpConfig, SqpMode};
use rtmpc::OcpProblem;

fn rti() -> SolverOptions {
    SolverOptions {
        sqp: SqpConfig {
            mode: SqpMode::Rti,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn cmon(eta_pri: f64, eta_dual: f64) -> SolverOptions {
    SolverOptions {
        cmon: CmonConfig {
            enabled: true,
            eta_pri: Some(eta_pri),
            eta_dual: Some(eta_dual),
            ..Default::default()
        },
        ..rti()
    }
}

fn state_gap(a: &SimLog, b: &SimLog) -> f64 {
    a.records
        .iter()
        .zip(&b.records)
        .flat_map(|(p, q)| p.x.iter().zip(&q.x))
        .fold(0.0f64, |m, (p, q)| m.max((p - q).abs()))
}

#[test]
fn shifted_warm_start_keeps_a_feasible_trajectory_feasible() {
    let b = pendulum(&ProblemConfig::default()).unwrap();
    let cfg = IntegratorConfig::default();
    let (sol, _) = sqp_solve(&b.problem, &SolverOptions::default(), &b.cold_start(), &b.x_init).unwrap();
    let shifted = shift_warm_start(&b.problem, &cfg, &sol);
    let n = b.problem.dims.n;
    assert_eq!(shifted.x.len(), n + 1);
    assert_eq!(shifted.u.len(), n);
    assert_eq!(shifted.x[0], sol.x[1]);
    assert_eq!(shifted.u[n - 1], sol.u[n - 1]);
    for k in 0..n {
        let next = simulate_interval(&b.problem, &cfg, shifted.x[k].as_slice(), shifted.u[k].as_slice(), &b.problem.params, false)
            .unwrap()
            .x_next;
        assert!((next - &shifted.x[k + 1]).amax() < 1e-6, "interval {k}");
    }
}

#[test]
fn double_integrator_is_regulated_to_the_origin() {
    let model = LinearModel {
        f: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
        g: DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
        bounded: true,
    };
    let p = OcpProblem::new(model, 20, 0.1, DMatrix::identity(3, 3), DMatrix::identity(2, 2) * 10.0)
        .unwrap()
        .with_stage_bounds(DVector::from_element(1, -1.0), DVector::from_element(1, 1.0))
        .unwrap();
    let x0 = DVector::from_vec(vec![1.0, 0.0]);
    let start = rtmpc::shooting::Trajectory::constant(&p.dims, &x0, &DVector::zeros(1));
    let sim = SimConfig {
        t_end: 10.0,
        ..Default::default()
    };
    let log = run_closed_loop(&p, None, &rti(), &sim, &start, &x0, &[vec![]]).unwrap();
    assert_eq!(log.failures(), 0);
    assert!(log.records.iter().all(|r| r.u[0].abs() <= 1.0 + 1e-8));
    let norm = |x: &[f64]| x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(norm(&log.final_state) <= 1e-3, "{:?}", log.final_state);
}

#[test]
fn rti_pendulum_settles_upright() {
    let b = pendulum(&ProblemConfig::default()).unwrap();
    let sim = SimConfig::default();
    let log = run_closed_loop(&b.problem, None, &rti(), &sim, &b.cold_start(), &b.x_init, &b.references).unwrap();
    assert_eq!(log.records.len(), 100);
    assert!(log.records.iter().all(|r| r.status == SampleStatus::Ok));
    let tail = &log.records[80..];
    let worst = tail.iter().fold(0.0f64, |m, r| m.max(r.x[1].abs()));
    assert!(worst <= 0.01, "{worst}");
}

#[test]
fn noisy_runs_repeat_with_the_same_seed() {
    let b = pendulum(&ProblemConfig::default()).unwrap();
    let sim = SimConfig {
        t_end: 2.0,
        noise_std: 1e-3,
        seed: 11,
        ..Default::default()
    };
    let run = |s: &SimConfig| run_closed_loop(&b.problem, None, &rti(), s, &b.cold_start(), &b.x_init, &b.references).unwrap();
    let (a, c) = (run(&sim), run(&sim));
    for (p, q) in a.records.iter().zip(&c.records) {
        assert_eq!(p.x, q.x);
        assert_eq!(p.u, q.u);
    }
    let other = run(&SimConfig { seed: 12, ..sim });
    assert!(state_gap(&a, &other) > 0.0);
}

#[test]
fn zero_thresholds_reproduce_the_standard_solver_exactly() {
    let b = chain_nonlinear(&ProblemConfig::default()).unwrap();
    let sim = SimConfig {
        t_end: 3.0,
        ..Default::default()
    };
    let run = |o: &SolverOptions| run_closed_loop(&b.problem, None, o, &sim, &b.cold_start(), &b.x_init, &b.references).unwrap();
    let (plain, zero) = (run(&rti()), run(&cmon(0.0, 0.0)));
    for (p, q) in plain.records.iter().zip(&zero.records) {
        assert_eq!(p.x, q.x);
        assert_eq!(p.u, q.u);
        assert_eq!(p.kkt.to_bits(), q.kkt.to_bits());
        assert_eq!(q.update_fraction, 1.0);
    }
}

#[test]
fn loose_thresholds_skip_updates_but_track_the_full_run() {
    let b = chain_nonlinear(&ProblemConfig::default()).unwrap();
    let sim = SimConfig::default();
    let run = |o: &SolverOptions| run_closed_loop(&b.problem, None, o, &sim, &b.cold_start(), &b.x_init, &b.references).unwrap();
    let (full, partial) = (run(&rti()), run(&cmon(0.1, 0.1)));
    assert_eq!(partial.failures(), 0);
    let skipped = partial.records.iter().filter(|r| r.update_fraction < 1.0).count();
    assert!(2 * skipped >= partial.records.len(), "{skipped} of {}", partial.records.len());
    let gap = state_gap(&full, &partial);
    assert!(gap <= 1e-2, "{gap}");
}

#[test]
fn default_cmon_rti_swing_up_has_no_failed_samples() {
    let b = pendulum(&ProblemConfig::default()).unwrap();
    let opts = SolverOptions {
        cmon: CmonConfig {
            enabled: true,
            ..Default::default()
        },
        ..rti()
    };
    let log = run_closed_loop(&b.problem, None, &opts, &SimConfig::default(), &b.cold_start(), &b.x_init, &b.references).unwrap();
    assert_eq!(log.failures(), 0);
    assert!(log.final_state[1].abs() < 1e-2);
}

//! Closed-loop NMPC simulation: measure, solve, apply the first input to a
//! finer-stepped plant, shift the warm start, repeat.

use crate::integrator::{integrate, simulate_interval, IntegrationError, IntegratorConfig, Scheme};
use crate::model::{OcpModel, OcpProblem};
use crate::shooting::Trajectory;
use crate::sqp::{IterationLog, PhaseTimings, SolveStatus, Solver, SolverOptions, SqpError};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use std::time::Instant;
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub t_end: f64,
    /// plant step is `Ts / plant_substeps`
    pub plant_substeps: usize,
    pub plant_scheme: Scheme,
    /// standard deviation of additive state-measurement noise
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            t_end: 5.0,
            plant_substeps: 10,
            plant_scheme: Scheme::IrkGl3,
            noise_std: 0.0,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err("sim.t_end must be > 0".into());
        }
        if self.plant_substeps < 1 {
            return Err("sim.plant_substeps must be >= 1".into());
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err("sim.noise_std must be >= 0".into());
        }
        Ok(())
    }

    fn plant_integrator(&self) -> IntegratorConfig {
        IntegratorConfig {
            scheme: self.plant_scheme,
            steps: self.plant_substeps,
            newton_tol: 1e-12,
            newton_max_iters: 50,
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation setup: {0}")]
    Config(String),
    #[error(transparent)]
    Solver(#[from] SqpError),
    #[error("plant integration failed at sample {sample}: {source}")]
    Plant {
        sample: usize,
        #[source]
        source: IntegrationError,
    },
    #[error("cannot write log: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot write log: {0}")]
    Csv(#[from] csv::Error),
}

/// One control sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample: usize,
    pub t: f64,
    /// plant state at the start of the sample (before noise)
    pub x: Vec<f64>,
    /// input applied over the sample
    pub u: Vec<f64>,
    /// least-squares stage cost of `(x, u)` against the current reference
    pub stage_cost: f64,
    pub kkt: f64,
    pub status: SampleStatus,
    pub sqp_iters: usize,
    pub qp_iters: usize,
    pub update_fraction: f64,
    /// plant state at the next sample minus the controller model's one-step
    /// prediction from the measured state
    pub prediction_error: f64,
    pub solve_time: f64,
    pub timings: PhaseTimings,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleStatus {
    Ok,
    /// solver returned without converging; its input was applied
    NotConverged,
    /// no usable solution, previous input held
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimLog {
    pub records: Vec<SampleRecord>,
    /// `(sample, iteration)` rows of every solve
    pub iterations: Vec<(usize, IterationLog)>,
    pub final_state: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub max: f64,
}

impl Stat {
    fn of(v: impl Iterator<Item = f64>) -> Stat {
        let (mut sum, mut max, mut n) = (0.0, f64::NEG_INFINITY, 0usize);
        for x in v {
            sum += x;
            max = max.max(x);
            n += 1;
        }
        if n == 0 {
            Stat { mean: 0.0, max: 0.0 }
        } else {
            Stat {
                mean: sum / n as f64,
                max,
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub samples: usize,
    pub failures: usize,
    pub final_kkt: f64,
    pub final_state: Vec<f64>,
    pub solve_time: Stat,
    pub generation_time: Stat,
    pub condensing_time: Stat,
    pub qp_time: Stat,
    pub line_search_time: Stat,
    pub update_fraction: Stat,
    pub sqp_iters: Stat,
    pub stage_cost: Stat,
}

impl SimLog {
    pub fn failures(&self) -> usize {
        self.records
            .iter()
            .filter(|r| r.status == SampleStatus::Failed)
            .count()
    }

    pub fn summary(&self) -> SimSummary {
        let r = &self.records;
        SimSummary {
            samples: r.len(),
            failures: self.failures(),
            final_kkt: r.last().map(|x| x.kkt).unwrap_or(f64::NAN),
            final_state: self.final_state.clone(),
            solve_time: Stat::of(r.iter().map(|x| x.solve_time)),
            generation_time: Stat::of(r.iter().map(|x| x.timings.generation)),
            condensing_time: Stat::of(r.iter().map(|x| x.timings.condensing)),
            qp_time: Stat::of(r.iter().map(|x| x.timings.qp)),
            line_search_time: Stat::of(r.iter().map(|x| x.timings.line_search)),
            update_fraction: Stat::of(r.iter().map(|x| x.update_fraction)),
            sqp_iters: Stat::of(r.iter().map(|x| x.sqp_iters as f64)),
            stage_cost: Stat::of(r.iter().map(|x| x.stage_cost)),
        }
    }

    /// Deterministic per-sample log: time, state, input and solver outcome.
    /// Wall-clock timings go to [`SimLog::write_timings_csv`] instead so that
    /// equal seeds give byte-identical files.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(out);
        let nx = self.final_state.len();
        let nu = self.records.first().map(|r| r.u.len()).unwrap_or(0);
        let mut header = vec!["sample".to_string(), "t".to_string()];
        header.extend((0..nx).map(|i| format!("x{i}")));
        header.extend((0..nu).map(|i| format!("u{i}")));
        header.extend(
            ["stage_cost", "kkt", "status", "sqp_iters", "qp_iters", "update_fraction", "prediction_error"]
                .map(String::from),
        );
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![r.sample.to_string(), r.t.to_string()];
            row.extend(r.x.iter().map(f64::to_string));
            row.extend(r.u.iter().map(f64::to_string));
            row.push(r.stage_cost.to_string());
            row.push(r.kkt.to_string());
            row.push(status_name(r.status).into());
            row.push(r.sqp_iters.to_string());
            row.push(r.qp_iters.to_string());
            row.push(r.update_fraction.to_string());
            row.push(r.prediction_error.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_timings_csv<W: Write>(&self, out: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["sample", "solve_time", "generation", "condensing", "qp", "line_search"])?;
        for r in &self.records {
            let t = &r.timings;
            w.write_record(&[
                r.sample.to_string(),
                r.solve_time.to_string(),
                t.generation.to_string(),
                t.condensing.to_string(),
                t.qp.to_string(),
                t.line_search.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// One row per SQP iteration of every sample.
    pub fn write_solver_csv<W: Write>(&self, out: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "sample",
            "iter",
            "kkt",
            "qp_status",
            "qp_iters",
            "step_norm",
            "alpha",
            "mu_pen",
            "merit_before",
            "merit_after",
            "dd",
            "line_search_failed",
            "update_fraction",
        ])?;
        for (s, it) in &self.iterations {
            w.write_record(&[
                s.to_string(),
                it.iter.to_string(),
                it.kkt.max().to_string(),
                serde_json::to_value(it.qp_status)
                    .ok()
                    .and_then(|v| v.as_str().map(String::from))
                    .unwrap_or_default(),
                it.qp_iters.to_string(),
                it.step_norm.to_string(),
                it.alpha.to_string(),
                it.mu_pen.to_string(),
                it.merit_before.to_string(),
                it.merit_after.to_string(),
                it.dd.to_string(),
                it.line_search_failed.to_string(),
                it.cmon_update_fraction.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `sim.csv`, `timings.csv`, `solver.csv` and `summary.json`.
    pub fn write_all(&self, dir: &Path) -> Result<(), SimError> {
        std::fs::create_dir_all(dir)?;
        self.write_csv(std::fs::File::create(dir.join("sim.csv"))?)?;
        self.write_timings_csv(std::fs::File::create(dir.join("timings.csv"))?)?;
        self.write_solver_csv(std::fs::File::create(dir.join("solver.csv"))?)?;
        let f = std::fs::File::create(dir.join("summary.json"))?;
        serde_json::to_writer_pretty(f, &self.summary()).map_err(std::io::Error::from)?;
        Ok(())
    }
}

fn status_name(s: SampleStatus) -> &'static str {
    match s {
        SampleStatus::Ok => "ok",
        SampleStatus::NotConverged => "not_converged",
        SampleStatus::Failed => "failed",
    }
}

/// Advances a trajectory by one stage for the next sample: states and inputs
/// move forward, the last input is repeated and the last node is obtained by
/// integrating from the old last node. Multipliers shift likewise.
pub fn shift_warm_start<M: OcpModel>(
    problem: &OcpProblem<M>,
    config: &IntegratorConfig,
    traj: &Trajectory,
) -> Trajectory {
    let n = traj.horizon();
    let mut out = traj.clone();
    if n == 0 {
        return out;
    }
    out.x.remove(0);
    out.u.remove(0);
    out.u.push(traj.u[n - 1].clone());
    let last = simulate_interval(
        problem,
        config,
        traj.x[n].as_slice(),
        traj.u[n - 1].as_slice(),
        &problem.params,
        false,
    )
    .map(|r| r.x_next)
    .unwrap_or_else(|_| traj.x[n].clone());
    out.x.push(last);
    out.lambda.remove(0);
    out.lambda.push(traj.lambda[n].clone());
    // stage multipliers shift, the terminal ones stay
    let terminal = out.mu.pop().expect("terminal multipliers");
    out.mu.remove(0);
    out.mu.push(traj.mu[n - 1].clone());
    out.mu.push(terminal);
    out
}

/// Number of control samples in a run.
pub fn sample_count(t_end: f64, ts: f64) -> usize {
    (t_end / ts + 1e-9).floor() as usize
}

/// Runs the closed loop.
///
/// `references` holds the online parameter vector per sample (one entry
/// means constant). `plant` defaults to the controller's own model; pass a
/// problem with perturbed model data to emulate mismatch. A sample whose
/// solve fails holds the previous input.
pub fn run_closed_loop<M: OcpModel + Clone>(
    problem: &OcpProblem<M>,
    plant: Option<&OcpProblem<M>>,
    opts: &SolverOptions,
    sim: &SimConfig,
    initial: &Trajectory,
    x_init: &DVector<f64>,
    references: &[Vec<f64>],
) -> Result<SimLog, SimError> {
    sim.validate().map_err(SimError::Config)?;
    let dims = problem.dims;
    let samples = sample_count(sim.t_end, dims.ts);
    if samples == 0 {
        return Err(SimError::Config("sim.t_end is shorter than one sample".into()));
    }
    if references.is_empty() {
        return Err(SimError::Config("reference series is empty".into()));
    }
    if references.len() != 1 && references.len() < samples {
        return Err(SimError::Config(format!(
            "reference series has {} entries, {} samples needed",
            references.len(),
            samples
        )));
    }
    if let Some(r) = references.iter().find(|r| r.len() != dims.np) {
        return Err(SimError::Config(format!(
            "reference has {} entries, model expects {}",
            r.len(),
            dims.np
        )));
    }
    if x_init.len() != dims.nx || !x_init.iter().all(|v| v.is_finite()) {
        return Err(SimError::Config("initial state must be finite with nx entries".into()));
    }
    initial
        .validate(&dims)
        .map_err(|e| SimError::Config(e.to_string()))?;

    let mut solver = Solver::new(*opts)?;
    let mut ctrl = problem.clone();
    let mut plant = plant.cloned().unwrap_or_else(|| problem.clone());
    let plant_cfg = sim.plant_integrator();
    let mut rng = ChaCha8Rng::seed_from_u64(sim.seed);
    let noise = if sim.noise_std > 0.0 {
        Some(Normal::new(0.0, sim.noise_std).map_err(|e| SimError::Config(e.to_string()))?)
    } else {
        None
    };

    let mut x = x_init.clone();
    let mut traj = initial.clone();
    let mut u_prev = initial.u[0].clone();
    let mut log = SimLog {
        records: Vec::with_capacity(samples),
        iterations: Vec::new(),
        final_state: vec![],
    };
    for k in 0..samples {
        let reference = if references.len() == 1 { &references[0] } else { &references[k] };
        ctrl.set_params(reference).map_err(|e| SimError::Config(e.to_string()))?;
        plant.set_params(reference).map_err(|e| SimError::Config(e.to_string()))?;

        let mut x_meas = x.clone();
        if let Some(dist) = &noise {
            for v in x_meas.iter_mut() {
                *v += dist.sample(&mut rng);
            }
        }

        let t0 = Instant::now();
        let outcome = solver.step(&ctrl, &traj, &x_meas);
        let solve_time = t0.elapsed().as_secs_f64();

        let (u, status, kkt, sqp_iters, qp_iters, fraction, timings) = match outcome {
            Ok((next, rep)) => {
                let qp_iters = rep.iterations.iter().map(|i| i.qp_iters).sum();
                let fraction = if rep.cmon_update_fraction.is_empty() {
                    1.0
                } else {
                    rep.cmon_update_fraction.iter().sum::<f64>() / rep.cmon_update_fraction.len() as f64
                };
                log.iterations
                    .extend(rep.iterations.iter().cloned().map(|it| (k, it)));
                let status = match rep.status {
                    SolveStatus::Converged | SolveStatus::RtiStep => SampleStatus::Ok,
                    SolveStatus::MaxIters => SampleStatus::NotConverged,
                    SolveStatus::QpFailed => SampleStatus::Failed,
                };
                let u = if status == SampleStatus::Failed {
                    u_prev.clone()
                } else {
                    next.u[0].clone()
                };
                if status != SampleStatus::Failed {
                    traj = next;
                }
                (u, status, rep.kkt.max(), rep.iters, qp_iters, fraction, rep.timings)
            }
            Err(SqpError::Generation(_)) => {
                solver.reset();
                (u_prev.clone(), SampleStatus::Failed, f64::NAN, 0, 0, 1.0, PhaseTimings::default())
            }
            Err(e) => return Err(e.into()),
        };

        let x_next = integrate(&plant, &plant_cfg, x.as_slice(), u.as_slice(), &plant.params, dims.ts, false)
            .map_err(|source| SimError::Plant { sample: k, source })?
            .x_next;
        let prediction_error = simulate_interval(&ctrl, &opts.integrator, x_meas.as_slice(), u.as_slice(), &ctrl.params, false)
            .map(|r| (&r.x_next - &x_next).amax())
            .unwrap_or(f64::NAN);

        let h = ctrl.stage_residual_value(x.as_slice(), u.as_slice(), &ctrl.params);
        let stage_cost = 0.5 * h.dot(&(ctrl.weight(0) * &h));
        log.records.push(SampleRecord {
            sample: k,
            t: k as f64 * dims.ts,
            x: x.iter().copied().collect(),
            u: u.iter().copied().collect(),
            stage_cost,
            kkt,
            status,
            sqp_iters,
            qp_iters,
            update_fraction: fraction,
            prediction_error,
            solve_time,
            timings,
        });

        x = x_next;
        u_prev = u;
        traj = shift_warm_start(&ctrl, &opts.integrator, &traj);
        solver.shift_memory();
    }
    log.final_state = x.iter().copied().collect();
    Ok(log)
}

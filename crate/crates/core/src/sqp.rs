//! Gauss-Newton SQP driver: full-step Real-Time Iterations or an SQP loop
//! globalised by an l1 merit function with backtracking line search.

use crate::condensing::{condense, expand};
use crate::integrator::{simulate_interval, IntegratorConfig};
use crate::model::{OcpModel, OcpProblem};
use crate::qp::{
    solve_dense, solve_sparse, sparse_to_stages, QpSolverConfig, QpStatus, StageSolution,
};
use crate::shooting::{
    generate_qp, CmonConfig, GenerationError, GenerationOptions, PreviousLinearization,
    StageQpData, Trajectory,
};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;
use thiserror::Error;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SqpMode {
    /// iterate to `kkt_tol` with line search
    #[default]
    Converge,
    /// one full Newton step per call
    Rti,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CondensingMode {
    None,
    #[default]
    Full,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpPath {
    #[default]
    Dense,
    Sparse,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SqpConfig {
    pub mode: SqpMode,
    pub max_iters: usize,
    pub kkt_tol: f64,
    pub armijo_eta: f64,
    pub backtrack_factor: f64,
    pub min_alpha: f64,
    pub merit_rho: f64,
    pub merit_sigma: f64,
}

impl Default for SqpConfig {
    fn default() -> Self {
        SqpConfig {
            mode: SqpMode::Converge,
            max_iters: 30,
            kkt_tol: 1e-6,
            armijo_eta: 1e-4,
            backtrack_factor: 0.5,
            min_alpha: 1e-4,
            merit_rho: 0.5,
            merit_sigma: 1.0,
        }
    }
}

impl SqpConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.armijo_eta > 0.0 && self.armijo_eta < 0.5) {
            return Err("sqp.armijo_eta must lie in (0, 0.5)".into());
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err("sqp.backtrack_factor must lie in (0, 1)".into());
        }
        if !(self.min_alpha > 0.0 && self.min_alpha <= 1.0) {
            return Err("sqp.min_alpha must lie in (0, 1]".into());
        }
        if !(self.merit_rho > 0.0 && self.merit_rho < 1.0) {
            return Err("sqp.merit_rho must lie in (0, 1)".into());
        }
        if !(self.merit_sigma >= 0.0) {
            return Err("sqp.merit_sigma must be >= 0".into());
        }
        if !(self.kkt_tol > 0.0) {
            return Err("sqp.kkt_tol must be > 0".into());
        }
        if self.max_iters < 1 {
            return Err("sqp.max_iters must be >= 1".into());
        }
        Ok(())
    }
}

/// Everything the solver needs besides the problem itself.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SolverOptions {
    pub integrator: IntegratorConfig,
    pub condensing: CondensingMode,
    pub qp_path: QpPath,
    pub qp: QpSolverConfig,
    pub sqp: SqpConfig,
    pub cmon: CmonConfig,
    /// evaluate shooting intervals on the rayon pool
    pub parallel: bool,
}

impl SolverOptions {
    pub fn validate(&self) -> Result<(), String> {
        self.integrator.validate()?;
        self.qp.validate()?;
        self.sqp.validate()?;
        self.cmon.validate()?;
        match (self.condensing, self.qp_path) {
            (CondensingMode::Full, QpPath::Dense) | (CondensingMode::None, QpPath::Sparse) => Ok(()),
            (CondensingMode::Full, QpPath::Sparse) => {
                Err("qp.path = sparse requires condensing.mode = none".into())
            }
            (CondensingMode::None, QpPath::Dense) => {
                Err("qp.path = dense requires condensing.mode = full".into())
            }
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SqpError {
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error("invalid solver options: {0}")]
    Config(String),
    #[error("initial trajectory is not finite")]
    NonFiniteStart,
}

/// Infinity-norm KKT residuals of the discretised problem.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KktTriple {
    pub stationarity: f64,
    pub eq_violation: f64,
    pub ineq_violation: f64,
}

impl KktTriple {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.eq_violation).max(self.ineq_violation)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeritState {
    pub mu_pen: f64,
    pub last_merit: f64,
    pub last_dd: f64,
}

/// Wall-clock seconds spent per phase.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub generation: f64,
    pub condensing: f64,
    pub qp: f64,
    pub line_search: f64,
}

impl PhaseTimings {
    pub fn total(&self) -> f64 {
        self.generation + self.condensing + self.qp + self.line_search
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIters,
    /// one RTI step taken
    RtiStep,
    /// the QP subproblem failed; the returned iterate is the last good one
    QpFailed,
}

/// One SQP iteration (one QP step).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iter: usize,
    /// KKT at the linearisation point
    pub kkt: KktTriple,
    pub qp_status: QpStatus,
    pub qp_iters: usize,
    pub step_norm: f64,
    pub alpha: f64,
    pub mu_pen: f64,
    pub merit_before: f64,
    pub merit_after: f64,
    pub dd: f64,
    pub line_search_trials: usize,
    pub line_search_failed: bool,
    pub cmon_update_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    /// number of QP steps taken
    pub iters: usize,
    /// KKT of the returned iterate in converge mode, of the linearisation
    /// point in RTI mode
    pub kkt: KktTriple,
    pub alpha_history: Vec<f64>,
    pub cmon_update_fraction: Vec<f64>,
    pub iterations: Vec<IterationLog>,
    pub line_search_failed: bool,
    pub qp_status: Option<QpStatus>,
    pub timings: PhaseTimings,
}

impl SolveReport {
    fn empty() -> Self {
        SolveReport {
            status: SolveStatus::MaxIters,
            iters: 0,
            kkt: KktTriple::default(),
            alpha_history: vec![],
            cmon_update_fraction: vec![],
            iterations: vec![],
            line_search_failed: false,
            qp_status: None,
            timings: PhaseTimings::default(),
        }
    }

    /// Same report with timings zeroed, for determinism comparisons.
    pub fn without_timings(&self) -> Self {
        SolveReport {
            timings: PhaseTimings::default(),
            ..self.clone()
        }
    }
}

/// KKT residuals at the iterate `traj` from a linearisation built there.
///
/// Stationarity uses the Gauss-Newton gradients `J'Wh`:
/// `g_x + C'mu - lambda_k + A'lambda_{k+1}` and `g_u + D'mu + B'lambda_{k+1}`.
pub fn kkt_from_qp(qp: &StageQpData, traj: &Trajectory) -> KktTriple {
    let n = qp.horizon();
    let nx = qp.nx;
    let mut stat: f64 = 0.0;
    for k in 0..n {
        let gx = qp.g[k].rows(0, nx) + qp.c[k].tr_mul(&traj.mu[k]) - &traj.lambda[k]
            + qp.a[k].tr_mul(&traj.lambda[k + 1]);
        let gu = qp.g[k].rows(nx, qp.nu)
            + qp.d[k].tr_mul(&traj.mu[k])
            + qp.b[k].tr_mul(&traj.lambda[k + 1]);
        stat = stat.max(gx.amax()).max(gu.amax());
    }
    let gn = &qp.g[n] + qp.c[n].tr_mul(&traj.mu[n]) - &traj.lambda[n];
    stat = stat.max(gn.amax());
    let mut eq = qp.dx0.amax();
    for d in &qp.defect {
        eq = eq.max(d.amax());
    }
    let mut ineq: f64 = 0.0;
    for k in 0..=n {
        for i in 0..qp.lower[k].len() {
            ineq = ineq.max(qp.lower[k][i]).max(-qp.upper[k][i]);
        }
    }
    KktTriple {
        stationarity: stat,
        eq_violation: eq,
        ineq_violation: ineq,
    }
}

/// KKT residuals at `traj`, recomputed from scratch.
pub fn kkt_residual<M: OcpModel>(
    problem: &OcpProblem<M>,
    config: &IntegratorConfig,
    traj: &Trajectory,
    x0_hat: &DVector<f64>,
) -> Result<KktTriple, GenerationError> {
    let (qp, _) = generate_qp(problem, config, traj, x0_hat, GenerationOptions::default())?;
    Ok(kkt_from_qp(&qp, traj))
}

/// `||e(w)||_1` from a linearisation at `w`.
pub fn infeasibility_from_qp(qp: &StageQpData) -> f64 {
    let mut e = qp.dx0.lp_norm(1);
    for d in &qp.defect {
        e += d.lp_norm(1);
    }
    for k in 0..qp.lower.len() {
        for i in 0..qp.lower[k].len() {
            e += qp.lower[k][i].max(0.0) + (-qp.upper[k][i]).max(0.0);
        }
    }
    e
}

/// Objective `l(w)` and infeasibility `||e(w)||_1`, integrating the
/// dynamics without sensitivities.
pub fn merit_parts<M: OcpModel>(
    problem: &OcpProblem<M>,
    config: &IntegratorConfig,
    traj: &Trajectory,
    x0_hat: &DVector<f64>,
    parallel: bool,
) -> Result<(f64, f64), GenerationError> {
    let dims = problem.dims;
    traj.validate(&dims)?;
    let p = problem.params.as_slice();
    let viol = |r: &DVector<f64>, lb: &DVector<f64>, ub: &DVector<f64>| -> f64 {
        (0..r.len())
            .map(|i| (r[i] - ub[i]).max(0.0) + (lb[i] - r[i]).max(0.0))
            .sum()
    };
    let stage = |k: usize| -> Result<(f64, f64), GenerationError> {
        let (x, u) = (traj.x[k].as_slice(), traj.u[k].as_slice());
        let step = simulate_interval(problem, config, x, u, p, false)
            .map_err(|source| GenerationError::Integration { stage: k, source })?;
        let h = problem.stage_residual_value(x, u, p);
        let cost = 0.5 * h.dot(&(problem.weight(k) * &h));
        let r = problem.stage_constraint_value(x, u, p);
        let e = (&step.x_next - &traj.x[k + 1]).lp_norm(1) + viol(&r, &problem.lb, &problem.ub);
        Ok((cost, e))
    };
    let parts: Vec<Result<(f64, f64), GenerationError>> = if parallel {
        (0..dims.n).into_par_iter().map(stage).collect()
    } else {
        (0..dims.n).map(stage).collect()
    };
    let mut l = 0.0;
    let mut e = (x0_hat - &traj.x[0]).lp_norm(1);
    for part in parts {
        let (c, v) = part?;
        l += c;
        e += v;
    }
    let xn = traj.x[dims.n].as_slice();
    let h = problem.terminal_residual_value(xn, p);
    l += 0.5 * h.dot(&(&problem.wn * &h));
    let r = problem.terminal_constraint_value(xn, p);
    e += viol(&r, &problem.lb_n, &problem.ub_n);
    Ok((l, e))
}

/// `m(w; mu) = l(w) + mu ||e(w)||_1`.
pub fn merit_eval<M: OcpModel>(
    problem: &OcpProblem<M>,
    config: &IntegratorConfig,
    traj: &Trajectory,
    x0_hat: &DVector<f64>,
    mu_pen: f64,
) -> Result<f64, GenerationError> {
    let (l, e) = merit_parts(problem, config, traj, x0_hat, false)?;
    Ok(if mu_pen == 0.0 { l } else { l + mu_pen * e })
}

/// Gradient term `g'dw` and curvature `dw'H dw` of a QP step.
fn step_model(qp: &StageQpData, step: &StageSolution) -> (f64, f64) {
    let n = qp.horizon();
    let mut lin = 0.0;
    let mut quad = 0.0;
    for k in 0..=n {
        let w = if k < n {
            crate::shooting::stack(&step.dx[k], &step.du[k])
        } else {
            step.dx[n].clone()
        };
        lin += qp.g[k].dot(&w);
        quad += w.dot(&(&qp.h[k] * &w));
    }
    (lin, quad)
}

/// Penalty update and merit directional derivative for a QP step.
///
/// `mu >= (g'dw + sigma/2 dw'H dw) / ((1 - rho) ||e||_1)` when `||e||_1 > 0`,
/// never decreasing; `D = g'dw - mu ||e||_1`.
pub fn penalty_and_direction(
    qp: &StageQpData,
    step: &StageSolution,
    mu_prev: f64,
    infeasibility: f64,
    cfg: &SqpConfig,
) -> (f64, f64) {
    let (lin, quad) = step_model(qp, step);
    let mut mu = mu_prev;
    if infeasibility > 0.0 {
        let bound = (lin + 0.5 * cfg.merit_sigma * quad) / ((1.0 - cfg.merit_rho) * infeasibility);
        mu = mu.max(bound);
    }
    (mu, lin - mu * infeasibility)
}

/// `traj + alpha * step`, with multipliers moved by the same fraction
/// towards the QP multipliers.
pub fn apply_step(traj: &Trajectory, step: &StageSolution, alpha: f64) -> Trajectory {
    let mv = |cur: &[DVector<f64>], d: &[DVector<f64>]| -> Vec<DVector<f64>> {
        cur.iter().zip(d).map(|(c, d)| c + d * alpha).collect()
    };
    let toward = |cur: &[DVector<f64>], target: &[DVector<f64>]| -> Vec<DVector<f64>> {
        cur.iter()
            .zip(target)
            .map(|(c, t)| if alpha == 1.0 { t.clone() } else { c + (t - c) * alpha })
            .collect()
    };
    Trajectory {
        x: mv(&traj.x, &step.dx),
        u: mv(&traj.u, &step.du),
        lambda: toward(&traj.lambda, &step.lambda),
        mu: toward(&traj.mu, &step.mu),
    }
}

fn step_norm(step: &StageSolution) -> f64 {
    step.dx
        .iter()
        .chain(step.du.iter())
        .fold(0.0, |m, v| m.max(v.amax()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LineSearchOutcome {
    pub alpha: f64,
    pub traj: Trajectory,
    pub merit: f64,
    pub trials: usize,
    pub failed: bool,
}

/// Backtracking on `m(w + alpha dw) <= m(w) + eta alpha D`.
///
/// Trial points where the dynamics cannot be integrated count as rejected.
/// If no trial is accepted, or `D >= 0` for a nonzero step, the step is
/// taken with `min_alpha` and `failed` is set.
#[allow(clippy::too_many_arguments)]
pub fn line_search<M: OcpModel>(
    problem: &OcpProblem<M>,
    opts: &SolverOptions,
    traj: &Trajectory,
    x0_hat: &DVector<f64>,
    step: &StageSolution,
    mu_pen: f64,
    merit0: f64,
    dd: f64,
) -> LineSearchOutcome {
    let cfg = &opts.sqp;
    let eval = |t: &Trajectory| {
        merit_parts(problem, &opts.integrator, t, x0_hat, opts.parallel)
            .map(|(l, e)| l + mu_pen * e)
            .ok()
            .filter(|m| m.is_finite())
    };
    if step_norm(step) == 0.0 {
        return LineSearchOutcome {
            alpha: 1.0,
            traj: apply_step(traj, step, 1.0),
            merit: merit0,
            trials: 0,
            failed: false,
        };
    }
    let fallback = |trials| {
        let t = apply_step(traj, step, cfg.min_alpha);
        let merit = eval(&t).unwrap_or(f64::NAN);
        LineSearchOutcome {
            alpha: cfg.min_alpha,
            traj: t,
            merit,
            trials,
            failed: true,
        }
    };
    if !(dd < 0.0) {
        return fallback(0);
    }
    let mut alpha = 1.0;
    let mut trials = 0;
    while alpha >= cfg.min_alpha {
        trials += 1;
        let t = apply_step(traj, step, alpha);
        if let Some(m) = eval(&t) {
            if m <= merit0 + cfg.armijo_eta * alpha * dd {
                debug_assert!(m <= merit0 + cfg.armijo_eta * alpha * dd);
                return LineSearchOutcome {
                    alpha,
                    traj: t,
                    merit: m,
                    trials,
                    failed: false,
                };
            }
        }
        alpha *= cfg.backtrack_factor;
    }
    fallback(trials)
}

/// NMPC solver; keeps the previous linearisation for CMoN between calls.
#[derive(Clone, Debug)]
pub struct Solver {
    opts: SolverOptions,
    memory: Option<(StageQpData, Trajectory)>,
}

impl Solver {
    pub fn new(opts: SolverOptions) -> Result<Self, SqpError> {
        opts.validate().map_err(SqpError::Config)?;
        Ok(Solver { opts, memory: None })
    }

    pub fn options(&self) -> &SolverOptions {
        &self.opts
    }

    /// Forgets the stored linearisation; the next generation is a full one.
    pub fn reset(&mut self) {
        self.memory = None;
    }

    /// Moves the stored linearisation one stage forward, matching a shifted
    /// warm start.
    pub fn shift_memory(&mut self) {
        if let Some((qp, traj)) = self.memory.as_mut() {
            fn shift<T: Clone>(v: &mut Vec<T>) {
                if v.len() > 1 {
                    v.remove(0);
                    let last = v.last().expect("nonempty").clone();
                    v.push(last);
                }
            }
            shift(&mut qp.a);
            shift(&mut qp.b);
            shift(&mut qp.phi);
            shift(&mut traj.x);
            shift(&mut traj.u);
            shift(&mut traj.lambda);
        }
    }

    fn cmon_active(&self) -> bool {
        self.opts.cmon.enabled
    }

    fn generate<M: OcpModel>(
        &mut self,
        problem: &OcpProblem<M>,
        traj: &Trajectory,
        x0_hat: &DVector<f64>,
        allow_reuse: bool,
        timings: &mut PhaseTimings,
    ) -> Result<(StageQpData, f64), GenerationError> {
        let t0 = Instant::now();
        let prev = if allow_reuse && self.cmon_active() {
            self.memory
                .as_ref()
                .map(|(qp, traj)| PreviousLinearization { qp, traj })
        } else {
            None
        };
        let gen_opts = GenerationOptions {
            cmon: if self.cmon_active() { Some(&self.opts.cmon) } else { None },
            prev,
            parallel: self.opts.parallel,
        };
        let (qp, flags) = generate_qp(problem, &self.opts.integrator, traj, x0_hat, gen_opts)?;
        let fraction = flags.update_fraction();
        if self.cmon_active() {
            self.memory = Some((qp.clone(), traj.clone()));
        }
        timings.generation += t0.elapsed().as_secs_f64();
        Ok((qp, fraction))
    }

    fn solve_qp(
        &self,
        qp: &StageQpData,
        timings: &mut PhaseTimings,
    ) -> (Option<StageSolution>, QpStatus, usize) {
        match self.opts.qp_path {
            QpPath::Dense => {
                let t0 = Instant::now();
                let cond = condense(qp);
                timings.condensing += t0.elapsed().as_secs_f64();
                let t1 = Instant::now();
                let sol = solve_dense(&cond.h, &cond.g, &cond.c, &cond.lower, &cond.upper, &self.opts.qp);
                timings.qp += t1.elapsed().as_secs_f64();
                if sol.status != QpStatus::Optimal {
                    return (None, sol.status, sol.iters);
                }
                let t2 = Instant::now();
                let st = expand(qp, &cond, &sol);
                timings.condensing += t2.elapsed().as_secs_f64();
                (Some(st), sol.status, sol.iters)
            }
            QpPath::Sparse => {
                let t0 = Instant::now();
                let sol = solve_sparse(qp, &self.opts.qp);
                timings.qp += t0.elapsed().as_secs_f64();
                if sol.status != QpStatus::Optimal {
                    return (None, sol.status, sol.iters);
                }
                (Some(sparse_to_stages(qp, &sol)), sol.status, sol.iters)
            }
        }
    }

    /// Solves to `kkt_tol` (converge mode) or takes one RTI step, depending
    /// on `sqp.mode`.
    pub fn step<M: OcpModel>(
        &mut self,
        problem: &OcpProblem<M>,
        traj: &Trajectory,
        x0_hat: &DVector<f64>,
    ) -> Result<(Trajectory, SolveReport), SqpError> {
        match self.opts.sqp.mode {
            SqpMode::Converge => self.solve(problem, traj, x0_hat),
            SqpMode::Rti => self.rti_step(problem, traj, x0_hat),
        }
    }

    /// One generate/solve/update cycle with a full step. On QP failure the
    /// input trajectory is returned unchanged with status `QpFailed`.
    pub fn rti_step<M: OcpModel>(
        &mut self,
        problem: &OcpProblem<M>,
        traj: &Trajectory,
        x0_hat: &DVector<f64>,
    ) -> Result<(Trajectory, SolveReport), SqpError> {
        if !traj.is_finite() {
            return Err(SqpError::NonFiniteStart);
        }
        let mut report = SolveReport::empty();
        let (qp, fraction) = self.generate(problem, traj, x0_hat, true, &mut report.timings)?;
        let kkt = kkt_from_qp(&qp, traj);
        report.kkt = kkt;
        report.cmon_update_fraction.push(fraction);
        let (step, status, qp_iters) = self.solve_qp(&qp, &mut report.timings);
        report.qp_status = Some(status);
        let Some(step) = step else {
            report.status = SolveStatus::QpFailed;
            return Ok((traj.clone(), report));
        };
        let next = apply_step(traj, &step, 1.0);
        report.status = SolveStatus::RtiStep;
        report.iters = 1;
        report.alpha_history.push(1.0);
        report.iterations.push(IterationLog {
            iter: 0,
            kkt,
            qp_status: status,
            qp_iters,
            step_norm: step_norm(&step),
            alpha: 1.0,
            mu_pen: 0.0,
            merit_before: f64::NAN,
            merit_after: f64::NAN,
            dd: f64::NAN,
            line_search_trials: 0,
            line_search_failed: false,
            cmon_update_fraction: fraction,
        });
        Ok((next, report))
    }

    /// SQP loop with l1-merit backtracking until the KKT residual drops
    /// below `kkt_tol` or `max_iters` steps have been taken.
    pub fn solve<M: OcpModel>(
        &mut self,
        problem: &OcpProblem<M>,
        traj0: &Trajectory,
        x0_hat: &DVector<f64>,
    ) -> Result<(Trajectory, SolveReport), SqpError> {
        if !traj0.is_finite() {
            return Err(SqpError::NonFiniteStart);
        }
        let cfg = self.opts.sqp;
        let mut report = SolveReport::empty();
        let mut traj = traj0.clone();
        let mut merit = MeritState::default();
        let mut iter = 0;
        loop {
            let (mut qp, mut fraction) =
                self.generate(problem, &traj, x0_hat, true, &mut report.timings)?;
            let mut kkt = kkt_from_qp(&qp, &traj);
            // with reused sensitivities the residual is only approximate;
            // confirm convergence on a fresh linearisation
            if kkt.max() <= cfg.kkt_tol && fraction < 1.0 {
                (qp, fraction) = self.generate(problem, &traj, x0_hat, false, &mut report.timings)?;
                kkt = kkt_from_qp(&qp, &traj);
            }
            report.kkt = kkt;
            if kkt.max() <= cfg.kkt_tol {
                report.status = SolveStatus::Converged;
                break;
            }
            if iter == cfg.max_iters {
                report.status = SolveStatus::MaxIters;
                if fraction < 1.0 {
                    report.kkt = kkt_residual(problem, &self.opts.integrator, &traj, x0_hat)?;
                }
                break;
            }
            report.cmon_update_fraction.push(fraction);

            let (step, status, qp_iters) = self.solve_qp(&qp, &mut report.timings);
            report.qp_status = Some(status);
            let Some(step) = step else {
                report.status = SolveStatus::QpFailed;
                break;
            };

            let t0 = Instant::now();
            let infeas = infeasibility_from_qp(&qp);
            let (mu_pen, dd) = penalty_and_direction(&qp, &step, merit.mu_pen, infeas, &cfg);
            let merit0 = qp.cost + mu_pen * infeas;
            let ls = line_search(problem, &self.opts, &traj, x0_hat, &step, mu_pen, merit0, dd);
            report.timings.line_search += t0.elapsed().as_secs_f64();

            merit = MeritState {
                mu_pen,
                last_merit: ls.merit,
                last_dd: dd,
            };
            report.line_search_failed |= ls.failed;
            report.alpha_history.push(ls.alpha);
            report.iterations.push(IterationLog {
                iter,
                kkt,
                qp_status: status,
                qp_iters,
                step_norm: step_norm(&step),
                alpha: ls.alpha,
                mu_pen,
                merit_before: merit0,
                merit_after: ls.merit,
                dd,
                line_search_trials: ls.trials,
                line_search_failed: ls.failed,
                cmon_update_fraction: fraction,
            });
            traj = ls.traj;
            iter += 1;
            report.iters = iter;
        }
        Ok((traj, report))
    }
}

/// One-shot [`Solver::solve`] without CMoN memory.
pub fn sqp_solve<M: OcpModel>(
    problem: &OcpProblem<M>,
    opts: &SolverOptions,
    traj0: &Trajectory,
    x0_hat: &DVector<f64>,
) -> Result<(Trajectory, SolveReport), SqpError> {
    Solver::new(*opts)?.solve(problem, traj0, x0_hat)
}

/// One-shot [`Solver::rti_step`] without CMoN memory.
pub fn rti_step<M: OcpModel>(
    problem: &OcpProblem<M>,
    opts: &SolverOptions,
    traj: &Trajectory,
    x0_hat: &DVector<f64>,
) -> Result<(Trajectory, SolveReport), SqpError> {
    Solver::new(*opts)?.rti_step(problem, traj, x0_hat)
}

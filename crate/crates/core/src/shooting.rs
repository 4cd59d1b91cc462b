//! Multiple-shooting linearisation: builds the stage-structured QP around the
//! current iterate, optionally reusing sensitivities of weakly nonlinear
//! stages (curvature-like measure of nonlinearity, CMoN).

use crate::integrator::{simulate_interval, IntegrationError, IntegratorConfig, StepResult};
use crate::model::{check_len, Dims, ModelError, OcpModel, OcpProblem};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Denominator floor below which a CMoN ratio is considered undefined.
pub const CMON_EPS_DEN: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenerationError {
    #[error("integration failed on shooting interval {stage}: {source}")]
    Integration {
        stage: usize,
        #[source]
        source: IntegrationError,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("CMoN requires the previous linearisation")]
    MissingPrevious,
}

/// Primal-dual iterate of the discretised problem.
///
/// `mu[k]` holds the signed path-constraint multipliers of stage `k`
/// (upper minus lower), with `mu[N]` the terminal ones.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub x: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub lambda: Vec<DVector<f64>>,
    pub mu: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn zeros(dims: &Dims) -> Self {
        Self::constant(dims, &DVector::zeros(dims.nx), &DVector::zeros(dims.nu))
    }

    /// All nodes at `x`, all inputs at `u`, zero multipliers.
    pub fn constant(dims: &Dims, x: &DVector<f64>, u: &DVector<f64>) -> Self {
        let mut mu = vec![DVector::zeros(dims.nc); dims.n];
        mu.push(DVector::zeros(dims.nc_n));
        Trajectory {
            x: vec![x.clone(); dims.n + 1],
            u: vec![u.clone(); dims.n],
            lambda: vec![DVector::zeros(dims.nx); dims.n + 1],
            mu,
        }
    }

    pub fn horizon(&self) -> usize {
        self.u.len()
    }

    pub fn validate(&self, dims: &Dims) -> Result<(), ModelError> {
        check_len("trajectory states", dims.n + 1, self.x.len())?;
        check_len("trajectory inputs", dims.n, self.u.len())?;
        check_len("trajectory multipliers", dims.n + 1, self.lambda.len())?;
        check_len("trajectory path multipliers", dims.n + 1, self.mu.len())?;
        for (k, x) in self.x.iter().enumerate() {
            check_len("state", dims.nx, x.len())?;
            check_len("multiplier", dims.nx, self.lambda[k].len())?;
        }
        for u in &self.u {
            check_len("input", dims.nu, u.len())?;
        }
        for (k, m) in self.mu.iter().enumerate() {
            check_len("path multiplier", if k < dims.n { dims.nc } else { dims.nc_n }, m.len())?;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        let fin = |v: &Vec<DVector<f64>>| v.iter().all(|x| x.iter().all(|e| e.is_finite()));
        fin(&self.x) && fin(&self.u) && fin(&self.lambda) && fin(&self.mu)
    }
}

/// Stage-wise QP data of one linearisation.
///
/// Stage vectors are ordered `(dx_k, du_k)`; `h`, `g`, `c`, `lower`, `upper`
/// have `N + 1` entries (the last being the terminal node), `a`, `b`, `d`,
/// `defect`, `phi` have `N`.
#[derive(Clone, Debug, PartialEq)]
pub struct StageQpData {
    pub nx: usize,
    pub nu: usize,
    pub h: Vec<DMatrix<f64>>,
    pub g: Vec<DVector<f64>>,
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DMatrix<f64>>,
    pub c: Vec<DMatrix<f64>>,
    pub d: Vec<DMatrix<f64>>,
    /// `phi_k(x_k, u_k) - x_{k+1}`
    pub defect: Vec<DVector<f64>>,
    /// `phi_k(x_k, u_k)`
    pub phi: Vec<DVector<f64>>,
    pub lower: Vec<DVector<f64>>,
    pub upper: Vec<DVector<f64>>,
    /// `x0_hat - x_0`
    pub dx0: DVector<f64>,
    /// objective value `l(w)` at the linearisation point
    pub cost: f64,
}

impl StageQpData {
    pub fn horizon(&self) -> usize {
        self.a.len()
    }

    pub fn stage_rows(&self, k: usize) -> usize {
        self.c[k].nrows()
    }

    /// Objective `sum 1/2 w'Hw + g'w` of the stage QP at a point.
    pub fn objective(&self, dx: &[DVector<f64>], du: &[DVector<f64>]) -> f64 {
        let n = self.horizon();
        let mut obj = 0.0;
        for k in 0..=n {
            let w = if k < n { stack(&dx[k], &du[k]) } else { dx[n].clone() };
            obj += 0.5 * w.dot(&(&self.h[k] * &w)) + self.g[k].dot(&w);
        }
        obj
    }
}

pub(crate) fn stack(x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    let mut w = DVector::zeros(x.len() + u.len());
    w.rows_mut(0, x.len()).copy_from(x);
    w.rows_mut(x.len(), u.len()).copy_from(u);
    w
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CmonConfig {
    pub enabled: bool,
    /// primal threshold; defaults to `eps_rel` when unset
    pub eta_pri: Option<f64>,
    /// dual threshold; the dual test is off when unset
    pub eta_dual: Option<f64>,
    pub eps_abs: f64,
    pub eps_rel: f64,
}

impl Default for CmonConfig {
    fn default() -> Self {
        CmonConfig {
            enabled: false,
            eta_pri: None,
            eta_dual: None,
            eps_abs: 0.1,
            eps_rel: 0.1,
        }
    }
}

impl CmonConfig {
    pub fn with_thresholds(eta_pri: f64, eta_dual: f64) -> Self {
        CmonConfig {
            enabled: true,
            eta_pri: Some(eta_pri),
            eta_dual: Some(eta_dual),
            ..Default::default()
        }
    }

    /// Heuristic threshold mapping from QP accuracy tolerances: both
    /// thresholds are set to `eps_rel`.
    pub fn from_tolerances(eps_abs: f64, eps_rel: f64) -> Self {
        CmonConfig {
            enabled: true,
            eta_pri: Some(eps_rel),
            eta_dual: Some(eps_rel),
            eps_abs,
            eps_rel,
        }
    }

    pub fn primal_threshold(&self) -> f64 {
        self.eta_pri.unwrap_or(self.eps_rel)
    }

    pub fn dual_threshold(&self) -> f64 {
        self.eta_dual.unwrap_or(f64::INFINITY)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.primal_threshold() < 0.0 || self.primal_threshold().is_nan() {
            return Err("cmon.eta_pri must be >= 0".into());
        }
        if self.dual_threshold() < 0.0 || self.dual_threshold().is_nan() {
            return Err("cmon.eta_dual must be >= 0".into());
        }
        if !(self.eps_abs >= 0.0 && self.eps_rel >= 0.0) {
            return Err("cmon tolerances must be >= 0".into());
        }
        Ok(())
    }
}

/// Per-stage sensitivity update decisions of one generation.
#[derive(Clone, Debug, PartialEq)]
pub struct CmonFlags {
    /// `true` where the sensitivities were evaluated exactly
    pub update_mask: Vec<bool>,
    /// `None` where the denominator vanished
    pub kappa: Vec<Option<f64>>,
    pub kappa_tilde: Vec<Option<f64>>,
}

impl CmonFlags {
    pub fn all_updated(n: usize) -> Self {
        CmonFlags {
            update_mask: vec![true; n],
            kappa: vec![None; n],
            kappa_tilde: vec![None; n],
        }
    }

    pub fn update_fraction(&self) -> f64 {
        if self.update_mask.is_empty() {
            return 1.0;
        }
        self.update_mask.iter().filter(|&&u| u).count() as f64 / self.update_mask.len() as f64
    }
}

/// Previous linearisation a CMoN generation compares against.
#[derive(Clone, Copy, Debug)]
pub struct PreviousLinearization<'a> {
    pub qp: &'a StageQpData,
    pub traj: &'a Trajectory,
}

/// Settings of one QP generation.
#[derive(Clone, Copy, Debug, Default)]
pub struct GenerationOptions<'a> {
    pub cmon: Option<&'a CmonConfig>,
    pub prev: Option<PreviousLinearization<'a>>,
    /// integrate the shooting intervals on the rayon pool
    pub parallel: bool,
}

struct StageOut {
    h: DMatrix<f64>,
    g: DVector<f64>,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
    defect: DVector<f64>,
    phi: DVector<f64>,
    lower: DVector<f64>,
    upper: DVector<f64>,
    cost: f64,
    updated: bool,
    kappa: Option<f64>,
    kappa_tilde: Option<f64>,
}

fn gauss_newton(
    jac: &DMatrix<f64>,
    res: &DVector<f64>,
    w: &DMatrix<f64>,
) -> (DMatrix<f64>, DVector<f64>, f64) {
    let wj = w * jac;
    let h = jac.transpose() * &wj;
    let h = (&h + h.transpose()) * 0.5;
    let wr = w * res;
    let g = jac.transpose() * &wr;
    (h, g, 0.5 * res.dot(&wr))
}

/// Ratio `|num| / |den|`, `None` when the denominator is below [`CMON_EPS_DEN`].
fn ratio(num: f64, den: f64) -> Option<f64> {
    if den < CMON_EPS_DEN {
        None
    } else {
        Some(num / den)
    }
}

/// Curvature-like measures of one stage.
///
/// `kappa = |phi_cur - phi_prev - J_prev q| / |J_prev q|` with
/// `q = (x_cur - x_prev, u_cur - u_prev)` and `J_prev = [A_prev B_prev]`.
/// The dual measure projects the same linearisation error on the multiplier
/// increment `dlam` of the following node:
/// `|dlam'(phi_cur - phi_prev - J_prev q)| / |dlam' J_prev q|`.
#[allow(clippy::too_many_arguments)]
pub fn cmon_stage(
    x_prev: &DVector<f64>,
    u_prev: &DVector<f64>,
    x_cur: &DVector<f64>,
    u_cur: &DVector<f64>,
    a_prev: &DMatrix<f64>,
    b_prev: &DMatrix<f64>,
    phi_prev: &DVector<f64>,
    phi_cur: &DVector<f64>,
    dlam: &DVector<f64>,
) -> (Option<f64>, Option<f64>) {
    let lin = a_prev * (x_cur - x_prev) + b_prev * (u_cur - u_prev);
    let err = phi_cur - phi_prev - &lin;
    let kappa = ratio(err.norm(), lin.norm());
    let kappa_tilde = ratio(dlam.dot(&err).abs(), dlam.dot(&lin).abs());
    (kappa, kappa_tilde)
}

/// CMoN values of all stages between two iterates.
pub fn cmon_measures(
    prev_traj: &Trajectory,
    cur_traj: &Trajectory,
    prev_a: &[DMatrix<f64>],
    prev_b: &[DMatrix<f64>],
    prev_phi: &[DVector<f64>],
    cur_phi: &[DVector<f64>],
) -> (Vec<Option<f64>>, Vec<Option<f64>>) {
    (0..cur_traj.horizon())
        .map(|k| {
            let dlam = &cur_traj.lambda[k + 1] - &prev_traj.lambda[k + 1];
            cmon_stage(
                &prev_traj.x[k],
                &prev_traj.u[k],
                &cur_traj.x[k],
                &cur_traj.u[k],
                &prev_a[k],
                &prev_b[k],
                &prev_phi[k],
                &cur_phi[k],
                &dlam,
            )
        })
        .unzip()
}

/// Skip decision for one stage: reuse only when the primal measure is defined
/// and at most `eta_pri`, and (if the dual test is enabled) the dual measure is
/// defined and at most `eta_dual`. A zero primal threshold always updates.
pub fn cmon_skip(cfg: &CmonConfig, kappa: Option<f64>, kappa_tilde: Option<f64>) -> bool {
    let eta_pri = cfg.primal_threshold();
    let eta_dual = cfg.dual_threshold();
    if eta_pri <= 0.0 {
        return false;
    }
    let primal_ok = matches!(kappa, Some(k) if k <= eta_pri);
    let dual_ok = eta_dual.is_infinite() || matches!(kappa_tilde, Some(k) if k <= eta_dual);
    primal_ok && dual_ok
}

/// Linearises the discretised problem at `traj` (with initial-value
/// embedding `x0_hat`). Defects, gradients, Hessians, constraint data and
/// residuals are always evaluated; only the sensitivities `(A_k, B_k)` may be
/// copied from `opts.prev` when CMoN judges the stage linear enough.
pub fn generate_qp<M: OcpModel>(
    problem: &OcpProblem<M>,
    config: &IntegratorConfig,
    traj: &Trajectory,
    x0_hat: &DVector<f64>,
    opts: GenerationOptions<'_>,
) -> Result<(StageQpData, CmonFlags), GenerationError> {
    let dims = problem.dims;
    traj.validate(&dims)?;
    check_len("initial state", dims.nx, x0_hat.len())?;
    let cmon = opts.cmon.filter(|c| c.enabled);
    if let Some(prev) = opts.prev {
        prev.traj.validate(&dims)?;
    }
    let p = problem.params.as_slice();
    let n = dims.n;

    let stage = |k: usize| -> Result<StageOut, GenerationError> {
        let x = traj.x[k].as_slice();
        let u = traj.u[k].as_slice();
        let wrap = |source| GenerationError::Integration { stage: k, source };

        let (step, updated, kappa, kappa_tilde): (StepResult, bool, Option<f64>, Option<f64>) =
            match (cmon, opts.prev) {
                (Some(cfg), Some(prev)) => {
                    let value = simulate_interval(problem, config, x, u, p, false).map_err(wrap)?;
                    let dlam = &traj.lambda[k + 1] - &prev.traj.lambda[k + 1];
                    let (kappa, kappa_tilde) = cmon_stage(
                        &prev.traj.x[k],
                        &prev.traj.u[k],
                        &traj.x[k],
                        &traj.u[k],
                        &prev.qp.a[k],
                        &prev.qp.b[k],
                        &prev.qp.phi[k],
                        &value.x_next,
                        &dlam,
                    );
                    if cmon_skip(cfg, kappa, kappa_tilde) {
                        (value, false, kappa, kappa_tilde)
                    } else {
                        let full = simulate_interval(problem, config, x, u, p, true).map_err(wrap)?;
                        (full, true, kappa, kappa_tilde)
                    }
                }
                _ => (
                    simulate_interval(problem, config, x, u, p, true).map_err(wrap)?,
                    true,
                    None,
                    None,
                ),
            };
        let (a, b) = match step.sens {
            Some(s) => (s.a, s.b),
            None => {
                let prev = opts.prev.expect("skip implies previous data");
                (prev.qp.a[k].clone(), prev.qp.b[k].clone())
            }
        };
        let defect = &step.x_next - &traj.x[k + 1];

        let res = problem.stage_residual_jac_unchecked(x, u, p);
        let (h, g, cost) = gauss_newton(&res.jac, &res.value, problem.weight(k));
        let con = problem.stage_constraint_jac_unchecked(x, u, p);
        Ok(StageOut {
            h,
            g,
            a,
            b,
            c: con.c,
            d: con.d.expect("stage constraint has input jacobian"),
            defect,
            phi: step.x_next,
            lower: &problem.lb - &con.value,
            upper: &problem.ub - &con.value,
            cost,
            updated,
            kappa,
            kappa_tilde,
        })
    };

    let outs: Vec<Result<StageOut, GenerationError>> = if opts.parallel {
        (0..n).into_par_iter().map(stage).collect()
    } else {
        (0..n).map(stage).collect()
    };

    let mut qp = StageQpData {
        nx: dims.nx,
        nu: dims.nu,
        h: Vec::with_capacity(n + 1),
        g: Vec::with_capacity(n + 1),
        a: Vec::with_capacity(n),
        b: Vec::with_capacity(n),
        c: Vec::with_capacity(n + 1),
        d: Vec::with_capacity(n),
        defect: Vec::with_capacity(n),
        phi: Vec::with_capacity(n),
        lower: Vec::with_capacity(n + 1),
        upper: Vec::with_capacity(n + 1),
        dx0: x0_hat - &traj.x[0],
        cost: 0.0,
    };
    let mut flags = CmonFlags::all_updated(n);
    for (k, out) in outs.into_iter().enumerate() {
        let s = out?;
        qp.h.push(s.h);
        qp.g.push(s.g);
        qp.a.push(s.a);
        qp.b.push(s.b);
        qp.c.push(s.c);
        qp.d.push(s.d);
        qp.defect.push(s.defect);
        qp.phi.push(s.phi);
        qp.lower.push(s.lower);
        qp.upper.push(s.upper);
        qp.cost += s.cost;
        flags.update_mask[k] = s.updated;
        flags.kappa[k] = s.kappa;
        flags.kappa_tilde[k] = s.kappa_tilde;
    }

    let xn = traj.x[n].as_slice();
    let res = problem.terminal_residual_jac_unchecked(xn, p);
    let (h, g, cost) = gauss_newton(&res.jac, &res.value, &problem.wn);
    qp.h.push(h);
    qp.g.push(g);
    qp.cost += cost;
    let con = problem.terminal_constraint_jac_unchecked(xn, p);
    qp.lower.push(&problem.lb_n - &con.value);
    qp.upper.push(&problem.ub_n - &con.value);
    qp.c.push(con.c);

    Ok((qp, flags))
}

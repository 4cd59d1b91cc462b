//! Fixed-step Runge-Kutta integration of one shooting interval with exact
//! first-order sensitivities of the discrete map.

use crate::model::{OcpModel, OcpProblem};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegrationError {
    #[error("non-finite value at Runge-Kutta stage {stage} of sub-step {step}")]
    NonFinite { step: usize, stage: usize },
    #[error("stage Newton iteration did not converge in {iters} iterations (residual {residual:e})")]
    NewtonFailed { iters: usize, residual: f64 },
    #[error("singular stage Newton matrix")]
    SingularNewtonMatrix,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "erk4")]
    Erk4,
    #[serde(rename = "irk-gl2")]
    IrkGl2,
    #[serde(rename = "irk-gl3")]
    IrkGl3,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Erk4, Scheme::IrkGl2, Scheme::IrkGl3];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Erk4 => "erk4",
            Scheme::IrkGl2 => "irk-gl2",
            Scheme::IrkGl3 => "irk-gl3",
        }
    }

    pub fn parse(s: &str) -> Option<Scheme> {
        Scheme::ALL.into_iter().find(|sc| sc.name() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorConfig {
    pub scheme: Scheme,
    /// sub-steps per shooting interval
    pub steps: usize,
    pub newton_tol: f64,
    pub newton_max_iters: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            scheme: Scheme::Erk4,
            steps: 2,
            newton_tol: 1e-10,
            newton_max_iters: 20,
        }
    }
}

impl IntegratorConfig {
    pub fn newton(&self) -> NewtonSettings {
        NewtonSettings {
            tol: self.newton_tol,
            max_iters: self.newton_max_iters,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.steps < 1 {
            return Err("integrator.steps must be >= 1".into());
        }
        if !(self.newton_tol > 0.0) {
            return Err("integrator.newton_tol must be > 0".into());
        }
        if self.newton_max_iters < 1 {
            return Err("integrator.newton_max_iters must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonSettings {
    pub tol: f64,
    pub max_iters: usize,
}

/// Jacobians of the discrete map with respect to the interval's start state
/// and input.
#[derive(Clone, Debug, PartialEq)]
pub struct Sensitivity {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub x_next: DVector<f64>,
    pub sens: Option<Sensitivity>,
    /// largest Newton iteration count over all sub-steps (0 for explicit)
    pub newton_iters: usize,
}

fn split(nx: usize, m: DMatrix<f64>) -> Sensitivity {
    let nu = m.ncols() - nx;
    Sensitivity {
        a: m.columns(0, nx).into_owned(),
        b: m.columns(nx, nu).into_owned(),
    }
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Evaluates `f` and, if requested, `[df/dx | df/du]` at `(x, u)`.
fn stage_eval<M: OcpModel>(
    problem: &OcpProblem<M>,
    x: &[f64],
    u: &[f64],
    p: &[f64],
    with_jac: bool,
) -> (DVector<f64>, Option<DMatrix<f64>>) {
    let nx = problem.dims.nx;
    if with_jac {
        let j = problem.dynamics_jac_unchecked(x, u, p);
        let mut jm = DMatrix::zeros(nx, nx + u.len());
        jm.columns_mut(0, nx).copy_from(&j.dfdx);
        jm.columns_mut(nx, u.len()).copy_from(&j.dfdu);
        (j.value, Some(jm))
    } else {
        let mut out = vec![0.0; nx];
        problem.dynamics_into(x, u, p, &mut out);
        (DVector::from_vec(out), None)
    }
}

/// One classical RK4 step. The sensitivities are the derivatives of the RK4
/// update itself, propagated through the four stages.
pub fn erk4_step<M: OcpModel>(
    problem: &OcpProblem<M>,
    x: &[f64],
    u: &[f64],
    p: &[f64],
    h: f64,
    with_sens: bool,
) -> Result<StepResult, IntegrationError> {
    debug_assert!(h > 0.0);
    let nx = problem.dims.nx;
    let nw = nx + u.len();
    let xv = DVector::from_column_slice(x);
    // d(stage point)/d(x, u) for the first stage
    let seed = if with_sens {
        Some(DMatrix::<f64>::identity(nx, nw))
    } else {
        None
    };

    let coef = [0.5 * h, 0.5 * h, h];
    let mut ks: Vec<DVector<f64>> = Vec::with_capacity(4);
    let mut dks: Vec<DMatrix<f64>> = Vec::with_capacity(4);
    let mut point = xv.clone();
    let mut dpoint = seed.clone();
    for stage in 0..4 {
        let (k, jac) = stage_eval(problem, point.as_slice(), u, p, with_sens);
        if !all_finite(k.as_slice()) {
            return Err(IntegrationError::NonFinite { step: 0, stage });
        }
        if let (Some(jm), Some(dp)) = (jac, dpoint.as_ref()) {
            // dk = fx * dpoint + [0 | fu]
            let fx = jm.columns(0, nx);
            let mut dk = fx * dp;
            let mut du = dk.columns_mut(nx, nw - nx);
            du += jm.columns(nx, nw - nx);
            dks.push(dk);
        }
        if stage < 3 {
            point = &xv + &k * coef[stage];
            if let Some(s) = seed.as_ref() {
                dpoint = Some(s + &dks[stage] * coef[stage]);
            }
        }
        ks.push(k);
    }
    let incr = &ks[0] + &ks[1] * 2.0 + &ks[2] * 2.0 + &ks[3];
    let x_next = &xv + incr * (h / 6.0);
    if !all_finite(x_next.as_slice()) {
        return Err(IntegrationError::NonFinite { step: 0, stage: 4 });
    }
    let sens = seed.map(|s| {
        let dincr = &dks[0] + &dks[1] * 2.0 + &dks[2] * 2.0 + &dks[3];
        split(nx, s + dincr * (h / 6.0))
    });
    Ok(StepResult {
        x_next,
        sens,
        newton_iters: 0,
    })
}

/// Butcher tableau of an s-stage Gauss-Legendre collocation method.
#[derive(Clone, Debug)]
pub struct GaussLegendre {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(stages: usize) -> Option<Self> {
        match stages {
            1 => Some(GaussLegendre {
                a: vec![vec![0.5]],
                b: vec![1.0],
                c: vec![0.5],
            }),
            2 => {
                let r = 3f64.sqrt() / 6.0;
                Some(GaussLegendre {
                    a: vec![vec![0.25, 0.25 - r], vec![0.25 + r, 0.25]],
                    b: vec![0.5, 0.5],
                    c: vec![0.5 - r, 0.5 + r],
                })
            }
            3 => {
                let r = 15f64.sqrt();
                Some(GaussLegendre {
                    a: vec![
                        vec![5.0 / 36.0, 2.0 / 9.0 - r / 15.0, 5.0 / 36.0 - r / 30.0],
                        vec![5.0 / 36.0 + r / 24.0, 2.0 / 9.0, 5.0 / 36.0 - r / 24.0],
                        vec![5.0 / 36.0 + r / 30.0, 2.0 / 9.0 + r / 15.0, 5.0 / 36.0],
                    ],
                    b: vec![5.0 / 18.0, 4.0 / 9.0, 5.0 / 18.0],
                    c: vec![0.5 - r / 10.0, 0.5, 0.5 + r / 10.0],
                })
            }
            _ => None,
        }
    }

    pub fn stages(&self) -> usize {
        self.b.len()
    }
}

/// One implicit Gauss-Legendre step. Stage derivatives are found by full
/// Newton iteration started from `f(x, u)` until the stage residual satisfies
/// `|R|_inf <= tol * (1 + |K|_inf)`; sensitivities come from the implicit
/// function theorem using the Newton matrix at the converged stages.
///
/// # Panics
/// If `stages` is not 1, 2 or 3.
pub fn irk_gl_step<M: OcpModel>(
    problem: &OcpProblem<M>,
    x: &[f64],
    u: &[f64],
    p: &[f64],
    h: f64,
    stages: usize,
    newton: NewtonSettings,
    with_sens: bool,
) -> Result<StepResult, IntegrationError> {
    let tab = GaussLegendre::new(stages).expect("Gauss-Legendre supports 1, 2 or 3 stages");
    irk_step_with(problem, &tab, x, u, p, h, newton, with_sens)
}

#[allow(clippy::too_many_arguments)]
fn irk_step_with<M: OcpModel>(
    problem: &OcpProblem<M>,
    tab: &GaussLegendre,
    x: &[f64],
    u: &[f64],
    p: &[f64],
    h: f64,
    newton: NewtonSettings,
    with_sens: bool,
) -> Result<StepResult, IntegrationError> {
    let nx = problem.dims.nx;
    let nu = u.len();
    let s = tab.stages();
    let xv = DVector::from_column_slice(x);

    let (f0, _) = stage_eval(problem, x, u, p, false);
    if !all_finite(f0.as_slice()) {
        return Err(IntegrationError::NonFinite { step: 0, stage: 0 });
    }
    let mut k = DVector::zeros(s * nx);
    for i in 0..s {
        k.rows_mut(i * nx, nx).copy_from(&f0);
    }

    let mut iters = 0;
    let mut residual;
    let lu = loop {
        iters += 1;
        let mut r = DVector::zeros(s * nx);
        let mut jacs = Vec::with_capacity(s);
        for i in 0..s {
            let mut xi = xv.clone();
            for j in 0..s {
                xi += k.rows(j * nx, nx) * (h * tab.a[i][j]);
            }
            let (fi, ji) = stage_eval(problem, xi.as_slice(), u, p, true);
            if !all_finite(fi.as_slice()) {
                return Err(IntegrationError::NonFinite { step: 0, stage: i });
            }
            r.rows_mut(i * nx, nx).copy_from(&(k.rows(i * nx, nx) - &fi));
            jacs.push(ji.expect("jacobian requested"));
        }
        residual = r.amax();

        let mut m = DMatrix::<f64>::identity(s * nx, s * nx);
        for i in 0..s {
            let fx = jacs[i].columns(0, nx);
            for j in 0..s {
                let mut blk = m.view_mut((i * nx, j * nx), (nx, nx));
                blk -= fx * (h * tab.a[i][j]);
            }
        }
        let lu = m.lu();
        if residual <= newton.tol * (1.0 + k.amax()) {
            break Some((lu, jacs));
        }
        if iters >= newton.max_iters || !residual.is_finite() {
            break None;
        }
        let dk = lu.solve(&(-r)).ok_or(IntegrationError::SingularNewtonMatrix)?;
        k += dk;
    };
    let (lu, jacs) = lu.ok_or(IntegrationError::NewtonFailed { iters, residual })?;

    let mut x_next = xv.clone();
    for i in 0..s {
        x_next += k.rows(i * nx, nx) * (h * tab.b[i]);
    }
    if !all_finite(x_next.as_slice()) {
        return Err(IntegrationError::NonFinite { step: 0, stage: s });
    }

    let sens = if with_sens {
        let mut rhs = DMatrix::zeros(s * nx, nx + nu);
        for (i, j) in jacs.iter().enumerate() {
            rhs.rows_mut(i * nx, nx).copy_from(j);
        }
        let dk = lu.solve(&rhs).ok_or(IntegrationError::SingularNewtonMatrix)?;
        let mut d = DMatrix::<f64>::identity(nx, nx + nu);
        for i in 0..s {
            d += dk.rows(i * nx, nx) * (h * tab.b[i]);
        }
        Some(split(nx, d))
    } else {
        None
    };
    Ok(StepResult {
        x_next,
        sens,
        newton_iters: iters,
    })
}

/// Integrates over a span of length `span` using `config.steps` equal
/// sub-steps, chaining sensitivities `A = A_m ... A_1`.
pub fn integrate<M: OcpModel>(
    problem: &OcpProblem<M>,
    config: &IntegratorConfig,
    x: &[f64],
    u: &[f64],
    p: &[f64],
    span: f64,
    with_sens: bool,
) -> Result<StepResult, IntegrationError> {
    let steps = config.steps.max(1);
    let h = span / steps as f64;
    let tab = match config.scheme {
        Scheme::Erk4 => None,
        Scheme::IrkGl2 => GaussLegendre::new(2),
        Scheme::IrkGl3 => GaussLegendre::new(3),
    };
    let mut acc: Option<StepResult> = None;
    for step in 0..steps {
        let xs = acc.as_ref().map(|r| r.x_next.as_slice()).unwrap_or(x);
        let res = match &tab {
            None => erk4_step(problem, xs, u, p, h, with_sens),
            Some(t) => irk_step_with(problem, t, xs, u, p, h, config.newton(), with_sens),
        }
        .map_err(|e| match e {
            IntegrationError::NonFinite { stage, .. } => IntegrationError::NonFinite { step, stage },
            other => other,
        })?;
        acc = Some(match acc {
            None => res,
            Some(prev) => {
                let sens = match (prev.sens, res.sens) {
                    (Some(ps), Some(cs)) => Some(Sensitivity {
                        b: &cs.a * &ps.b + &cs.b,
                        a: &cs.a * &ps.a,
                    }),
                    _ => None,
                };
                StepResult {
                    x_next: res.x_next,
                    sens,
                    newton_iters: prev.newton_iters.max(res.newton_iters),
                }
            }
        });
    }
    Ok(acc.expect("at least one step"))
}

/// The shooting operator: integrates one interval of length `Ts`.
pub fn simulate_interval<M: OcpModel>(
    problem: &OcpProblem<M>,
    config: &IntegratorConfig,
    x: &[f64],
    u: &[f64],
    p: &[f64],
    with_sens: bool,
) -> Result<StepResult, IntegrationError> {
    integrate(problem, config, x, u, p, problem.dims.ts, with_sens)
}

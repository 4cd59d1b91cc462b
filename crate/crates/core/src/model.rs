//! Continuous-time optimal control problem definition.

use crate::ad::{jacobian, jacobian2, Scalar, Tangent};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("weight matrix {0} is not symmetric")]
    NonSymmetricWeight(&'static str),
    #[error("weight matrix {0} is not positive semidefinite (min eigenvalue {1:e})")]
    IndefiniteWeight(&'static str, f64),
    #[error("bounds {what}: lower bound exceeds upper bound at row {row}")]
    InvertedBounds { what: &'static str, row: usize },
    #[error("invalid horizon: {0}")]
    InvalidHorizon(String),
}

/// Sizes declared by a model, independent of the discretisation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelShape {
    pub nx: usize,
    pub nu: usize,
    /// stage residual length
    pub nr: usize,
    /// terminal residual length
    pub nr_n: usize,
    /// stage path constraints
    pub nc: usize,
    /// terminal constraints
    pub nc_n: usize,
    /// online parameters
    pub np: usize,
}

/// Problem dimensions including the shooting grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dims {
    pub nx: usize,
    pub nu: usize,
    pub nr: usize,
    pub nr_n: usize,
    pub nc: usize,
    pub nc_n: usize,
    /// number of shooting intervals
    pub n: usize,
    /// shooting interval length
    pub ts: f64,
    pub np: usize,
}

impl Dims {
    pub fn new(shape: ModelShape, n: usize, ts: f64) -> Result<Self, ModelError> {
        if n < 1 {
            return Err(ModelError::InvalidHorizon(format!("N must be >= 1, got {n}")));
        }
        if !(ts > 0.0 && ts.is_finite()) {
            return Err(ModelError::InvalidHorizon(format!("Ts must be > 0, got {ts}")));
        }
        Ok(Dims {
            nx: shape.nx,
            nu: shape.nu,
            nr: shape.nr,
            nr_n: shape.nr_n,
            nc: shape.nc,
            nc_n: shape.nc_n,
            n,
            ts,
            np: shape.np,
        })
    }

    pub fn nw(&self) -> usize {
        self.nx + self.nu
    }
}

/// A model authored once against [`Scalar`] so it can be evaluated on plain
/// numbers and on tangents.
///
/// Parameters `p` are passed as plain numbers; no derivatives are taken with
/// respect to them.
pub trait OcpModel: Send + Sync {
    fn shape(&self) -> ModelShape;

    /// Explicit ODE right-hand side `xdot = f(x, u, p)`.
    fn dynamics<S: Scalar>(&self, x: &[S], u: &[S], p: &[f64], xdot: &mut [S]);

    /// Least-squares stage residual `h_k(x, u, p)`.
    fn stage_residual<S: Scalar>(&self, x: &[S], u: &[S], p: &[f64], out: &mut [S]);

    /// Least-squares terminal residual `h_N(x, p)`.
    fn terminal_residual<S: Scalar>(&self, x: &[S], p: &[f64], out: &mut [S]);

    fn stage_constraint<S: Scalar>(&self, _x: &[S], _u: &[S], _p: &[f64], _out: &mut [S]) {}

    fn terminal_constraint<S: Scalar>(&self, _x: &[S], _p: &[f64], _out: &mut [S]) {}
}

/// Value and Jacobians of the dynamics at a point.
#[derive(Clone, Debug)]
pub struct DynamicsJacobian {
    pub value: DVector<f64>,
    pub dfdx: DMatrix<f64>,
    pub dfdu: DMatrix<f64>,
}

#[derive(Clone, Debug)]
pub struct ResidualJacobian {
    pub value: DVector<f64>,
    /// `nr x (nx + nu)` for stages, `nr_n x nx` at the terminal node.
    pub jac: DMatrix<f64>,
}

#[derive(Clone, Debug)]
pub struct ConstraintJacobian {
    pub value: DVector<f64>,
    pub c: DMatrix<f64>,
    /// `None` at the terminal node.
    pub d: Option<DMatrix<f64>>,
}

/// An OCP: model, horizon, least-squares weights, constraint bounds and the
/// current online parameter vector. Immutable apart from `set_params`.
#[derive(Clone, Debug)]
pub struct OcpProblem<M> {
    pub model: M,
    pub dims: Dims,
    pub w: DMatrix<f64>,
    pub wn: DMatrix<f64>,
    /// Optional per-stage weights replacing `w` for stages `0..N`.
    pub stage_weights: Option<Vec<DMatrix<f64>>>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
    pub lb_n: DVector<f64>,
    pub ub_n: DVector<f64>,
    pub params: Vec<f64>,
}

fn check_weight(name: &'static str, w: &DMatrix<f64>, n: usize) -> Result<(), ModelError> {
    if w.nrows() != n || w.ncols() != n {
        return Err(ModelError::DimensionMismatch {
            what: name,
            expected: n,
            got: if w.nrows() != n { w.nrows() } else { w.ncols() },
        });
    }
    if n == 0 {
        return Ok(());
    }
    let scale = w.amax().max(1.0);
    if (w - w.transpose()).amax() > 1e-12 * scale {
        return Err(ModelError::NonSymmetricWeight(name));
    }
    let min_eig = w.clone().symmetric_eigenvalues().min();
    if min_eig < -1e-12 * scale {
        return Err(ModelError::IndefiniteWeight(name, min_eig));
    }
    Ok(())
}

fn check_bounds(
    what: &'static str,
    lb: &DVector<f64>,
    ub: &DVector<f64>,
    n: usize,
) -> Result<(), ModelError> {
    check_len(what, n, lb.len())?;
    check_len(what, n, ub.len())?;
    for (row, (l, u)) in lb.iter().zip(ub.iter()).enumerate() {
        if l > u || l.is_nan() || u.is_nan() {
            return Err(ModelError::InvertedBounds { what, row });
        }
    }
    Ok(())
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), ModelError> {
    if expected != got {
        Err(ModelError::DimensionMismatch { what, expected, got })
    } else {
        Ok(())
    }
}

impl<M: OcpModel> OcpProblem<M> {
    /// Creates a problem with unbounded constraints and zero parameters.
    pub fn new(
        model: M,
        n: usize,
        ts: f64,
        w: DMatrix<f64>,
        wn: DMatrix<f64>,
    ) -> Result<Self, ModelError> {
        let dims = Dims::new(model.shape(), n, ts)?;
        check_weight("W", &w, dims.nr)?;
        check_weight("WN", &wn, dims.nr_n)?;
        Ok(OcpProblem {
            model,
            lb: DVector::from_element(dims.nc, f64::NEG_INFINITY),
            ub: DVector::from_element(dims.nc, f64::INFINITY),
            lb_n: DVector::from_element(dims.nc_n, f64::NEG_INFINITY),
            ub_n: DVector::from_element(dims.nc_n, f64::INFINITY),
            params: vec![0.0; dims.np],
            dims,
            w,
            wn,
            stage_weights: None,
        })
    }

    pub fn with_stage_bounds(mut self, lb: DVector<f64>, ub: DVector<f64>) -> Result<Self, ModelError> {
        check_bounds("stage constraint bounds", &lb, &ub, self.dims.nc)?;
        self.lb = lb;
        self.ub = ub;
        Ok(self)
    }

    pub fn with_terminal_bounds(mut self, lb: DVector<f64>, ub: DVector<f64>) -> Result<Self, ModelError> {
        check_bounds("terminal constraint bounds", &lb, &ub, self.dims.nc_n)?;
        self.lb_n = lb;
        self.ub_n = ub;
        Ok(self)
    }

    pub fn with_stage_weights(mut self, weights: Vec<DMatrix<f64>>) -> Result<Self, ModelError> {
        check_len("stage weights", self.dims.n, weights.len())?;
        for w in &weights {
            check_weight("W_k", w, self.dims.nr)?;
        }
        self.stage_weights = Some(weights);
        Ok(self)
    }

    pub fn with_params(mut self, p: Vec<f64>) -> Result<Self, ModelError> {
        self.set_params(&p)?;
        Ok(self)
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<(), ModelError> {
        check_len("parameter vector", self.dims.np, p.len())?;
        self.params.clear();
        self.params.extend_from_slice(p);
        Ok(())
    }

    /// Weight of stage `k`; `k == N` returns the terminal weight.
    pub fn weight(&self, k: usize) -> &DMatrix<f64> {
        if k >= self.dims.n {
            &self.wn
        } else {
            match &self.stage_weights {
                Some(ws) => &ws[k],
                None => &self.w,
            }
        }
    }

    fn check_xu(&self, x: &[f64], u: Option<&[f64]>, p: &[f64]) -> Result<(), ModelError> {
        check_len("state", self.dims.nx, x.len())?;
        if let Some(u) = u {
            check_len("input", self.dims.nu, u.len())?;
        }
        check_len("parameter vector", self.dims.np, p.len())
    }

    pub fn eval_dynamics(&self, x: &[f64], u: &[f64], p: &[f64]) -> Result<DVector<f64>, ModelError> {
        self.check_xu(x, Some(u), p)?;
        let mut out = vec![0.0; self.dims.nx];
        self.dynamics_into(x, u, p, &mut out);
        Ok(DVector::from_vec(out))
    }

    pub fn jac_dynamics(&self, x: &[f64], u: &[f64], p: &[f64]) -> Result<DynamicsJacobian, ModelError> {
        self.check_xu(x, Some(u), p)?;
        Ok(self.dynamics_jac_unchecked(x, u, p))
    }

    pub fn eval_residual_and_jac(
        &self,
        x: &[f64],
        u: &[f64],
        p: &[f64],
        terminal: bool,
    ) -> Result<ResidualJacobian, ModelError> {
        if terminal {
            self.check_xu(x, None, p)?;
            Ok(self.terminal_residual_jac_unchecked(x, p))
        } else {
            self.check_xu(x, Some(u), p)?;
            Ok(self.stage_residual_jac_unchecked(x, u, p))
        }
    }

    pub fn eval_constraint_and_jac(
        &self,
        x: &[f64],
        u: &[f64],
        p: &[f64],
        terminal: bool,
    ) -> Result<ConstraintJacobian, ModelError> {
        if terminal {
            self.check_xu(x, None, p)?;
            Ok(self.terminal_constraint_jac_unchecked(x, p))
        } else {
            self.check_xu(x, Some(u), p)?;
            Ok(self.stage_constraint_jac_unchecked(x, u, p))
        }
    }

    // Unchecked evaluation used on hot paths once dimensions were validated.

    pub(crate) fn dynamics_into(&self, x: &[f64], u: &[f64], p: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        self.model.dynamics(x, u, p, out);
    }

    pub(crate) fn dynamics_jac_unchecked(&self, x: &[f64], u: &[f64], p: &[f64]) -> DynamicsJacobian {
        let (v, jx, ju) = jacobian2(self.dims.nx, x, u, |xt, ut, out: &mut [Tangent]| {
            self.model.dynamics(xt, ut, p, out)
        });
        DynamicsJacobian {
            value: DVector::from_vec(v),
            dfdx: jx,
            dfdu: ju,
        }
    }

    pub(crate) fn stage_residual_value(&self, x: &[f64], u: &[f64], p: &[f64]) -> DVector<f64> {
        let mut out = vec![0.0; self.dims.nr];
        self.model.stage_residual(x, u, p, &mut out);
        DVector::from_vec(out)
    }

    pub(crate) fn terminal_residual_value(&self, x: &[f64], p: &[f64]) -> DVector<f64> {
        let mut out = vec![0.0; self.dims.nr_n];
        self.model.terminal_residual(x, p, &mut out);
        DVector::from_vec(out)
    }

    pub(crate) fn stage_constraint_value(&self, x: &[f64], u: &[f64], p: &[f64]) -> DVector<f64> {
        let mut out = vec![0.0; self.dims.nc];
        self.model.stage_constraint(x, u, p, &mut out);
        DVector::from_vec(out)
    }

    pub(crate) fn terminal_constraint_value(&self, x: &[f64], p: &[f64]) -> DVector<f64> {
        let mut out = vec![0.0; self.dims.nc_n];
        self.model.terminal_constraint(x, p, &mut out);
        DVector::from_vec(out)
    }

    pub(crate) fn stage_residual_jac_unchecked(&self, x: &[f64], u: &[f64], p: &[f64]) -> ResidualJacobian {
        let (v, jx, ju) = jacobian2(self.dims.nr, x, u, |xt, ut, out: &mut [Tangent]| {
            self.model.stage_residual(xt, ut, p, out)
        });
        let mut jac = DMatrix::zeros(self.dims.nr, self.dims.nw());
        jac.columns_mut(0, self.dims.nx).copy_from(&jx);
        jac.columns_mut(self.dims.nx, self.dims.nu).copy_from(&ju);
        ResidualJacobian {
            value: DVector::from_vec(v),
            jac,
        }
    }

    pub(crate) fn terminal_residual_jac_unchecked(&self, x: &[f64], p: &[f64]) -> ResidualJacobian {
        let (v, jx) = jacobian(self.dims.nr_n, x, |xt, out: &mut [Tangent]| {
            self.model.terminal_residual(xt, p, out)
        });
        ResidualJacobian {
            value: DVector::from_vec(v),
            jac: jx,
        }
    }

    pub(crate) fn stage_constraint_jac_unchecked(&self, x: &[f64], u: &[f64], p: &[f64]) -> ConstraintJacobian {
        let (v, c, d) = jacobian2(self.dims.nc, x, u, |xt, ut, out: &mut [Tangent]| {
            self.model.stage_constraint(xt, ut, p, out)
        });
        ConstraintJacobian {
            value: DVector::from_vec(v),
            c,
            d: Some(d),
        }
    }

    pub(crate) fn terminal_constraint_jac_unchecked(&self, x: &[f64], p: &[f64]) -> ConstraintJacobian {
        let (v, c) = jacobian(self.dims.nc_n, x, |xt, out: &mut [Tangent]| {
            self.model.terminal_constraint(xt, p, out)
        });
        ConstraintJacobian {
            value: DVector::from_vec(v),
            c,
            d: None,
        }
    }
}

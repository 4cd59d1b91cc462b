//! Interior-point QP solvers for the condensed (dense) and stage-structured
//! (sparse) subproblems.
//!
//! Both paths share one Mehrotra predictor-corrector loop in [`ipm`]; they
//! differ only in how the Newton system is factorised: a dense Cholesky
//! factorisation for the condensed QP, a backward Riccati recursion for the
//! stage QP.

mod dense;
mod ipm;
mod riccati;

pub use dense::solve_dense;
pub use riccati::{solve_sparse, sparse_to_stages};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, LU};
use serde::{Deserialize, Serialize};

/// Factor of a symmetric matrix that should be positive definite.
///
/// Near convergence the barrier terms spread the spectrum over many orders
/// of magnitude and round-off can produce a tiny negative Cholesky pivot;
/// the same matrix is then factorised by pivoted LU instead.
#[derive(Clone, Debug)]
pub(crate) enum SpdFactor {
    Cholesky(Cholesky<f64, Dyn>),
    Lu(LU<f64, Dyn, Dyn>),
}

impl SpdFactor {
    pub(crate) fn new(k: DMatrix<f64>) -> Option<Self> {
        match Cholesky::new(k.clone()) {
            Some(c) => Some(SpdFactor::Cholesky(c)),
            None => {
                let lu = k.lu();
                lu.is_invertible().then_some(SpdFactor::Lu(lu))
            }
        }
    }

    pub(crate) fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        match self {
            SpdFactor::Cholesky(c) => c.solve(b),
            SpdFactor::Lu(lu) => lu.solve(b).expect("checked invertible"),
        }
    }

    pub(crate) fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            SpdFactor::Cholesky(c) => c.solve(b),
            SpdFactor::Lu(lu) => lu.solve(b).expect("checked invertible"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    MaxIters,
    Infeasible,
    NumericalFailure,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QpSolverConfig {
    pub tol: f64,
    pub max_iters: usize,
    pub reg_eps: f64,
}

impl Default for QpSolverConfig {
    fn default() -> Self {
        QpSolverConfig {
            tol: 1e-8,
            max_iters: 100,
            reg_eps: 1e-9,
        }
    }
}

impl QpSolverConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.tol > 0.0) {
            return Err("qp.tol must be > 0".into());
        }
        if self.max_iters < 1 {
            return Err("qp.max_iters must be >= 1".into());
        }
        if !(self.reg_eps >= 0.0) {
            return Err("qp.reg_eps must be >= 0".into());
        }
        Ok(())
    }
}

/// Result of a QP solve.
///
/// Inequality rows are two-sided `lower <= C z <= upper`; each row has a
/// lower and an upper multiplier, both nonnegative. On the sparse path the
/// primal is laid out as `(x_0, .., x_N, u_0, .., u_{N-1})` and `eq_duals`
/// holds the multipliers of the initial-value and continuity constraints.
#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub primal: DVector<f64>,
    pub dual_lower: DVector<f64>,
    pub dual_upper: DVector<f64>,
    pub eq_duals: DVector<f64>,
    pub status: QpStatus,
    pub iters: usize,
    /// max of stationarity, primal infeasibility and complementarity
    pub kkt_residual: f64,
    /// average complementarity at the start of every iteration
    pub barrier_history: Vec<f64>,
}

impl QpSolution {
    /// Signed row multipliers `upper - lower`.
    pub fn row_duals(&self) -> DVector<f64> {
        &self.dual_upper - &self.dual_lower
    }
}

/// Stage-wise view of a QP step: increments, continuity multipliers and
/// signed path-constraint multipliers (`N + 1` entries, last terminal).
#[derive(Clone, Debug, PartialEq)]
pub struct StageSolution {
    pub dx: Vec<DVector<f64>>,
    pub du: Vec<DVector<f64>>,
    pub lambda: Vec<DVector<f64>>,
    pub mu: Vec<DVector<f64>>,
}

/// KKT residuals of a dense two-sided QP at a primal-dual point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub complementarity: f64,
    /// most negative multiplier (as a positive number), 0 if none
    pub dual_sign: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.complementarity)
            .max(self.dual_sign)
    }
}

/// Complementarity and feasibility of rows `lower <= v <= upper` with
/// multipliers `(zl, zu)`; infinite sides are ignored.
pub(crate) fn row_residuals(
    v: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    zl: &DVector<f64>,
    zu: &DVector<f64>,
) -> (f64, f64, f64) {
    let mut primal: f64 = 0.0;
    let mut compl: f64 = 0.0;
    let mut sign: f64 = 0.0;
    for i in 0..v.len() {
        if lower[i].is_finite() {
            primal = primal.max(lower[i] - v[i]);
            compl = compl.max((zl[i] * (v[i] - lower[i])).abs());
            sign = sign.max(-zl[i]);
        }
        if upper[i].is_finite() {
            primal = primal.max(v[i] - upper[i]);
            compl = compl.max((zu[i] * (upper[i] - v[i])).abs());
            sign = sign.max(-zu[i]);
        }
    }
    (primal, compl, sign)
}

/// KKT residuals of `min 1/2 z'Hz + g'z  s.t. lower <= Cz <= upper`.
pub fn dense_kkt_residuals(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    c: &DMatrix<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    sol: &QpSolution,
) -> KktResiduals {
    let z = &sol.primal;
    let grad = h * z + g + c.transpose() * sol.row_duals();
    let (primal, complementarity, dual_sign) =
        row_residuals(&(c * z), lower, upper, &sol.dual_lower, &sol.dual_upper);
    KktResiduals {
        stationarity: grad.amax(),
        primal,
        complementarity,
        dual_sign,
    }
}

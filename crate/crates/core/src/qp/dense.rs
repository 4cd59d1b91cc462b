use super::ipm::{self, KktSystem};
use super::{QpSolution, QpSolverConfig};
use super::SpdFactor;
use nalgebra::{Cholesky, DMatrix, DVector};

struct DenseSystem<'a> {
    h: DMatrix<f64>,
    g: &'a DVector<f64>,
    c: &'a DMatrix<f64>,
    lower: &'a DVector<f64>,
    upper: &'a DVector<f64>,
    chol: Option<SpdFactor>,
}

impl KktSystem for DenseSystem<'_> {
    fn n(&self) -> usize {
        self.h.nrows()
    }
    fn rows(&self) -> usize {
        self.c.nrows()
    }
    fn n_eq(&self) -> usize {
        0
    }
    fn gradient(&self) -> &DVector<f64> {
        self.g
    }
    fn lower(&self) -> &DVector<f64> {
        self.lower
    }
    fn upper(&self) -> &DVector<f64> {
        self.upper
    }
    fn hess_mul(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.h * z
    }
    fn cons_mul(&self, z: &DVector<f64>) -> DVector<f64> {
        self.c * z
    }
    fn cons_tmul(&self, v: &DVector<f64>) -> DVector<f64> {
        self.c.tr_mul(v)
    }
    fn eq_residual(&self, _z: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(0)
    }
    fn eq_tmul(&self, _lam: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(self.n())
    }
    fn factor(&mut self, sigma: &DVector<f64>) -> Result<(), ()> {
        let mut k = self.h.clone();
        if self.c.nrows() > 0 {
            let sc = DMatrix::from_fn(self.c.nrows(), self.c.ncols(), |i, j| {
                sigma[i] * self.c[(i, j)]
            });
            k += self.c.tr_mul(&sc);
        }
        self.chol = Some(SpdFactor::new(k).ok_or(())?);
        Ok(())
    }
    fn solve(&self, rd: &DVector<f64>, _re: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let chol = self.chol.as_ref().expect("factor before solve");
        (-chol.solve(rd), DVector::zeros(0))
    }
}

/// Solves `min 1/2 z'Hz + g'z  s.t.  lower <= Cz <= upper` with a
/// primal-dual interior-point method. Infinite bounds are ignored.
///
/// `H` is regularised by `reg_eps * I` when its smallest eigenvalue is not
/// known to exceed `reg_eps`.
///
/// # Panics
/// On inconsistent dimensions.
pub fn solve_dense(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    c: &DMatrix<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    cfg: &QpSolverConfig,
) -> QpSolution {
    let n = g.len();
    assert!(h.nrows() == n && h.ncols() == n, "H must be {n}x{n}");
    assert!(c.ncols() == n || c.nrows() == 0, "C must have {n} columns");
    assert!(lower.len() == c.nrows() && upper.len() == c.nrows());

    let mut hr = h.clone();
    if cfg.reg_eps > 0.0 {
        let shifted = h - DMatrix::identity(n, n) * cfg.reg_eps;
        if Cholesky::new(shifted).is_none() {
            for i in 0..n {
                hr[(i, i)] += cfg.reg_eps;
            }
        }
    }
    let c_full;
    let c = if c.ncols() == n {
        c
    } else {
        c_full = DMatrix::zeros(0, n);
        &c_full
    };
    let mut sys = DenseSystem {
        h: hr,
        g,
        c,
        lower,
        upper,
        chol: None,
    };
    ipm::solve(&mut sys, cfg)
}

//! Full condensing: eliminate the state increments through the linearised
//! dynamics and keep only the input increments as QP variables.
//!
//! With `dx_0 = e_0` fixed, `dx_k = e_k + sum_{j<k} G_{k,j} du_j`, where
//! `e_{k+1} = A_k e_k + d_k`, `G_{k+1,k} = B_k` and `G_{k+1,j} = A_k G_{k,j}`.
//! The Hessian is assembled with a backward recursion per column, which
//! costs `O(N^2)` block products.

use crate::qp::{QpSolution, StageSolution};
use crate::shooting::StageQpData;
use nalgebra::{DMatrix, DVector};

/// Dense QP over `(du_0, .., du_{N-1})`:
/// `min 1/2 du' H du + g' du  s.t.  lower <= C du <= upper`.
///
/// Rows of `C` are the stage path constraints in stage order followed by
/// the terminal rows.
#[derive(Clone, Debug, PartialEq)]
pub struct CondensedQp {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub c: DMatrix<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    /// `G[k][j]` for `j < k`, `k = 0..=N`
    pub gmat: Vec<Vec<DMatrix<f64>>>,
    /// free response `e_k`, `k = 0..=N`
    pub e: Vec<DVector<f64>>,
    row_off: Vec<usize>,
}

impl CondensedQp {
    /// First row of stage `k` in `C`.
    pub fn row_offset(&self, k: usize) -> usize {
        self.row_off[k]
    }

    /// State increments implied by an input increment.
    pub fn states(&self, du: &[DVector<f64>]) -> Vec<DVector<f64>> {
        (0..self.e.len())
            .map(|k| {
                let mut x = self.e[k].clone();
                for (j, gkj) in self.gmat[k].iter().enumerate() {
                    x += gkj * &du[j];
                }
                x
            })
            .collect()
    }
}

/// Condenses a stage QP; the initial increment is taken from `qp.dx0`.
pub fn condense(qp: &StageQpData) -> CondensedQp {
    let n = qp.horizon();
    let (nx, nu) = (qp.nx, qp.nu);
    let q = |k: usize| qp.h[k].view((0, 0), (nx, nx));
    let s = |k: usize| qp.h[k].view((0, nx), (nx, nu));
    let r = |k: usize| qp.h[k].view((nx, nx), (nu, nu));

    // free response and sensitivity blocks
    let mut e = Vec::with_capacity(n + 1);
    e.push(qp.dx0.clone());
    let mut gmat: Vec<Vec<DMatrix<f64>>> = vec![Vec::new()];
    for k in 0..n {
        e.push(&qp.a[k] * &e[k] + &qp.defect[k]);
        let mut row: Vec<DMatrix<f64>> = gmat[k].iter().map(|gkj| &qp.a[k] * gkj).collect();
        row.push(qp.b[k].clone());
        gmat.push(row);
    }

    // Hessian, one block column j at a time:
    // V_{N,j} = Q_N G_{N,j},  V_{k,j} = Q_k G_{k,j} + A_k' V_{k+1,j}
    // H[i][j] = B_i' V_{i+1,j} + S_i' G_{i,j}  (i > j),  R_j + B_j' V_{j+1,j}
    let nz = n * nu;
    let mut h = DMatrix::zeros(nz, nz);
    for j in 0..n {
        let mut v = &qp.h[n] * &gmat[n][j];
        for i in (j..n).rev() {
            let mut blk = qp.b[i].tr_mul(&v);
            if i > j {
                blk += s(i).tr_mul(&gmat[i][j]);
                v = q(i) * &gmat[i][j] + qp.a[i].tr_mul(&v);
            } else {
                blk += r(i);
            }
            h.view_mut((i * nu, j * nu), (nu, nu)).copy_from(&blk);
            if i != j {
                h.view_mut((j * nu, i * nu), (nu, nu)).copy_from(&blk.transpose());
            }
        }
    }

    // gradient: w_N = Q_N e_N + q_N,  w_k = Q_k e_k + q_k + A_k' w_{k+1}
    let mut g = DVector::zeros(nz);
    let mut w = &qp.h[n] * &e[n] + &qp.g[n];
    for i in (0..n).rev() {
        let gi = qp.g[i].rows(nx, nu) + s(i).tr_mul(&e[i]) + qp.b[i].tr_mul(&w);
        g.rows_mut(i * nu, nu).copy_from(&gi);
        w = q(i) * &e[i] + qp.g[i].rows(0, nx) + qp.a[i].tr_mul(&w);
    }

    // constraints
    let mut row_off = vec![0];
    for k in 0..=n {
        row_off.push(row_off[k] + qp.stage_rows(k));
    }
    let rows = row_off[n + 1];
    let mut c = DMatrix::zeros(rows, nz);
    let mut lower = DVector::zeros(rows);
    let mut upper = DVector::zeros(rows);
    for k in 0..=n {
        let nr = qp.stage_rows(k);
        if nr == 0 {
            continue;
        }
        let off = row_off[k];
        for (j, gkj) in gmat[k].iter().enumerate() {
            c.view_mut((off, j * nu), (nr, nu)).copy_from(&(&qp.c[k] * gkj));
        }
        if k < n {
            c.view_mut((off, k * nu), (nr, nu)).copy_from(&qp.d[k]);
        }
        let ce = &qp.c[k] * &e[k];
        lower.rows_mut(off, nr).copy_from(&(&qp.lower[k] - &ce));
        upper.rows_mut(off, nr).copy_from(&(&qp.upper[k] - &ce));
    }

    CondensedQp {
        h,
        g,
        c,
        lower,
        upper,
        gmat,
        e,
        row_off,
    }
}

/// Recovers state increments and continuity multipliers from a condensed
/// solution.
///
/// `lambda_N = H_N dx_N + g_N + C_N' nu_N` and
/// `lambda_k = Q_k dx_k + S_k du_k + q_k + C_k' nu_k + A_k' lambda_{k+1}`,
/// with `nu` the signed row multipliers (upper minus lower).
pub fn expand(qp: &StageQpData, cond: &CondensedQp, sol: &QpSolution) -> StageSolution {
    let n = qp.horizon();
    let (nx, nu) = (qp.nx, qp.nu);
    let du: Vec<DVector<f64>> = (0..n)
        .map(|k| sol.primal.rows(k * nu, nu).into_owned())
        .collect();
    let dx = cond.states(&du);
    let duals = sol.row_duals();
    let mu: Vec<DVector<f64>> = (0..=n)
        .map(|k| duals.rows(cond.row_off[k], qp.stage_rows(k)).into_owned())
        .collect();

    let mut lambda = vec![DVector::zeros(nx); n + 1];
    lambda[n] = &qp.h[n] * &dx[n] + &qp.g[n] + qp.c[n].tr_mul(&mu[n]);
    for k in (0..n).rev() {
        let hk = &qp.h[k];
        lambda[k] = hk.view((0, 0), (nx, nx)) * &dx[k]
            + hk.view((0, nx), (nx, nu)) * &du[k]
            + qp.g[k].rows(0, nx)
            + qp.c[k].tr_mul(&mu[k])
            + qp.a[k].tr_mul(&lambda[k + 1]);
    }
    StageSolution { dx, du, lambda, mu }
}

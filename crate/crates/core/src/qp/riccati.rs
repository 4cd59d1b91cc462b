use super::ipm::{self, KktSystem};
use super::{QpSolution, QpSolverConfig, StageSolution};
use crate::shooting::StageQpData;
use super::SpdFactor;
use nalgebra::{DMatrix, DVector};

/// Stage QP seen as one large QP over `(x_0..x_N, u_0..u_{N-1})`, with the
/// Newton systems solved by a backward Riccati sweep.
struct RiccatiSystem<'a> {
    qp: &'a StageQpData,
    n: usize,
    nx: usize,
    nu: usize,
    row_off: Vec<usize>,
    gradient: DVector<f64>,
    lower: DVector<f64>,
    upper: DVector<f64>,
    fac: Option<Factor>,
}

struct Factor {
    p: Vec<DMatrix<f64>>,
    k: Vec<DMatrix<f64>>,
    qux: Vec<DMatrix<f64>>,
    quu: Vec<SpdFactor>,
}

impl<'a> RiccatiSystem<'a> {
    fn new(qp: &'a StageQpData) -> Self {
        let n = qp.horizon();
        let (nx, nu) = (qp.nx, qp.nu);
        let mut row_off = vec![0];
        for k in 0..=n {
            row_off.push(row_off[k] + qp.stage_rows(k));
        }
        let rows = row_off[n + 1];
        let mut gradient = DVector::zeros((n + 1) * nx + n * nu);
        let mut lower = DVector::zeros(rows);
        let mut upper = DVector::zeros(rows);
        for k in 0..=n {
            gradient.rows_mut(k * nx, nx).copy_from(&qp.g[k].rows(0, nx));
            if k < n {
                gradient
                    .rows_mut(Self::u_off(n, nx, nu, k), nu)
                    .copy_from(&qp.g[k].rows(nx, nu));
            }
            lower.rows_mut(row_off[k], qp.stage_rows(k)).copy_from(&qp.lower[k]);
            upper.rows_mut(row_off[k], qp.stage_rows(k)).copy_from(&qp.upper[k]);
        }
        RiccatiSystem {
            qp,
            n,
            nx,
            nu,
            row_off,
            gradient,
            lower,
            upper,
            fac: None,
        }
    }

    fn u_off(n: usize, nx: usize, nu: usize, k: usize) -> usize {
        (n + 1) * nx + k * nu
    }

    fn xk<'v>(&self, z: &'v DVector<f64>, k: usize) -> nalgebra::DVectorView<'v, f64> {
        z.rows(k * self.nx, self.nx)
    }

    fn uk<'v>(&self, z: &'v DVector<f64>, k: usize) -> nalgebra::DVectorView<'v, f64> {
        z.rows(Self::u_off(self.n, self.nx, self.nu, k), self.nu)
    }

    fn stage_vec(&self, z: &DVector<f64>, k: usize) -> DVector<f64> {
        if k < self.n {
            let mut w = DVector::zeros(self.nx + self.nu);
            w.rows_mut(0, self.nx).copy_from(&self.xk(z, k));
            w.rows_mut(self.nx, self.nu).copy_from(&self.uk(z, k));
            w
        } else {
            self.xk(z, k).into_owned()
        }
    }

    fn scatter(&self, out: &mut DVector<f64>, k: usize, w: &DVector<f64>) {
        let (nx, nu) = (self.nx, self.nu);
        let mut xs = out.rows_mut(k * nx, nx);
        xs += w.rows(0, nx);
        if k < self.n {
            let off = Self::u_off(self.n, nx, nu, k);
            let mut us = out.rows_mut(off, nu);
            us += w.rows(nx, nu);
        }
    }

    /// `[C_k D_k]` as one matrix over the stage vector.
    fn stage_cons(&self, k: usize) -> DMatrix<f64> {
        let qp = self.qp;
        let rows = qp.stage_rows(k);
        if k < self.n {
            let mut m = DMatrix::zeros(rows, self.nx + self.nu);
            m.columns_mut(0, self.nx).copy_from(&qp.c[k]);
            m.columns_mut(self.nx, self.nu).copy_from(&qp.d[k]);
            m
        } else {
            qp.c[k].clone()
        }
    }
}

impl KktSystem for RiccatiSystem<'_> {
    fn n(&self) -> usize {
        self.gradient.len()
    }
    fn rows(&self) -> usize {
        self.lower.len()
    }
    fn n_eq(&self) -> usize {
        (self.n + 1) * self.nx
    }
    fn gradient(&self) -> &DVector<f64> {
        &self.gradient
    }
    fn lower(&self) -> &DVector<f64> {
        &self.lower
    }
    fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    fn hess_mul(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(z.len());
        for k in 0..=self.n {
            let w = &self.qp.h[k] * self.stage_vec(z, k);
            self.scatter(&mut out, k, &w);
        }
        out
    }

    fn cons_mul(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.rows());
        for k in 0..=self.n {
            let rows = self.qp.stage_rows(k);
            if rows > 0 {
                let mut v = &self.qp.c[k] * self.xk(z, k);
                if k < self.n {
                    v += &self.qp.d[k] * self.uk(z, k);
                }
                out.rows_mut(self.row_off[k], rows).copy_from(&v);
            }
        }
        out
    }

    fn cons_tmul(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n());
        for k in 0..=self.n {
            let rows = self.qp.stage_rows(k);
            if rows > 0 {
                let vk = v.rows(self.row_off[k], rows);
                let w = self.stage_cons(k).tr_mul(&vk);
                self.scatter(&mut out, k, &w);
            }
        }
        out
    }

    fn eq_residual(&self, z: &DVector<f64>) -> DVector<f64> {
        let (n, nx) = (self.n, self.nx);
        let qp = self.qp;
        let mut r = DVector::zeros((n + 1) * nx);
        r.rows_mut(0, nx).copy_from(&(self.xk(z, 0) - &qp.dx0));
        for k in 0..n {
            let v = self.xk(z, k + 1)
                - &qp.a[k] * self.xk(z, k)
                - &qp.b[k] * self.uk(z, k)
                - &qp.defect[k];
            r.rows_mut((k + 1) * nx, nx).copy_from(&v);
        }
        r
    }

    fn eq_tmul(&self, lam: &DVector<f64>) -> DVector<f64> {
        let (n, nx, nu) = (self.n, self.nx, self.nu);
        let mut out = DVector::zeros(self.n());
        for k in 0..=n {
            let lk = lam.rows(k * nx, nx);
            let mut xs = out.rows_mut(k * nx, nx);
            xs += lk;
            if k < n {
                let lnext = lam.rows((k + 1) * nx, nx);
                let ax = self.qp.a[k].tr_mul(&lnext);
                let mut xs = out.rows_mut(k * nx, nx);
                xs -= ax;
                let bu = self.qp.b[k].tr_mul(&lnext);
                let mut us = out.rows_mut(Self::u_off(n, nx, nu, k), nu);
                us -= bu;
            }
        }
        out
    }

    fn factor(&mut self, sigma: &DVector<f64>) -> Result<(), ()> {
        let (n, nx, nu) = (self.n, self.nx, self.nu);
        let qp = self.qp;
        let mut q = Vec::with_capacity(n + 1);
        for k in 0..=n {
            let rows = qp.stage_rows(k);
            let mut hk = qp.h[k].clone();
            if rows > 0 {
                let m = self.stage_cons(k);
                let s = sigma.rows(self.row_off[k], rows);
                let sm = DMatrix::from_fn(rows, m.ncols(), |i, j| s[i] * m[(i, j)]);
                hk += m.tr_mul(&sm);
            }
            q.push(hk);
        }
        let mut p = vec![DMatrix::zeros(nx, nx); n + 1];
        let mut kgain = vec![DMatrix::zeros(nu, nx); n];
        let mut quu_f = Vec::with_capacity(n);
        let mut qux_s = Vec::with_capacity(n);
        p[n] = q[n].clone();
        for k in (0..n).rev() {
            let (a, b) = (&qp.a[k], &qp.b[k]);
            let pa = &p[k + 1] * a;
            let pb = &p[k + 1] * b;
            let qxx = q[k].view((0, 0), (nx, nx)) + a.tr_mul(&pa);
            let qux = q[k].view((nx, 0), (nu, nx)) + b.tr_mul(&pa);
            let quu = q[k].view((nx, nx), (nu, nu)) + b.tr_mul(&pb);
            let chol = SpdFactor::new(quu).ok_or(())?;
            let kk = -chol.solve_mat(&qux);
            let mut pk = qxx + qux.tr_mul(&kk);
            // keep P symmetric against round-off drift
            pk = (&pk + pk.transpose()) * 0.5;
            if pk.iter().any(|v| !v.is_finite()) {
                return Err(());
            }
            p[k] = pk;
            kgain[k] = kk;
            quu_f.push(chol);
            qux_s.push(qux);
        }
        quu_f.reverse();
        qux_s.reverse();
        self.fac = Some(Factor {
            p,
            k: kgain,
            qux: qux_s,
            quu: quu_f,
        });
        Ok(())
    }

    fn solve(&self, rd: &DVector<f64>, re: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let (n, nx, nu) = (self.n, self.nx, self.nu);
        let f = self.fac.as_ref().expect("factor before solve");
        let qp = self.qp;
        // backward sweep for the affine terms p_k and feedforward k_k
        let mut pv = vec![DVector::zeros(nx); n + 1];
        let mut kff = vec![DVector::zeros(nu); n];
        pv[n] = self.xk(rd, n).into_owned();
        for k in (0..n).rev() {
            let bk = -re.rows((k + 1) * nx, nx);
            let pb = &f.p[k + 1] * bk + &pv[k + 1];
            let qu = self.uk(rd, k) + qp.b[k].tr_mul(&pb);
            let qx = self.xk(rd, k) + qp.a[k].tr_mul(&pb);
            let kf = -f.quu[k].solve(&qu);
            pv[k] = qx + f.qux[k].tr_mul(&kf);
            kff[k] = kf;
        }
        let mut dz = DVector::zeros(self.n());
        let mut dlam = DVector::zeros((n + 1) * nx);
        let mut dx = -re.rows(0, nx);
        for k in 0..=n {
            let lk = &f.p[k] * &dx + &pv[k];
            dlam.rows_mut(k * nx, nx).copy_from(&lk);
            dz.rows_mut(k * nx, nx).copy_from(&dx);
            if k < n {
                let du = &f.k[k] * &dx + &kff[k];
                dz.rows_mut(Self::u_off(n, nx, nu, k), nu).copy_from(&du);
                dx = &qp.a[k] * &dx + &qp.b[k] * &du - re.rows((k + 1) * nx, nx);
            }
        }
        (dz, dlam)
    }
}

/// Solves the stage-structured QP directly, without condensing.
///
/// The primal of the returned solution is laid out as
/// `(dx_0, .., dx_N, du_0, .., du_{N-1})`; use [`sparse_to_stages`] for a
/// stage-wise view.
pub fn solve_sparse(qp: &StageQpData, cfg: &QpSolverConfig) -> QpSolution {
    let mut sys = RiccatiSystem::new(qp);
    ipm::solve(&mut sys, cfg)
}

/// Splits a sparse-path solution into stage blocks.
pub fn sparse_to_stages(qp: &StageQpData, sol: &QpSolution) -> StageSolution {
    let n = qp.horizon();
    let (nx, nu) = (qp.nx, qp.nu);
    let z = &sol.primal;
    let nu_dual = sol.row_duals();
    let mut off = 0;
    let mut mu = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let rows = qp.stage_rows(k);
        mu.push(nu_dual.rows(off, rows).into_owned());
        off += rows;
    }
    StageSolution {
        dx: (0..=n).map(|k| z.rows(k * nx, nx).into_owned()).collect(),
        du: (0..n)
            .map(|k| z.rows((n + 1) * nx + k * nu, nu).into_owned())
            .collect(),
        lambda: (0..=n)
            .map(|k| sol.eq_duals.rows(k * nx, nx).into_owned())
            .collect(),
        mu,
    }
}

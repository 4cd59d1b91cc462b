//! Test models, random instance generators and reference solvers that do
//! not share code with the library paths they check.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rtmpc::shooting::StageQpData;
use rtmpc::{ModelShape, OcpModel, Scalar};

pub fn rng(seed: u64) -> ChaCha8Rng {
    rand::SeedableRng::seed_from_u64(seed)
}

/// Van der Pol oscillator with an additive input on the second state.
#[derive(Clone, Copy, Debug)]
pub struct VanDerPol {
    pub mu: f64,
}

impl OcpModel for VanDerPol {
    fn shape(&self) -> ModelShape {
        ModelShape {
            nx: 2,
            nu: 1,
            nr: 3,
            nr_n: 2,
            nc: 0,
            nc_n: 0,
            np: 0,
        }
    }

    fn dynamics<S: Scalar>(&self, x: &[S], u: &[S], _p: &[f64], xdot: &mut [S]) {
        xdot[0] = x[1];
        xdot[1] = (S::one() - x[0] * x[0]) * x[1] * self.mu - x[0] + u[0];
    }

    fn stage_residual<S: Scalar>(&self, x: &[S], u: &[S], _p: &[f64], out: &mut [S]) {
        out[..2].copy_from_slice(x);
        out[2] = u[0];
    }

    fn terminal_residual<S: Scalar>(&self, x: &[S], _p: &[f64], out: &mut [S]) {
        out.copy_from_slice(x);
    }
}

/// Time-invariant linear model `xdot = F x + G u` with residual `(x, u)`
/// and box constraints on `u`.
#[derive(Clone, Debug)]
pub struct LinearModel {
    pub f: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub bounded: bool,
}

impl OcpModel for LinearModel {
    fn shape(&self) -> ModelShape {
        let (nx, nu) = (self.f.nrows(), self.g.ncols());
        ModelShape {
            nx,
            nu,
            nr: nx + nu,
            nr_n: nx,
            nc: if self.bounded { nu } else { 0 },
            nc_n: 0,
            np: 0,
        }
    }

    fn dynamics<S: Scalar>(&self, x: &[S], u: &[S], _p: &[f64], xdot: &mut [S]) {
        for i in 0..x.len() {
            let mut acc = S::zero();
            for (j, xj) in x.iter().enumerate() {
                acc += *xj * self.f[(i, j)];
            }
            for (j, uj) in u.iter().enumerate() {
                acc += *uj * self.g[(i, j)];
            }
            xdot[i] = acc;
        }
    }

    fn stage_residual<S: Scalar>(&self, x: &[S], u: &[S], _p: &[f64], out: &mut [S]) {
        out[..x.len()].copy_from_slice(x);
        out[x.len()..].copy_from_slice(u);
    }

    fn terminal_residual<S: Scalar>(&self, x: &[S], _p: &[f64], out: &mut [S]) {
        out.copy_from_slice(x);
    }

    fn stage_constraint<S: Scalar>(&self, _x: &[S], u: &[S], _p: &[f64], out: &mut [S]) {
        if self.bounded {
            out.copy_from_slice(u);
        }
    }
}

pub fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

pub fn randv(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
}

/// Symmetric positive definite with eigenvalues bounded below by `floor`.
pub fn spd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> DMatrix<f64> {
    let m = randn(rng, n, n);
    m.tr_mul(&m) + DMatrix::identity(n, n) * floor
}

/// Row bounds around `v`: each side is at a random distance, and some sides
/// are absent.
fn bounds_around(rng: &mut ChaCha8Rng, v: &DVector<f64>, width: f64) -> (DVector<f64>, DVector<f64>) {
    let mut lo = DVector::zeros(v.len());
    let mut hi = DVector::zeros(v.len());
    for i in 0..v.len() {
        lo[i] = if rng.random_bool(0.15) {
            f64::NEG_INFINITY
        } else {
            v[i] - rng.random_range(0.02..width)
        };
        hi[i] = if rng.random_bool(0.15) {
            f64::INFINITY
        } else {
            v[i] + rng.random_range(0.02..width)
        };
    }
    (lo, hi)
}

pub struct StageQpShape {
    pub n: usize,
    pub nx: usize,
    pub nu: usize,
    pub nc: usize,
    pub nc_n: usize,
}

impl StageQpShape {
    pub fn random(rng: &mut ChaCha8Rng, max_n: usize, max_nx: usize, max_nu: usize, max_nc: usize) -> Self {
        let nc = rng.random_range(0..=max_nc);
        StageQpShape {
            n: rng.random_range(1..=max_n),
            nx: rng.random_range(1..=max_nx),
            nu: rng.random_range(1..=max_nu),
            nc,
            nc_n: rng.random_range(0..=nc),
        }
    }
}

/// Random stage QP that is feasible by construction: the bounds enclose a
/// trajectory of the linear dynamics.
pub fn random_stage_qp(rng: &mut ChaCha8Rng, s: &StageQpShape) -> StageQpData {
    let (n, nx, nu) = (s.n, s.nx, s.nu);
    let nw = nx + nu;
    let mut qp = StageQpData {
        nx,
        nu,
        h: Vec::new(),
        g: Vec::new(),
        a: Vec::new(),
        b: Vec::new(),
        c: Vec::new(),
        d: Vec::new(),
        defect: Vec::new(),
        phi: Vec::new(),
        lower: Vec::new(),
        upper: Vec::new(),
        dx0: randv(rng, nx),
        cost: 0.0,
    };
    let mut x = qp.dx0.clone();
    for k in 0..=n {
        if k < n {
            qp.h.push(spd(rng, nw, 0.1) * (1.0 / nw as f64));
            qp.g.push(randv(rng, nw));
            let a = DMatrix::identity(nx, nx) * 0.9 + randn(rng, nx, nx) * (0.3 / (nx as f64).sqrt());
            let b = randn(rng, nx, nu);
            let defect = randv(rng, nx) * 0.1;
            let c = randn(rng, s.nc, nx);
            let d = randn(rng, s.nc, nu);
            let u = randv(rng, nu) * 0.5;
            let (lo, hi) = bounds_around(rng, &(&c * &x + &d * &u), 0.6);
            x = &a * &x + &b * &u + &defect;
            qp.a.push(a);
            qp.b.push(b);
            qp.defect.push(defect);
            qp.phi.push(DVector::zeros(nx));
            qp.c.push(c);
            qp.d.push(d);
            qp.lower.push(lo);
            qp.upper.push(hi);
        } else {
            qp.h.push(spd(rng, nx, 0.1) * (1.0 / nx as f64));
            qp.g.push(randv(rng, nx));
            let c = randn(rng, s.nc_n, nx);
            let (lo, hi) = bounds_around(rng, &(&c * &x), 0.6);
            qp.c.push(c);
            qp.lower.push(lo);
            qp.upper.push(hi);
        }
    }
    qp
}

/// Generic QP `min 1/2 z'Hz + g'z  s.t.  E z = b,  lower <= C z <= upper`.
#[derive(Clone, Debug)]
pub struct GenericQp {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub e: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DMatrix<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

/// Solution of a [`GenericQp`] with the convention
/// `H z + g + C' nu - E' lambda = 0`, `nu = upper multiplier - lower multiplier`.
#[derive(Clone, Debug)]
pub struct GenericSolution {
    pub z: DVector<f64>,
    pub lambda: DVector<f64>,
    pub nu: DVector<f64>,
}

/// One-sided rows `G z <= h` built from the finite sides; `sign` and `row`
/// record where each came from.
struct OneSided {
    g: DMatrix<f64>,
    h: DVector<f64>,
    row: Vec<usize>,
    sign: Vec<f64>,
}

fn one_sided(qp: &GenericQp) -> OneSided {
    let mut rows = Vec::new();
    for i in 0..qp.c.nrows() {
        if qp.upper[i].is_finite() {
            rows.push((i, 1.0, qp.upper[i]));
        }
        if qp.lower[i].is_finite() {
            rows.push((i, -1.0, -qp.lower[i]));
        }
    }
    let n = qp.h.nrows();
    OneSided {
        g: DMatrix::from_fn(rows.len(), n, |r, j| rows[r].1 * qp.c[(rows[r].0, j)]),
        h: DVector::from_iterator(rows.len(), rows.iter().map(|r| r.2)),
        row: rows.iter().map(|r| r.0).collect(),
        sign: rows.iter().map(|r| r.1).collect(),
    }
}

/// Solves the equality-constrained QP with the given one-sided rows held
/// active; `None` if the KKT matrix is singular.
fn solve_active(qp: &GenericQp, os: &OneSided, active: &[usize]) -> Option<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    let n = qp.h.nrows();
    let me = qp.e.nrows();
    let ma = active.len();
    let dim = n + me + ma;
    let mut k = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    k.view_mut((0, 0), (n, n)).copy_from(&qp.h);
    k.view_mut((n, 0), (me, n)).copy_from(&qp.e);
    k.view_mut((0, n), (n, me)).copy_from(&qp.e.transpose());
    for (i, &r) in active.iter().enumerate() {
        let row = os.g.row(r);
        k.view_mut((n + me + i, 0), (1, n)).copy_from(&row);
        k.view_mut((0, n + me + i), (n, 1)).copy_from(&row.transpose());
        rhs[n + me + i] = os.h[r];
    }
    rhs.rows_mut(0, n).copy_from(&(-&qp.g));
    rhs.rows_mut(n, me).copy_from(&qp.b);
    let lu = k.clone().lu();
    // reject (near) singular systems rather than trusting a huge solution
    let sol = lu.solve(&rhs)?;
    if (&k * &sol - &rhs).amax() > 1e-9 * (1.0 + rhs.amax()) || !sol.iter().all(|v| v.is_finite()) {
        return None;
    }
    let z = sol.rows(0, n).into_owned();
    // H z + g + E' eta + G_A' y = 0, lambda = -eta
    let lambda = -sol.rows(n, me).into_owned();
    let y = sol.rows(n + me, ma).into_owned();
    Some((z, lambda, y))
}

fn nu_from(qp: &GenericQp, os: &OneSided, y_full: &DVector<f64>) -> DVector<f64> {
    let mut nu = DVector::zeros(qp.c.nrows());
    for (r, y) in y_full.iter().enumerate() {
        nu[os.row[r]] += os.sign[r] * y;
    }
    nu
}

/// Reference solver for [`GenericQp`]: a basic primal-dual path-following
/// method on the full KKT system identifies the active set, which is then
/// solved exactly and verified.
pub fn generic_qp_oracle(qp: &GenericQp) -> Option<GenericSolution> {
    let os = one_sided(qp);
    let n = qp.h.nrows();
    let me = qp.e.nrows();
    let m = os.h.len();
    let mut z = DVector::zeros(n);
    let mut lam = DVector::zeros(me);
    let mut s = DVector::from_element(m, 1.0);
    let mut y = DVector::from_element(m, 1.0);
    for i in 0..m {
        s[i] = (os.h[i] - os.g.row(i).dot(&z.transpose())).max(1.0);
    }
    for _ in 0..200 {
        let rd = &qp.h * &z + &qp.g + qp.e.tr_mul(&lam) + os.g.tr_mul(&y);
        let re = &qp.e * &z - &qp.b;
        let ri = &os.g * &z + &s - &os.h;
        let gap = if m > 0 { s.dot(&y) / m as f64 } else { 0.0 };
        if rd.amax().max(re.amax()).max(ri.amax()).max(gap) < 1e-13 {
            break;
        }
        let sigma = 0.1;
        // reduce to [H + G'(Y/S)G, E'; E, 0]
        let w = DVector::from_fn(m, |i, _| y[i] / s[i]);
        let rc = DVector::from_fn(m, |i, _| s[i] * y[i] - sigma * gap);
        let mut k = DMatrix::zeros(n + me, n + me);
        let gw = DMatrix::from_fn(m, n, |i, j| w[i] * os.g[(i, j)]);
        k.view_mut((0, 0), (n, n)).copy_from(&(&qp.h + os.g.tr_mul(&gw)));
        k.view_mut((n, 0), (me, n)).copy_from(&qp.e);
        k.view_mut((0, n), (n, me)).copy_from(&qp.e.transpose());
        // ds = -ri - G dz, dy = (-rc - y ds) / s
        let t = DVector::from_fn(m, |i, _| (-rc[i] + y[i] * ri[i]) / s[i]);
        let mut rhs = DVector::zeros(n + me);
        rhs.rows_mut(0, n).copy_from(&(-(&rd) - os.g.tr_mul(&t)));
        rhs.rows_mut(n, me).copy_from(&(-&re));
        let sol = k.lu().solve(&rhs)?;
        let dz = sol.rows(0, n).into_owned();
        let dlam = sol.rows(n, me).into_owned();
        let ds = -&ri - &os.g * &dz;
        let dy = DVector::from_fn(m, |i, _| (-rc[i] - y[i] * ds[i]) / s[i]);
        let mut alpha: f64 = 1.0;
        for i in 0..m {
            if ds[i] < 0.0 {
                alpha = alpha.min(-0.99 * s[i] / ds[i]);
            }
            if dy[i] < 0.0 {
                alpha = alpha.min(-0.99 * y[i] / dy[i]);
            }
        }
        z += &dz * alpha;
        lam += &dlam * alpha;
        s += &ds * alpha;
        y += &dy * alpha;
        if y.amax() > 1e15 {
            return None;
        }
    }
    let active: Vec<usize> = (0..m).filter(|&i| y[i] > s[i]).collect();
    if let Some((zp, lp, ya)) = solve_active(qp, &os, &active) {
        let feasible = (&os.g * &zp - &os.h).iter().all(|v| *v <= 1e-9);
        if feasible && ya.iter().all(|v| *v >= -1e-9) {
            let mut y_full = DVector::zeros(m);
            for (i, &r) in active.iter().enumerate() {
                y_full[r] = ya[i];
            }
            return Some(GenericSolution {
                nu: nu_from(qp, &os, &y_full),
                z: zp,
                lambda: lp,
            });
        }
    }
    let ok = (&os.g * &z - &os.h).iter().all(|v| *v <= 1e-8) && (&qp.e * &z - &qp.b).amax() <= 1e-8;
    ok.then(|| GenericSolution {
        nu: nu_from(qp, &os, &y),
        lambda: -lam,
        z,
    })
}

/// Brute-force reference for tiny QPs without equality rows: tries every
/// assignment of (inactive, at lower, at upper) to the rows. Returns the
/// primal, the row multipliers (upper minus lower) and whether the active
/// rows are linearly independent (multipliers unique). `None` means
/// infeasible.
pub fn enumerate_active_sets(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    c: &DMatrix<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>, bool)> {
    let rows = c.nrows();
    let n = h.nrows();
    let total = 3usize.pow(rows as u32);
    for code in 0..total {
        let mut pick = Vec::with_capacity(rows);
        let mut c_ = code;
        let mut skip = false;
        for i in 0..rows {
            let state = c_ % 3;
            c_ /= 3;
            if (state == 1 && !lower[i].is_finite()) || (state == 2 && !upper[i].is_finite()) {
                skip = true;
            }
            pick.push(state);
        }
        if skip {
            continue;
        }
        let act: Vec<usize> = (0..rows).filter(|&i| pick[i] != 0).collect();
        let ma = act.len();
        let mut k = DMatrix::zeros(n + ma, n + ma);
        let mut rhs = DVector::zeros(n + ma);
        k.view_mut((0, 0), (n, n)).copy_from(h);
        rhs.rows_mut(0, n).copy_from(&(-g));
        for (j, &i) in act.iter().enumerate() {
            k.view_mut((n + j, 0), (1, n)).copy_from(&c.row(i));
            k.view_mut((0, n + j), (n, 1)).copy_from(&c.row(i).transpose());
            rhs[n + j] = if pick[i] == 1 { lower[i] } else { upper[i] };
        }
        let Some(sol) = k.clone().lu().solve(&rhs) else {
            continue;
        };
        if (&k * &sol - &rhs).amax() > 1e-9 * (1.0 + rhs.amax()) {
            continue;
        }
        let z = sol.rows(0, n).into_owned();
        let cz = c * &z;
        let feasible = (0..rows).all(|i| cz[i] >= lower[i] - 1e-9 && cz[i] <= upper[i] + 1e-9);
        // H z + g + C_A' m = 0: m is the signed multiplier (upper minus lower)
        let signs_ok = act
            .iter()
            .enumerate()
            .all(|(j, &i)| if pick[i] == 2 { sol[n + j] >= -1e-9 } else { sol[n + j] <= 1e-9 });
        if feasible && signs_ok {
            let mut nu = DVector::zeros(rows);
            for (j, &i) in act.iter().enumerate() {
                nu[i] = sol[n + j];
            }
            let ca = DMatrix::from_fn(ma, n, |j, col| c[(act[j], col)]);
            let independent = ma == 0 || ca.rank(1e-9) == ma;
            return Some((z, nu, independent));
        }
    }
    None
}

/// Independent first-order optimality check for
/// `lower <= C z <= upper` with separate lower/upper multipliers.
pub fn kkt_violation(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    c: &DMatrix<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    z: &DVector<f64>,
    zl: &DVector<f64>,
    zu: &DVector<f64>,
) -> f64 {
    let stat = (h * z + g + c.tr_mul(&(zu - zl))).amax();
    let cz = c * z;
    let mut worst = stat;
    for i in 0..c.nrows() {
        worst = worst.max(lower[i] - cz[i]).max(cz[i] - upper[i]);
        worst = worst.max(-zl[i]).max(-zu[i]);
        let cl = if lower[i].is_finite() { zl[i] * (cz[i] - lower[i]) } else { zl[i] };
        let cu = if upper[i].is_finite() { zu[i] * (upper[i] - cz[i]) } else { zu[i] };
        worst = worst.max(cl.abs()).max(cu.abs());
    }
    worst
}

/// Index of the first entry of stage `k` in the interleaved layout
/// `(x_0, u_0, x_1, u_1, .., x_N)`.
fn offset(nx: usize, nu: usize, k: usize) -> usize {
    k * (nx + nu)
}

/// The stage QP as a [`GenericQp`] in the interleaved layout.
pub fn stage_to_generic(qp: &StageQpData) -> GenericQp {
    let (nx, nu, n) = (qp.nx, qp.nu, qp.horizon());
    let nz = n * (nx + nu) + nx;
    let mut h = DMatrix::zeros(nz, nz);
    let mut g = DVector::zeros(nz);
    for k in 0..=n {
        let o = offset(nx, nu, k);
        let w = qp.h[k].nrows();
        h.view_mut((o, o), (w, w)).copy_from(&qp.h[k]);
        g.rows_mut(o, w).copy_from(&qp.g[k]);
    }
    let me = (n + 1) * nx;
    let mut e = DMatrix::zeros(me, nz);
    let mut b = DVector::zeros(me);
    e.view_mut((0, 0), (nx, nx)).fill_with_identity();
    b.rows_mut(0, nx).copy_from(&qp.dx0);
    for k in 0..n {
        let r = (k + 1) * nx;
        let o = offset(nx, nu, k);
        e.view_mut((r, o), (nx, nx)).copy_from(&(-&qp.a[k]));
        e.view_mut((r, o + nx), (nx, nu)).copy_from(&(-&qp.b[k]));
        e.view_mut((r, offset(nx, nu, k + 1)), (nx, nx)).fill_with_identity();
        b.rows_mut(r, nx).copy_from(&qp.defect[k]);
    }
    let rows: usize = (0..=n).map(|k| qp.c[k].nrows()).sum();
    let mut c = DMatrix::zeros(rows, nz);
    let mut lower = DVector::zeros(rows);
    let mut upper = DVector::zeros(rows);
    let mut r = 0;
    for k in 0..=n {
        let nr = qp.c[k].nrows();
        let o = offset(nx, nu, k);
        c.view_mut((r, o), (nr, nx)).copy_from(&qp.c[k]);
        if k < n {
            c.view_mut((r, o + nx), (nr, nu)).copy_from(&qp.d[k]);
        }
        lower.rows_mut(r, nr).copy_from(&qp.lower[k]);
        upper.rows_mut(r, nr).copy_from(&qp.upper[k]);
        r += nr;
    }
    GenericQp {
        h,
        g,
        e,
        b,
        c,
        lower,
        upper,
    }
}

/// Per-stage view of a [`GenericSolution`] of a stage QP.
pub struct StageView {
    pub dx: Vec<DVector<f64>>,
    pub du: Vec<DVector<f64>>,
    pub lambda: Vec<DVector<f64>>,
    pub mu: Vec<DVector<f64>>,
}

pub fn generic_to_stages(qp: &StageQpData, sol: &GenericSolution) -> StageView {
    let (nx, nu, n) = (qp.nx, qp.nu, qp.horizon());
    let mut v = StageView {
        dx: vec![],
        du: vec![],
        lambda: vec![],
        mu: vec![],
    };
    let mut r = 0;
    for k in 0..=n {
        let o = offset(nx, nu, k);
        v.dx.push(sol.z.rows(o, nx).into_owned());
        if k < n {
            v.du.push(sol.z.rows(o + nx, nu).into_owned());
        }
        v.lambda.push(sol.lambda.rows(k * nx, nx).into_owned());
        let nr = qp.c[k].nrows();
        v.mu.push(sol.nu.rows(r, nr).into_owned());
        r += nr;
    }
    v
}

/// Textbook Riccati recursion for the unconstrained stage QP; returns
/// states, inputs and costates `lambda_k = P_k x_k + p_k`.
pub fn riccati_lqr(qp: &StageQpData) -> StageView {
    let (nx, nu, n) = (qp.nx, qp.nu, qp.horizon());
    let mut p_mat = vec![DMatrix::zeros(nx, nx); n + 1];
    let mut p_vec = vec![DVector::zeros(nx); n + 1];
    let mut gain = vec![DMatrix::zeros(nu, nx); n];
    let mut ff = vec![DVector::zeros(nu); n];
    p_mat[n] = qp.h[n].clone();
    p_vec[n] = qp.g[n].clone();
    for k in (0..n).rev() {
        let hk = &qp.h[k];
        let q = hk.view((0, 0), (nx, nx));
        let s = hk.view((nx, 0), (nu, nx));
        let r = hk.view((nx, nx), (nu, nu));
        let (qv, rv) = (qp.g[k].rows(0, nx), qp.g[k].rows(nx, nu));
        let (a, b, d) = (&qp.a[k], &qp.b[k], &qp.defect[k]);
        let p = &p_mat[k + 1];
        let pd = p * d + &p_vec[k + 1];
        let rt = r + b.tr_mul(&(p * b));
        let st = s + b.tr_mul(&(p * a));
        let rtv = rv + b.tr_mul(&pd);
        let inv = rt.try_inverse().expect("positive definite");
        gain[k] = -&inv * &st;
        ff[k] = -&inv * &rtv;
        p_mat[k] = q + a.tr_mul(&(p * a)) + st.tr_mul(&gain[k]);
        p_mat[k] = (&p_mat[k] + p_mat[k].transpose()) * 0.5;
        p_vec[k] = qv + a.tr_mul(&pd) + st.tr_mul(&ff[k]);
    }
    let mut v = StageView {
        dx: vec![qp.dx0.clone()],
        du: vec![],
        lambda: vec![],
        mu: vec![DVector::zeros(0); n + 1],
    };
    for k in 0..n {
        let u = &gain[k] * &v.dx[k] + &ff[k];
        let next = &qp.a[k] * &v.dx[k] + &qp.b[k] * &u + &qp.defect[k];
        v.du.push(u);
        v.dx.push(next);
    }
    for k in 0..=n {
        v.lambda.push(&p_mat[k] * &v.dx[k] + &p_vec[k]);
    }
    v
}

/// Largest entry-wise difference over a list of vectors.
pub fn max_diff(a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| if x.is_empty() { 0.0 } else { (x - y).amax() })
        .fold(0.0, f64::max)
}

/// Small dense QP `min 1/2 z'Hz + g'z  s.t.  lower <= C z <= upper`.
#[derive(Clone, Debug)]
pub struct TinyQp {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub c: DMatrix<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

/// Random tiny QP; about one in ten has two copies of the same row with
/// disjoint intervals and is therefore infeasible.
pub fn random_tiny_qp(rng: &mut ChaCha8Rng, max_n: usize, max_rows: usize) -> TinyQp {
    let n = rng.random_range(1..=max_n);
    let rows = rng.random_range(0..=max_rows);
    let h = spd(rng, n, 0.05);
    let g = randv(rng, n) * 2.0;
    let mut c = randn(rng, rows, n);
    let z_ref = randv(rng, n) * 0.5;
    let (mut lower, mut upper) = bounds_around(rng, &(&c * &z_ref), 0.8);
    if rows >= 2 && rng.random_bool(0.1) {
        let r0 = c.row(0).into_owned();
        c.set_row(1, &r0);
        let v = r0.dot(&z_ref.transpose());
        lower[0] = v - 0.5;
        upper[0] = v - 0.1;
        lower[1] = v + 0.1;
        upper[1] = v + 0.5;
    }
    TinyQp { h, g, c, lower, upper }
}

use rtmpc::integrator::{integrate, IntegratorConfig, Scheme};
use rtmpc::OcpProblem;

pub fn van_der_pol_problem() -> OcpProblem<VanDerPol> {
    OcpProblem::new(VanDerPol { mu: 1.0 }, 1, 1.0, DMatrix::identity(3, 3), DMatrix::identity(2, 2)).unwrap()
}

/// Integrator settings with Newton solves converged far below the noise of
/// a finite-difference quotient.
pub fn exact_newton(scheme: Scheme, steps: usize) -> IntegratorConfig {
    IntegratorConfig {
        scheme,
        steps,
        newton_tol: 1e-13,
        newton_max_iters: 50,
    }
}

/// Global errors at `t_end` of Van der Pol from `(2, 0)` for the given step
/// counts, against a GL3 run with 4096 steps, and the least-squares slope
/// of log(error) over log(h).
pub fn van_der_pol_order(scheme: Scheme, t_end: f64, steps: &[usize]) -> (Vec<f64>, f64) {
    let p = van_der_pol_problem();
    let x0 = [2.0, 0.0];
    let reference = integrate(&p, &exact_newton(Scheme::IrkGl3, 4096), &x0, &[0.0], &[], t_end, false)
        .unwrap()
        .x_next;
    let errs: Vec<f64> = steps
        .iter()
        .map(|&m| {
            let x = integrate(&p, &exact_newton(scheme, m), &x0, &[0.0], &[], t_end, false).unwrap().x_next;
            (x - &reference).amax()
        })
        .collect();
    let lx: Vec<f64> = steps.iter().map(|&m| (t_end / m as f64).ln()).collect();
    let ly: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    (errs, sxy / sxx)
}

/// Step counts for the order experiments over a span of 2: the Van der Pol
/// errors then range from about 1e-4 down to 1e-12, above round-off.
pub fn order_steps(scheme: Scheme) -> Vec<usize> {
    let base = match scheme {
        Scheme::Erk4 | Scheme::IrkGl2 => 20,
        Scheme::IrkGl3 => 3,
    };
    (0..6).map(|i| base << i).collect()
}

/// Largest deviation of the integrator's `(A, B)` from central finite
/// differences of the interval map, relative to `max(1, |[A B]|)`.
pub fn sensitivity_fd_error<M: OcpModel>(p: &OcpProblem<M>, cfg: &IntegratorConfig, x: &[f64], u: &[f64]) -> f64 {
    let map = |x: &[f64], u: &[f64]| {
        rtmpc::integrator::simulate_interval(p, cfg, x, u, &p.params, false)
            .unwrap()
            .x_next
    };
    let sens = rtmpc::integrator::simulate_interval(p, cfg, x, u, &p.params, true)
        .unwrap()
        .sens
        .unwrap();
    let (nx, nu) = (x.len(), u.len());
    let mut fd = DMatrix::zeros(nx, nx + nu);
    for j in 0..nx + nu {
        let v = if j < nx { x[j] } else { u[j - nx] };
        let h = 1e-6 * v.abs().max(1.0);
        let (mut xp, mut up) = (x.to_vec(), u.to_vec());
        let (mut xm, mut um) = (x.to_vec(), u.to_vec());
        if j < nx {
            xp[j] += h;
            xm[j] -= h;
        } else {
            up[j - nx] += h;
            um[j - nx] -= h;
        }
        let col = (map(&xp, &up) - map(&xm, &um)) / (2.0 * h);
        fd.set_column(j, &col);
    }
    let mut ab = DMatrix::zeros(nx, nx + nu);
    ab.columns_mut(0, nx).copy_from(&sens.a);
    ab.columns_mut(nx, nu).copy_from(&sens.b);
    (&ab - &fd).amax() / ab.amax().max(1.0)
}

/// A random state and input in the operating range of a benchmark.
pub fn random_point(
    rng: &mut ChaCha8Rng,
    kind: rtmpc::benchmarks::BenchmarkKind,
    x_init: &DVector<f64>,
    lb: &DVector<f64>,
    ub: &DVector<f64>,
) -> (Vec<f64>, Vec<f64>) {
    use rtmpc::benchmarks::BenchmarkKind::*;
    let nx = x_init.len();
    let x: Vec<f64> = match kind {
        Pendulum => vec![
            rng.random_range(-1.0..1.0),
            rng.random_range(-3.2..3.2),
            rng.random_range(-3.0..3.0),
            rng.random_range(-5.0..5.0),
        ],
        ChainLinear => (0..nx).map(|_| rng.random_range(-1.0..1.0)).collect(),
        // small motion around the hanging rest shape
        ChainNonlinear => x_init.iter().map(|v| v + rng.random_range(-0.02..0.02)).collect(),
    };
    let u = lb.iter().zip(ub.iter()).map(|(l, h)| rng.random_range(*l..*h)).collect();
    (x, u)
}

/// Random linear-quadratic OCP: linear dynamics, random diagonal weights,
/// optionally box-bounded inputs.
pub fn random_lq_problem(rng: &mut ChaCha8Rng, bounded: bool) -> OcpProblem<LinearModel> {
    let nx = rng.random_range(1..=4);
    let nu = rng.random_range(1..=2);
    let model = LinearModel {
        f: randn(rng, nx, nx),
        g: randn(rng, nx, nu),
        bounded,
    };
    let n = rng.random_range(3..=15);
    let w = DMatrix::from_diagonal(&DVector::from_fn(nx + nu, |_, _| rng.random_range(0.1..2.0)));
    let wn = DMatrix::from_diagonal(&DVector::from_fn(nx, |_, _| rng.random_range(0.1..5.0)));
    let p = OcpProblem::new(model, n, 0.1, w, wn).unwrap();
    if bounded {
        let lb = DVector::from_fn(nu, |_, _| -rng.random_range(0.05..0.5));
        let ub = DVector::from_fn(nu, |_, _| rng.random_range(0.05..0.5));
        p.with_stage_bounds(lb, ub).unwrap()
    } else {
        p
    }
}

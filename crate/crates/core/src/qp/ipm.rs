//! Mehrotra predictor-corrector loop shared by the dense and sparse paths.
//!
//! The problem is
//!
//! ```text
//! min 1/2 z'Hz + g'z   s.t.  E z = b,   lower <= C z <= upper
//! ```
//!
//! with paired slacks `C z - s_l = lower`, `C z + s_u = upper`, multipliers
//! `z_l, z_u >= 0` and stationarity `Hz + g - E'lam + C'(z_u - z_l) = 0`.

use super::{row_residuals, QpSolution, QpSolverConfig, QpStatus};
use nalgebra::DVector;

const STEP_TO_BOUNDARY: f64 = 0.995;
const MIN_STEP: f64 = 1e-12;
const DUAL_BLOWUP: f64 = 1e14;
const REFINEMENT_STEPS: usize = 3;
const NEIGHBOURHOOD: f64 = 1e-3;
const BACKTRACK: f64 = 0.8;
const MAX_BACKTRACKS: usize = 60;
/// penalty of the polishing sweeps: larger converges faster but leaves a
/// stationarity floor of about `rho * eps`
const POLISH_RHO: f64 = 1e4;
const POLISH_ITERS: usize = 50;
/// centring target never goes below this fraction of the tolerance
const TARGET_FLOOR: f64 = 1e-2;

/// Linear-algebra backend of the interior-point iteration.
pub(crate) trait KktSystem {
    fn n(&self) -> usize;
    fn rows(&self) -> usize;
    fn n_eq(&self) -> usize;
    fn gradient(&self) -> &DVector<f64>;
    fn lower(&self) -> &DVector<f64>;
    fn upper(&self) -> &DVector<f64>;
    fn hess_mul(&self, z: &DVector<f64>) -> DVector<f64>;
    fn cons_mul(&self, z: &DVector<f64>) -> DVector<f64>;
    fn cons_tmul(&self, v: &DVector<f64>) -> DVector<f64>;
    /// `E z - b`
    fn eq_residual(&self, z: &DVector<f64>) -> DVector<f64>;
    /// `E' lam`
    fn eq_tmul(&self, lam: &DVector<f64>) -> DVector<f64>;
    /// Factorises `H + C' diag(sigma) C` (together with `E`).
    fn factor(&mut self, sigma: &DVector<f64>) -> Result<(), ()>;
    /// Solves `(H + C'SC) dz - E' dlam = -rd`, `E dz = -re`.
    fn solve(&self, rd: &DVector<f64>, re: &DVector<f64>) -> (DVector<f64>, DVector<f64>);
}

struct Iterate {
    z: DVector<f64>,
    lam: DVector<f64>,
    sl: DVector<f64>,
    su: DVector<f64>,
    zl: DVector<f64>,
    zu: DVector<f64>,
}

struct Direction {
    dz: DVector<f64>,
    dlam: DVector<f64>,
    dsl: DVector<f64>,
    dsu: DVector<f64>,
    dzl: DVector<f64>,
    dzu: DVector<f64>,
}

struct Rhs {
    d: DVector<f64>,
    e: DVector<f64>,
    l: DVector<f64>,
    u: DVector<f64>,
    cl: DVector<f64>,
    cu: DVector<f64>,
}

impl Rhs {
    fn amax(&self) -> f64 {
        [&self.d, &self.e, &self.l, &self.u, &self.cl, &self.cu]
            .iter()
            .map(|v| v.amax())
            .fold(0.0, f64::max)
    }
}

impl Direction {
    fn sub_assign(&mut self, c: &Direction) {
        self.dz -= &c.dz;
        self.dlam -= &c.dlam;
        self.dsl -= &c.dsl;
        self.dsu -= &c.dsu;
        self.dzl -= &c.dzl;
        self.dzu -= &c.dzu;
    }
}

fn mask(v: &DVector<f64>) -> Vec<bool> {
    v.iter().map(|x| x.is_finite()).collect()
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>, active: &[bool]) -> f64 {
    let mut a = f64::INFINITY;
    for i in 0..v.len() {
        if active[i] && dv[i] < 0.0 {
            a = a.min(-v[i] / dv[i]);
        }
    }
    a
}

pub(crate) fn solve<K: KktSystem>(sys: &mut K, cfg: &QpSolverConfig) -> QpSolution {
    let n = sys.n();
    let m = sys.rows();
    let has_l = mask(sys.lower());
    let has_u = mask(sys.upper());
    let lower = sys.lower().map(|x| if x.is_finite() { x } else { 0.0 });
    let upper = sys.upper().map(|x| if x.is_finite() { x } else { 0.0 });
    let n_eq = sys.n_eq();
    let n_active = has_l.iter().chain(has_u.iter()).filter(|&&a| a).count();

    let fail = |status, it: Option<&Iterate>, iters, kkt, hist: Vec<f64>| {
        let (z, lam, zl, zu) = match it {
            Some(it) => (it.z.clone(), it.lam.clone(), it.zl.clone(), it.zu.clone()),
            None => (
                DVector::zeros(n),
                DVector::zeros(n_eq),
                DVector::zeros(m),
                DVector::zeros(m),
            ),
        };
        QpSolution {
            primal: z,
            dual_lower: zl,
            dual_upper: zu,
            eq_duals: lam,
            status,
            iters,
            kkt_residual: kkt,
            barrier_history: hist,
        }
    };

    // Starting point: equality-constrained minimiser of the objective plus a
    // unit least-squares pull of every constrained row towards zero.
    let sigma0 = DVector::from_iterator(
        m,
        (0..m).map(|i| f64::from(u8::from(has_l[i]) + u8::from(has_u[i]))),
    );
    if sys.factor(&sigma0).is_err() {
        return fail(QpStatus::NumericalFailure, None, 0, f64::INFINITY, vec![]);
    }
    let z0 = DVector::zeros(n);
    let (z, lam) = sys.solve(sys.gradient(), &sys.eq_residual(&z0));
    let cz = sys.cons_mul(&z);
    let act = |i: usize, on: &[bool], v: f64| if on[i] { v.max(1.0) } else { 1.0 };
    let mut it = Iterate {
        sl: DVector::from_iterator(m, (0..m).map(|i| act(i, &has_l, cz[i] - lower[i]))),
        su: DVector::from_iterator(m, (0..m).map(|i| act(i, &has_u, upper[i] - cz[i]))),
        zl: DVector::from_iterator(m, (0..m).map(|i| if has_l[i] { 1.0 } else { 0.0 })),
        zu: DVector::from_iterator(m, (0..m).map(|i| if has_u[i] { 1.0 } else { 0.0 })),
        z,
        lam,
    };

    let mut history = Vec::new();
    let mut kkt = f64::INFINITY;
    for iter in 0..=cfg.max_iters {
        // residuals
        let cz = sys.cons_mul(&it.z);
        let rd = sys.hess_mul(&it.z) + sys.gradient() - sys.eq_tmul(&it.lam)
            + sys.cons_tmul(&(&it.zu - &it.zl));
        let re = sys.eq_residual(&it.z);
        let mut rl = DVector::zeros(m);
        let mut ru = DVector::zeros(m);
        let mut gap = 0.0;
        for i in 0..m {
            if has_l[i] {
                rl[i] = cz[i] - it.sl[i] - lower[i];
                gap += it.sl[i] * it.zl[i];
            }
            if has_u[i] {
                ru[i] = cz[i] + it.su[i] - upper[i];
                gap += it.su[i] * it.zu[i];
            }
        }
        let mu = if n_active > 0 { gap / n_active as f64 } else { 0.0 };
        history.push(mu);

        let (primal, compl, _) = row_residuals(&cz, sys.lower(), sys.upper(), &it.zl, &it.zu);
        let slack_compl = (0..m)
            .map(|i| (it.sl[i] * it.zl[i]).max(it.su[i] * it.zu[i]))
            .fold(0.0, f64::max);
        kkt = rd.amax().max(re.amax()).max(primal).max(compl).max(slack_compl);
        if !kkt.is_finite() {
            return fail(QpStatus::NumericalFailure, Some(&it), iter, kkt, history);
        }
        if kkt <= cfg.tol {
            if let Some((p, p_kkt)) = polish(sys, &it, &has_l, &has_u, &lower, &upper) {
                if p_kkt <= kkt {
                    it = p;
                    kkt = p_kkt;
                }
            }
            return QpSolution {
                primal: it.z,
                dual_lower: it.zl,
                dual_upper: it.zu,
                eq_duals: it.lam,
                status: QpStatus::Optimal,
                iters: iter,
                kkt_residual: kkt,
                barrier_history: history,
            };
        }
        if iter == cfg.max_iters {
            break;
        }
        if it.zl.amax().max(it.zu.amax()) > DUAL_BLOWUP {
            return fail(QpStatus::Infeasible, Some(&it), iter, kkt, history);
        }

        let mut sigma = DVector::zeros(m);
        for i in 0..m {
            if has_l[i] {
                sigma[i] += it.zl[i] / it.sl[i];
            }
            if has_u[i] {
                sigma[i] += it.zu[i] / it.su[i];
            }
        }
        if sys.factor(&sigma).is_err() {
            return fail(QpStatus::NumericalFailure, Some(&it), iter, kkt, history);
        }

        // Newton direction for the right-hand sides (rd, re, rl, ru, rcl, rcu)
        // of the unreduced system, obtained through the reduced one.
        let newton = |r: &Rhs| -> Direction {
            let mut rho = DVector::zeros(m);
            for i in 0..m {
                if has_l[i] {
                    rho[i] += (r.cl[i] + it.zl[i] * r.l[i]) / it.sl[i];
                }
                if has_u[i] {
                    rho[i] += (-r.cu[i] + it.zu[i] * r.u[i]) / it.su[i];
                }
            }
            let rhat = &r.d + sys.cons_tmul(&rho);
            let (dz, dlam) = sys.solve(&rhat, &r.e);
            let cdz = sys.cons_mul(&dz);
            let mut d = Direction {
                dz,
                dlam,
                dsl: DVector::zeros(m),
                dsu: DVector::zeros(m),
                dzl: DVector::zeros(m),
                dzu: DVector::zeros(m),
            };
            for i in 0..m {
                if has_l[i] {
                    d.dsl[i] = cdz[i] + r.l[i];
                    d.dzl[i] = (-r.cl[i] - it.zl[i] * d.dsl[i]) / it.sl[i];
                }
                if has_u[i] {
                    d.dsu[i] = -cdz[i] - r.u[i];
                    d.dzu[i] = (-r.cu[i] - it.zu[i] * d.dsu[i]) / it.su[i];
                }
            }
            d
        };
        // Residual of the unreduced system at `d`. The reduced matrix loses
        // the Hessian to round-off once slacks get small, so directions are
        // corrected against this.
        let residual = |d: &Direction, r: &Rhs| -> Rhs {
            let cdz = sys.cons_mul(&d.dz);
            let mut out = Rhs {
                d: sys.hess_mul(&d.dz) - sys.eq_tmul(&d.dlam) + sys.cons_tmul(&(&d.dzu - &d.dzl)) + &r.d,
                e: sys.eq_residual(&d.dz) - sys.eq_residual(&DVector::zeros(n)) + &r.e,
                l: DVector::zeros(m),
                u: DVector::zeros(m),
                cl: DVector::zeros(m),
                cu: DVector::zeros(m),
            };
            for i in 0..m {
                if has_l[i] {
                    out.l[i] = cdz[i] - d.dsl[i] + r.l[i];
                    out.cl[i] = it.zl[i] * d.dsl[i] + it.sl[i] * d.dzl[i] + r.cl[i];
                }
                if has_u[i] {
                    out.u[i] = cdz[i] + d.dsu[i] + r.u[i];
                    out.cu[i] = it.zu[i] * d.dsu[i] + it.su[i] * d.dzu[i] + r.cu[i];
                }
            }
            out
        };
        let direction = |rcl: &DVector<f64>, rcu: &DVector<f64>| -> Direction {
            let r = Rhs {
                d: rd.clone(),
                e: re.clone(),
                l: rl.clone(),
                u: ru.clone(),
                cl: rcl.clone(),
                cu: rcu.clone(),
            };
            let mut d = newton(&r);
            for _ in 0..REFINEMENT_STEPS {
                let res = residual(&d, &r);
                if res.amax() <= f64::EPSILON * r.amax() {
                    break;
                }
                d.sub_assign(&newton(&res));
            }
            d
        };
        let step_len = |d: &Direction| {
            max_step(&it.sl, &d.dsl, &has_l)
                .min(max_step(&it.su, &d.dsu, &has_u))
                .min(max_step(&it.zl, &d.dzl, &has_l))
                .min(max_step(&it.zu, &d.dzu, &has_u))
        };

        // predictor
        let rcl = it.sl.component_mul(&it.zl);
        let rcu = it.su.component_mul(&it.zu);
        let aff = direction(&rcl, &rcu);
        let mut rcl_c = rcl.clone();
        let mut rcu_c = rcu.clone();
        if n_active > 0 {
            let a = step_len(&aff).min(1.0);
            let mut gap_aff = 0.0;
            for i in 0..m {
                if has_l[i] {
                    gap_aff += (it.sl[i] + a * aff.dsl[i]) * (it.zl[i] + a * aff.dzl[i]);
                }
                if has_u[i] {
                    gap_aff += (it.su[i] + a * aff.dsu[i]) * (it.zu[i] + a * aff.dzu[i]);
                }
            }
            let mu_aff = gap_aff / n_active as f64;
            let sigma_c = (mu_aff / mu).powi(3).min(1.0);
            let target = (sigma_c * mu).max(TARGET_FLOOR * cfg.tol);
            // corrector
            for i in 0..m {
                if has_l[i] {
                    rcl_c[i] += aff.dsl[i] * aff.dzl[i] - target;
                }
                if has_u[i] {
                    rcu_c[i] += aff.dsu[i] * aff.dzu[i] - target;
                }
            }
        }
        let d = if n_active > 0 { direction(&rcl_c, &rcu_c) } else { aff };
        let mut alpha = (STEP_TO_BOUNDARY * step_len(&d)).min(1.0);
        // Stay in a wide neighbourhood of the central path: no pair may fall
        // far below the average product. Without this a row can jump across
        // its whole box in one step and the next steps undo it, which cycles.
        if n_active > 0 {
            let spread = |a: f64| {
                let (mut lo, mut sum) = (f64::INFINITY, 0.0);
                for i in 0..m {
                    if has_l[i] {
                        let p = (it.sl[i] + a * d.dsl[i]) * (it.zl[i] + a * d.dzl[i]);
                        lo = lo.min(p);
                        sum += p;
                    }
                    if has_u[i] {
                        let p = (it.su[i] + a * d.dsu[i]) * (it.zu[i] + a * d.dzu[i]);
                        lo = lo.min(p);
                        sum += p;
                    }
                }
                (lo, sum / n_active as f64)
            };
            let (lo0, avg0) = spread(0.0);
            let gamma = NEIGHBOURHOOD.min(lo0 / avg0);
            for _ in 0..MAX_BACKTRACKS {
                let (lo, avg) = spread(alpha);
                if lo >= gamma * avg || avg <= TARGET_FLOOR * cfg.tol {
                    break;
                }
                alpha *= BACKTRACK;
            }
        }
        if !(alpha > MIN_STEP) {
            return fail(QpStatus::NumericalFailure, Some(&it), iter, kkt, history);
        }
        it.z += &d.dz * alpha;
        it.lam += &d.dlam * alpha;
        it.sl += &d.dsl * alpha;
        it.su += &d.dsu * alpha;
        it.zl += &d.dzl * alpha;
        it.zu += &d.dzu * alpha;
    }
    fail(QpStatus::MaxIters, Some(&it), cfg.max_iters, kkt, history)
}

/// Re-solves with the active set read off a converged iterate as equalities,
/// by augmented-Lagrangian sweeps on the same factorisation machinery.
///
/// Weakly active rows leave the interior point with slack and multiplier
/// both of order sqrt(mu), which caps its accuracy; the polished point is
/// exact up to round-off when the guess is right. Returns the new iterate
/// and its KKT residual; the caller keeps whichever is better.
fn polish<K: KktSystem>(
    sys: &mut K,
    it: &Iterate,
    has_l: &[bool],
    has_u: &[bool],
    lower: &DVector<f64>,
    upper: &DVector<f64>,
) -> Option<(Iterate, f64)> {
    let m = sys.rows();
    // +1 upper bound active, -1 lower bound active, 0 free
    let side: Vec<i8> = (0..m)
        .map(|i| {
            let l = has_l[i] && it.zl[i] > it.sl[i];
            let u = has_u[i] && it.zu[i] > it.su[i];
            match (l, u) {
                (true, true) if it.zu[i] >= it.zl[i] => 1,
                (true, _) => -1,
                (_, true) => 1,
                _ => 0,
            }
        })
        .collect();
    let target = DVector::from_iterator(
        m,
        (0..m).map(|i| match side[i] {
            1 => upper[i],
            -1 => lower[i],
            _ => 0.0,
        }),
    );
    let sigma = DVector::from_iterator(m, side.iter().map(|&s| if s != 0 { POLISH_RHO } else { 0.0 }));
    sys.factor(&sigma).ok()?;

    let mut z = it.z.clone();
    let mut lam = it.lam.clone();
    let mut nu = DVector::from_iterator(
        m,
        (0..m).map(|i| if side[i] != 0 { it.zu[i] - it.zl[i] } else { 0.0 }),
    );
    let violation = |cz: &DVector<f64>| {
        DVector::from_iterator(m, (0..m).map(|i| if side[i] != 0 { cz[i] - target[i] } else { 0.0 }))
    };
    for _ in 0..POLISH_ITERS {
        let v = violation(&sys.cons_mul(&z));
        let shifted = &nu + &sigma.component_mul(&v);
        let rd = sys.hess_mul(&z) + sys.gradient() - sys.eq_tmul(&lam) + sys.cons_tmul(&shifted);
        let re = sys.eq_residual(&z);
        let (dz, dlam) = sys.solve(&rd, &re);
        z += dz;
        lam += dlam;
        let v = violation(&sys.cons_mul(&z));
        nu += sigma.component_mul(&v);
        if v.amax() <= f64::EPSILON * (1.0 + target.amax()) {
            break;
        }
    }

    let cz = sys.cons_mul(&z);
    let mut p = Iterate {
        sl: DVector::zeros(m),
        su: DVector::zeros(m),
        zl: DVector::zeros(m),
        zu: DVector::zeros(m),
        z,
        lam,
    };
    for i in 0..m {
        match side[i] {
            1 => p.zu[i] = nu[i],
            -1 => p.zl[i] = -nu[i],
            _ => {}
        }
        if has_l[i] {
            p.sl[i] = (cz[i] - lower[i]).max(0.0);
        }
        if has_u[i] {
            p.su[i] = (upper[i] - cz[i]).max(0.0);
        }
    }
    let rd = sys.hess_mul(&p.z) + sys.gradient() - sys.eq_tmul(&p.lam) + sys.cons_tmul(&(&p.zu - &p.zl));
    let re = sys.eq_residual(&p.z);
    let (primal, compl, sign) = row_residuals(&cz, sys.lower(), sys.upper(), &p.zl, &p.zu);
    let kkt = rd.amax().max(re.amax()).max(primal).max(compl).max(sign);
    if !kkt.is_finite() {
        return None;
    }
    Some((p, kkt))
}

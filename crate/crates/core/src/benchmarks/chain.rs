//! Chains of masses.
//!
//! [`LinearChain`]: masses on a line joined by linear springs, the first
//! spring anchored to a wall, a force acting on the last mass.
//!
//! [`NonlinearChain`]: point masses in 3-D joined by springs with a rest
//! length, one end fixed at the origin, the other end moved with a
//! commanded velocity. States are the intermediate positions, the
//! intermediate velocities and the free-end position.

use crate::ad::{jacobian, Scalar, Tangent};
use crate::model::{ModelShape, OcpModel};
use nalgebra::DVector;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearChain {
    pub masses: usize,
    pub mass: f64,
    pub stiffness: f64,
    /// weight of the state part of the cost, the input weight is 1
    pub state_weight: f64,
}

impl Default for LinearChain {
    fn default() -> Self {
        LinearChain {
            masses: 15,
            mass: 1.0,
            stiffness: 1.0,
            state_weight: 1.0,
        }
    }
}

impl OcpModel for LinearChain {
    fn shape(&self) -> ModelShape {
        let nx = 2 * self.masses;
        ModelShape {
            nx,
            nu: 1,
            nr: nx + 1,
            nr_n: nx,
            nc: 1,
            nc_n: 0,
            np: 0,
        }
    }

    fn dynamics<S: Scalar>(&self, x: &[S], u: &[S], _p: &[f64], xdot: &mut [S]) {
        let n = self.masses;
        let (pos, vel) = x.split_at(n);
        let k = self.stiffness / self.mass;
        for i in 0..n {
            let left = if i == 0 { S::zero() } else { pos[i - 1] };
            let mut acc = (left - pos[i]) * k;
            if i + 1 < n {
                acc += (pos[i + 1] - pos[i]) * k;
            } else {
                acc += u[0] / self.mass;
            }
            xdot[i] = vel[i];
            xdot[n + i] = acc;
        }
    }

    fn stage_residual<S: Scalar>(&self, x: &[S], u: &[S], _p: &[f64], out: &mut [S]) {
        let s = self.state_weight.sqrt();
        for (o, xi) in out.iter_mut().zip(x) {
            *o = *xi * s;
        }
        out[x.len()] = u[0];
    }

    fn terminal_residual<S: Scalar>(&self, x: &[S], _p: &[f64], out: &mut [S]) {
        let s = self.state_weight.sqrt();
        for (o, xi) in out.iter_mut().zip(x) {
            *o = *xi * s;
        }
    }

    fn stage_constraint<S: Scalar>(&self, _x: &[S], u: &[S], _p: &[f64], out: &mut [S]) {
        out[0] = u[0];
    }
}

/// Parameters follow the common chain-of-masses test problem: 30 g masses,
/// spring constant 1 N/m, rest length 33 mm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NonlinearChain {
    /// number of chain points including the fixed and the free end
    pub points: usize,
    pub mass: f64,
    pub stiffness: f64,
    pub rest_length: f64,
    pub gravity: f64,
}

impl Default for NonlinearChain {
    fn default() -> Self {
        NonlinearChain {
            points: 6,
            mass: 0.03,
            stiffness: 1.0,
            rest_length: 0.033,
            gravity: 9.81,
        }
    }
}

impl NonlinearChain {
    /// number of free intermediate masses
    pub fn intermediate(&self) -> usize {
        self.points - 2
    }

    /// Accelerations of the intermediate masses given all positions
    /// (`(points - 2) * 3` intermediate coordinates and the free end).
    fn accelerations<S: Scalar>(&self, inner: &[S], end: &[S], acc: &mut [S]) {
        let nm = self.intermediate();
        let point = |i: usize, d: usize| -> S {
            if i == 0 {
                S::zero()
            } else if i <= nm {
                inner[3 * (i - 1) + d]
            } else {
                end[d]
            }
        };
        // force of the spring between point i and i + 1, acting on i
        let spring = |i: usize| -> [S; 3] {
            let d = [
                point(i + 1, 0) - point(i, 0),
                point(i + 1, 1) - point(i, 1),
                point(i + 1, 2) - point(i, 2),
            ];
            let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            let scale = (S::one() - S::cst(self.rest_length) / len) * self.stiffness;
            [d[0] * scale, d[1] * scale, d[2] * scale]
        };
        let mut below = spring(0);
        for i in 1..=nm {
            let above = spring(i);
            for d in 0..3 {
                acc[3 * (i - 1) + d] = (above[d] - below[d]) / self.mass;
            }
            acc[3 * (i - 1) + 2] = acc[3 * (i - 1) + 2] - self.gravity;
            below = above;
        }
    }

    /// State at rest with the free end held at `end`: the intermediate
    /// masses hang in static equilibrium, all velocities zero.
    pub fn rest_state(&self, end: [f64; 3]) -> DVector<f64> {
        let nm = self.intermediate();
        let n3 = 3 * nm;
        // straight line as initial guess, then Newton on the force balance
        let mut inner: Vec<f64> = (1..=nm)
            .flat_map(|i| {
                let t = i as f64 / (nm + 1) as f64;
                [end[0] * t, end[1] * t, end[2] * t]
            })
            .collect();
        let residual = |q: &[f64]| {
            let mut acc = vec![0.0; n3];
            self.accelerations(q, &end, &mut acc);
            acc
        };
        let end_t = end.map(<Tangent as Scalar>::cst);
        for _ in 0..100 {
            let (r, jac) = jacobian(n3, &inner, |q, out| self.accelerations(q, &end_t, out));
            let norm = DVector::from_column_slice(&r).amax();
            if norm < 1e-12 {
                break;
            }
            let Some(dq) = jac.lu().solve(&DVector::from_column_slice(&r)) else {
                break;
            };
            let mut t = 1.0;
            loop {
                let trial: Vec<f64> = inner.iter().zip(dq.iter()).map(|(q, d)| q - t * d).collect();
                let rt = DVector::from_vec(residual(&trial)).amax();
                if rt < norm || t < 1e-6 {
                    inner = trial;
                    break;
                }
                t *= 0.5;
            }
        }
        let mut x = DVector::zeros(2 * n3 + 3);
        x.rows_mut(0, n3).copy_from_slice(&inner);
        x.rows_mut(2 * n3, 3).copy_from_slice(&end);
        x
    }
}

impl OcpModel for NonlinearChain {
    fn shape(&self) -> ModelShape {
        let nm = self.intermediate();
        ModelShape {
            nx: 6 * nm + 3,
            nu: 3,
            nr: 3 * nm + 6,
            nr_n: 3 * nm + 3,
            nc: 3,
            nc_n: 0,
            np: 3,
        }
    }

    fn dynamics<S: Scalar>(&self, x: &[S], u: &[S], _p: &[f64], xdot: &mut [S]) {
        let n3 = 3 * self.intermediate();
        let (inner, rest) = x.split_at(n3);
        let (vel, end) = rest.split_at(n3);
        xdot[..n3].copy_from_slice(vel);
        self.accelerations(inner, end, &mut xdot[n3..2 * n3]);
        xdot[2 * n3..].copy_from_slice(u);
    }

    /// `(velocities, end - p_ref, u)`
    fn stage_residual<S: Scalar>(&self, x: &[S], u: &[S], p: &[f64], out: &mut [S]) {
        let n3 = 3 * self.intermediate();
        self.terminal_residual(x, p, &mut out[..n3 + 3]);
        out[n3 + 3..].copy_from_slice(u);
    }

    fn terminal_residual<S: Scalar>(&self, x: &[S], p: &[f64], out: &mut [S]) {
        let n3 = 3 * self.intermediate();
        out[..n3].copy_from_slice(&x[n3..2 * n3]);
        for d in 0..3 {
            out[n3 + d] = x[2 * n3 + d] - p[d];
        }
    }

    fn stage_constraint<S: Scalar>(&self, _x: &[S], u: &[S], _p: &[f64], out: &mut [S]) {
        out.copy_from_slice(u);
    }
}

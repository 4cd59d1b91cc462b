//! Cart-pole swing-up.
//!
//! States `(p, theta, v, omega)`: cart position, pole angle, their rates.
//! `theta = 0` is the upright position and `theta = pi` the hanging rest
//! position. The input is the horizontal force on the cart.

use crate::ad::Scalar;
use crate::model::{ModelShape, OcpModel};

/// Physical parameters. The defaults (1 kg cart, 0.1 kg pole of length
/// 0.8 m) allow a swing-up in about 2 s with forces within 20 N.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pendulum {
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub length: f64,
    pub gravity: f64,
}

impl Default for Pendulum {
    fn default() -> Self {
        Pendulum {
            cart_mass: 1.0,
            pole_mass: 0.1,
            length: 0.8,
            gravity: 9.81,
        }
    }
}

impl OcpModel for Pendulum {
    fn shape(&self) -> ModelShape {
        ModelShape {
            nx: 4,
            nu: 1,
            nr: 5,
            nr_n: 4,
            nc: 1,
            nc_n: 0,
            np: 1,
        }
    }

    fn dynamics<S: Scalar>(&self, x: &[S], u: &[S], _p: &[f64], xdot: &mut [S]) {
        let (m_c, m, l, g) = (self.cart_mass, self.pole_mass, self.length, self.gravity);
        let (th, v, om, f) = (x[1], x[2], x[3], u[0]);
        let (s, c) = (th.sin(), th.cos());
        let om2 = om * om;
        let den = (c * c) * (-m) + (m_c + m);
        let a = s * om2 * (-m * l) + c * s * (m * g) + f;
        let b = c * s * om2 * (-m * l) + f * c + s * ((m_c + m) * g);
        xdot[0] = v;
        xdot[1] = om;
        xdot[2] = a / den;
        xdot[3] = b / (den * l);
    }

    /// `(p - p_ref, theta, v, omega, F)`, with `p_ref = p[0]`.
    fn stage_residual<S: Scalar>(&self, x: &[S], u: &[S], p: &[f64], out: &mut [S]) {
        out[0] = x[0] - p[0];
        out[1..4].copy_from_slice(&x[1..4]);
        out[4] = u[0];
    }

    fn terminal_residual<S: Scalar>(&self, x: &[S], p: &[f64], out: &mut [S]) {
        out[0] = x[0] - p[0];
        out[1..4].copy_from_slice(&x[1..4]);
    }

    fn stage_constraint<S: Scalar>(&self, _x: &[S], u: &[S], _p: &[f64], out: &mut [S]) {
        out[0] = u[0];
    }
}

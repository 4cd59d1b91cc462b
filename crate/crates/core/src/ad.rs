//! Forward-mode automatic differentiation.
//!
//! Model functions are written once against the [`Scalar`] trait and then
//! evaluated either on plain `f64` or on [`Tangent`] values that carry up to
//! [`LANES`] directional derivatives alongside the value. Jacobians wider than
//! `LANES` columns are assembled in several seeded passes.

use nalgebra::DMatrix;
use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

/// Number of derivative directions propagated per pass.
pub const LANES: usize = 16;

/// Scalar arithmetic shared by `f64` and [`Tangent`].
pub trait Scalar:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
{
    /// Lifts a constant (zero derivative).
    fn cst(v: f64) -> Self;
    fn value(&self) -> f64;

    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tan(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;
    fn atan(self) -> Self;
    fn powi(self, n: i32) -> Self;
    fn abs(self) -> Self;

    fn zero() -> Self {
        Self::cst(0.0)
    }

    fn one() -> Self {
        Self::cst(1.0)
    }

    fn square(self) -> Self {
        self * self
    }
}

impl Scalar for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(&self) -> f64 {
        *self
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn tan(self) -> Self {
        f64::tan(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    #[inline]
    fn atan(self) -> Self {
        f64::atan(self)
    }
    #[inline]
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
    #[inline]
    fn abs(self) -> Self {
        f64::abs(self)
    }
}

/// A value together with its partial derivatives along the active seed
/// directions. Lanes beyond `len` are always zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tangent {
    pub value: f64,
    len: usize,
    partials: [f64; LANES],
}

impl Tangent {
    pub fn constant(value: f64) -> Self {
        Tangent {
            value,
            len: 0,
            partials: [0.0; LANES],
        }
    }

    /// Independent variable seeded with a unit derivative in `lane`.
    pub fn seeded(value: f64, lane: usize, width: usize) -> Self {
        assert!(lane < width && width <= LANES);
        let mut t = Tangent {
            value,
            len: width,
            partials: [0.0; LANES],
        };
        t.partials[lane] = 1.0;
        t
    }

    /// Independent variable with `width` active lanes but no unit seed.
    pub fn passive(value: f64, width: usize) -> Self {
        assert!(width <= LANES);
        Tangent {
            value,
            len: width,
            partials: [0.0; LANES],
        }
    }

    pub fn partials(&self) -> &[f64] {
        &self.partials[..self.len]
    }

    pub fn partial(&self, lane: usize) -> f64 {
        self.partials[lane]
    }

    #[inline]
    fn chain(self, value: f64, dvalue: f64) -> Self {
        let mut out = Tangent {
            value,
            len: self.len,
            partials: [0.0; LANES],
        };
        for i in 0..self.len {
            out.partials[i] = dvalue * self.partials[i];
        }
        out
    }
}

impl Add for Tangent {
    type Output = Tangent;
    #[inline]
    fn add(self, rhs: Tangent) -> Tangent {
        let len = self.len.max(rhs.len);
        let mut out = Tangent {
            value: self.value + rhs.value,
            len,
            partials: [0.0; LANES],
        };
        for i in 0..len {
            out.partials[i] = self.partials[i] + rhs.partials[i];
        }
        out
    }
}

impl Sub for Tangent {
    type Output = Tangent;
    #[inline]
    fn sub(self, rhs: Tangent) -> Tangent {
        let len = self.len.max(rhs.len);
        let mut out = Tangent {
            value: self.value - rhs.value,
            len,
            partials: [0.0; LANES],
        };
        for i in 0..len {
            out.partials[i] = self.partials[i] - rhs.partials[i];
        }
        out
    }
}

impl Mul for Tangent {
    type Output = Tangent;
    #[inline]
    fn mul(self, rhs: Tangent) -> Tangent {
        let len = self.len.max(rhs.len);
        let mut out = Tangent {
            value: self.value * rhs.value,
            len,
            partials: [0.0; LANES],
        };
        for i in 0..len {
            out.partials[i] = self.partials[i] * rhs.value + self.value * rhs.partials[i];
        }
        out
    }
}

impl Div for Tangent {
    type Output = Tangent;
    #[inline]
    fn div(self, rhs: Tangent) -> Tangent {
        let len = self.len.max(rhs.len);
        let q = self.value / rhs.value;
        let mut out = Tangent {
            value: q,
            len,
            partials: [0.0; LANES],
        };
        for i in 0..len {
            out.partials[i] = (self.partials[i] - q * rhs.partials[i]) / rhs.value;
        }
        out
    }
}

impl Neg for Tangent {
    type Output = Tangent;
    #[inline]
    fn neg(self) -> Tangent {
        let mut out = self;
        out.value = -self.value;
        for i in 0..self.len {
            out.partials[i] = -self.partials[i];
        }
        out
    }
}

impl Add<f64> for Tangent {
    type Output = Tangent;
    #[inline]
    fn add(mut self, rhs: f64) -> Tangent {
        self.value += rhs;
        self
    }
}

impl Sub<f64> for Tangent {
    type Output = Tangent;
    #[inline]
    fn sub(mut self, rhs: f64) -> Tangent {
        self.value -= rhs;
        self
    }
}

impl Mul<f64> for Tangent {
    type Output = Tangent;
    #[inline]
    fn mul(self, rhs: f64) -> Tangent {
        self.chain(self.value * rhs, rhs)
    }
}

impl Div<f64> for Tangent {
    type Output = Tangent;
    #[inline]
    fn div(self, rhs: f64) -> Tangent {
        let mut out = Tangent {
            value: self.value / rhs,
            len: self.len,
            partials: [0.0; LANES],
        };
        for i in 0..self.len {
            out.partials[i] = self.partials[i] / rhs;
        }
        out
    }
}

impl Add<Tangent> for f64 {
    type Output = Tangent;
    fn add(self, rhs: Tangent) -> Tangent {
        rhs + self
    }
}

impl Sub<Tangent> for f64 {
    type Output = Tangent;
    fn sub(self, rhs: Tangent) -> Tangent {
        -rhs + self
    }
}

impl Mul<Tangent> for f64 {
    type Output = Tangent;
    fn mul(self, rhs: Tangent) -> Tangent {
        rhs * self
    }
}

macro_rules! assign_ops {
    ($($tr:ident $f:ident $op:tt),*) => {$(
        impl $tr for Tangent {
            #[inline]
            fn $f(&mut self, rhs: Tangent) {
                *self = *self $op rhs;
            }
        }
    )*};
}

assign_ops!(AddAssign add_assign +, SubAssign sub_assign -, MulAssign mul_assign *, DivAssign div_assign /);

impl Scalar for Tangent {
    fn cst(v: f64) -> Self {
        Tangent::constant(v)
    }
    fn value(&self) -> f64 {
        self.value
    }
    fn sin(self) -> Self {
        self.chain(self.value.sin(), self.value.cos())
    }
    fn cos(self) -> Self {
        self.chain(self.value.cos(), -self.value.sin())
    }
    fn tan(self) -> Self {
        let t = self.value.tan();
        self.chain(t, 1.0 + t * t)
    }
    fn exp(self) -> Self {
        let e = self.value.exp();
        self.chain(e, e)
    }
    fn ln(self) -> Self {
        self.chain(self.value.ln(), 1.0 / self.value)
    }
    fn sqrt(self) -> Self {
        let s = self.value.sqrt();
        self.chain(s, 0.5 / s)
    }
    fn tanh(self) -> Self {
        let t = self.value.tanh();
        self.chain(t, 1.0 - t * t)
    }
    fn atan(self) -> Self {
        self.chain(self.value.atan(), 1.0 / (1.0 + self.value * self.value))
    }
    fn powi(self, n: i32) -> Self {
        let d = if n == 0 {
            0.0
        } else {
            f64::from(n) * self.value.powi(n - 1)
        };
        self.chain(self.value.powi(n), d)
    }
    fn abs(self) -> Self {
        let s = if self.value < 0.0 { -1.0 } else { 1.0 };
        self.chain(self.value.abs(), s)
    }
}

/// Value and Jacobians of a vector function `f(x, u) -> out` of two vector
/// arguments, evaluated in chunks of at most [`LANES`] seed directions.
///
/// Returns `(value, d out/d x, d out/d u)`.
pub fn jacobian2<F>(
    nout: usize,
    x: &[f64],
    u: &[f64],
    mut eval: F,
) -> (Vec<f64>, DMatrix<f64>, DMatrix<f64>)
where
    F: FnMut(&[Tangent], &[Tangent], &mut [Tangent]),
{
    let nx = x.len();
    let nu = u.len();
    let ndir = nx + nu;
    let mut jx = DMatrix::zeros(nout, nx);
    let mut ju = DMatrix::zeros(nout, nu);
    let mut value = vec![0.0; nout];
    let mut out = vec![Tangent::constant(0.0); nout];
    let mut xt = vec![Tangent::constant(0.0); nx];
    let mut ut = vec![Tangent::constant(0.0); nu];

    let mut start = 0;
    // at least one pass so that the value is always produced
    loop {
        let width = (ndir - start).min(LANES);
        for (i, (t, &v)) in xt.iter_mut().zip(x).enumerate() {
            *t = seed(v, i, start, width);
        }
        for (i, (t, &v)) in ut.iter_mut().zip(u).enumerate() {
            *t = seed(v, nx + i, start, width);
        }
        out.iter_mut().for_each(|o| *o = Tangent::constant(0.0));
        eval(&xt, &ut, &mut out);
        for (r, o) in out.iter().enumerate() {
            value[r] = o.value;
            for lane in 0..width {
                let dir = start + lane;
                if dir < nx {
                    jx[(r, dir)] = o.partial(lane);
                } else {
                    ju[(r, dir - nx)] = o.partial(lane);
                }
            }
        }
        start += width;
        if start >= ndir {
            break;
        }
    }
    (value, jx, ju)
}

fn seed(v: f64, dir: usize, start: usize, width: usize) -> Tangent {
    if dir >= start && dir < start + width {
        Tangent::seeded(v, dir - start, width)
    } else {
        Tangent::passive(v, width)
    }
}

/// Jacobian of a single-argument vector function.
pub fn jacobian<F>(nout: usize, x: &[f64], mut eval: F) -> (Vec<f64>, DMatrix<f64>)
where
    F: FnMut(&[Tangent], &mut [Tangent]),
{
    let (v, jx, _) = jacobian2(nout, x, &[], |xt, _, out| eval(xt, out));
    (v, jx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn poly<S: Scalar>(x: S, y: S) -> S {
        x * x * y + (x / y).sin() - y.exp() * 0.5 + x.powi(3).sqrt()
    }

    #[test]
    fn sin_derivative() {
        let (v, j) = jacobian(1, &[0.3], |x, out| out[0] = x[0].sin());
        assert_eq!(v[0], 0.3f64.sin());
        assert_relative_eq!(j[(0, 0)], 0.3f64.cos(), epsilon = 1e-15);
    }

    #[test]
    fn product_and_quotient_rules() {
        let (x, y) = (1.3, 0.7);
        let (_, j) = jacobian(1, &[x, y], |v, out| out[0] = poly(v[0], v[1]));
        let h = 1e-6;
        let fd_x = (poly(x + h, y) - poly(x - h, y)) / (2.0 * h);
        let fd_y = (poly(x, y + h) - poly(x, y - h)) / (2.0 * h);
        assert_relative_eq!(j[(0, 0)], fd_x, max_relative = 1e-8);
        assert_relative_eq!(j[(0, 1)], fd_y, max_relative = 1e-8);
    }

    #[test]
    fn wide_jacobian_spans_multiple_passes() {
        let n = 2 * LANES + 3;
        let x: Vec<f64> = (0..n).map(|i| 0.1 * i as f64).collect();
        let (v, j) = jacobian(n, &x, |xt, out| {
            for i in 0..xt.len() {
                let next = xt[(i + 1) % xt.len()];
                out[i] = xt[i] * next + xt[i].cos();
            }
        });
        for i in 0..n {
            let next = x[(i + 1) % n];
            assert_eq!(v[i], x[i] * next + x[i].cos());
            assert_relative_eq!(j[(i, i)], next - x[i].sin(), epsilon = 1e-14);
            assert_relative_eq!(j[(i, (i + 1) % n)], x[i], epsilon = 1e-14);
        }
    }

    #[test]
    fn zero_width_matches_plain_evaluation() {
        let a = Tangent::passive(1.7, 0);
        let b = Tangent::constant(-0.4);
        let t = poly(a, b);
        assert_eq!(t.value, poly(1.7, -0.4));
        assert!(t.partials().is_empty());
    }

    #[test]
    fn mixed_f64_operators() {
        let x = Tangent::seeded(2.0, 0, 1);
        let y = 3.0 - x * 2.0 + (x + 0.0).powi(1) * 0.0;
        assert_eq!(y.value, -1.0);
        assert_eq!(y.partial(0), -2.0);
        let z = 2.0 * x / 4.0;
        assert_eq!(z.partial(0), 0.5);
    }
}

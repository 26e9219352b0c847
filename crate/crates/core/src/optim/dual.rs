//! Forward-mode automatic differentiation with vector dual numbers.
//!
//! A `Dual<N>` carries a value and `N` directional derivatives, so one pass
//! through a program yields `N` gradient entries. Gradients of larger
//! programs are assembled chunk by chunk.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

/// Width of the tangent chunk used by [`forward_grad`].
pub const CHUNK: usize = 16;

pub type ChunkDual = Dual<CHUNK>;

/// Scalar arithmetic shared by `f64` and dual numbers.
pub trait Real:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    fn cst(v: f64) -> Self;
    fn value(self) -> f64;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tan(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;
    fn atan(self) -> Self;
    fn atan2(self, x: Self) -> Self;

    fn zero() -> Self {
        Self::cst(0.0)
    }

    fn scale(self, k: f64) -> Self {
        self * Self::cst(k)
    }

    fn powi2(self) -> Self {
        self * self
    }

    /// Hard clamp of the value. The derivative is replaced by that of a
    /// tanh surrogate of the given width so gradients stay informative at
    /// the bounds; inside the box (farther than a few widths from either
    /// bound) the derivative is 1 to machine precision.
    fn clamp_smooth_grad(self, lo: f64, hi: f64, width: f64) -> Self;

    /// Adds a constant without touching derivatives.
    fn shift(self, c: f64) -> Self {
        self + Self::cst(c)
    }
}

impl Real for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn value(self) -> f64 {
        self
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn tan(self) -> Self {
        f64::tan(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn atan(self) -> Self {
        f64::atan(self)
    }
    fn atan2(self, x: Self) -> Self {
        f64::atan2(self, x)
    }
    fn clamp_smooth_grad(self, lo: f64, hi: f64, _width: f64) -> Self {
        self.clamp(lo, hi)
    }
}

/// Value plus `N` tangent components.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<const N: usize> {
    pub v: f64,
    pub d: [f64; N],
}

impl<const N: usize> Dual<N> {
    pub fn constant(v: f64) -> Self {
        Self { v, d: [0.0; N] }
    }

    /// Independent variable seeded along tangent direction `dir`.
    pub fn variable(v: f64, dir: usize) -> Self {
        let mut d = [0.0; N];
        d[dir] = 1.0;
        Self { v, d }
    }

    #[inline]
    fn chain(self, v: f64, dv: f64) -> Self {
        let mut d = self.d;
        for x in d.iter_mut() {
            *x *= dv;
        }
        Self { v, d }
    }
}

impl<const N: usize> Add for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(mut self, o: Self) -> Self {
        self.v += o.v;
        for (a, b) in self.d.iter_mut().zip(o.d.iter()) {
            *a += b;
        }
        self
    }
}

impl<const N: usize> Sub for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, o: Self) -> Self {
        self.v -= o.v;
        for (a, b) in self.d.iter_mut().zip(o.d.iter()) {
            *a -= b;
        }
        self
    }
}

impl<const N: usize> Mul for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        let mut d = [0.0; N];
        for (k, dk) in d.iter_mut().enumerate() {
            *dk = self.d[k] * o.v + self.v * o.d[k];
        }
        Self { v: self.v * o.v, d }
    }
}

impl<const N: usize> Div for Dual<N> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let inv = 1.0 / o.v;
        let v = self.v * inv;
        let mut d = [0.0; N];
        for (k, dk) in d.iter_mut().enumerate() {
            *dk = (self.d[k] - v * o.d[k]) * inv;
        }
        Self { v, d }
    }
}

impl<const N: usize> Neg for Dual<N> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        self.chain(-self.v, -1.0)
    }
}

impl<const N: usize> AddAssign for Dual<N> {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<const N: usize> SubAssign for Dual<N> {
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl<const N: usize> MulAssign for Dual<N> {
    fn mul_assign(&mut self, o: Self) {
        *self = *self * o;
    }
}

impl<const N: usize> Real for Dual<N> {
    fn cst(v: f64) -> Self {
        Self::constant(v)
    }
    fn value(self) -> f64 {
        self.v
    }
    fn sin(self) -> Self {
        self.chain(self.v.sin(), self.v.cos())
    }
    fn cos(self) -> Self {
        self.chain(self.v.cos(), -self.v.sin())
    }
    fn tan(self) -> Self {
        let t = self.v.tan();
        self.chain(t, 1.0 + t * t)
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e)
    }
    fn ln(self) -> Self {
        self.chain(self.v.ln(), 1.0 / self.v)
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.chain(s, 0.5 / s)
    }
    fn tanh(self) -> Self {
        let t = self.v.tanh();
        self.chain(t, 1.0 - t * t)
    }
    fn atan(self) -> Self {
        self.chain(self.v.atan(), 1.0 / (1.0 + self.v * self.v))
    }
    fn atan2(self, x: Self) -> Self {
        let r2 = self.v * self.v + x.v * x.v;
        let mut d = [0.0; N];
        for (k, dk) in d.iter_mut().enumerate() {
            *dk = (x.v * self.d[k] - self.v * x.d[k]) / r2;
        }
        Self {
            v: self.v.atan2(x.v),
            d,
        }
    }
    fn scale(self, k: f64) -> Self {
        self.chain(self.v * k, k)
    }
    fn shift(mut self, c: f64) -> Self {
        self.v += c;
        self
    }
    fn clamp_smooth_grad(self, lo: f64, hi: f64, width: f64) -> Self {
        let slope = 0.5 * (((hi - self.v) / width).tanh() + ((self.v - lo) / width).tanh());
        self.chain(self.v.clamp(lo, hi), slope)
    }
}

/// A scalar program that can be evaluated on plain floats and on chunk duals.
/// Implementors usually forward both methods to one generic function.
pub trait Program {
    fn dim(&self) -> usize;
    fn evaluate(&self, x: &[f64]) -> f64;
    fn evaluate_dual(&self, x: &[ChunkDual]) -> ChunkDual;
}

/// Exact gradient of `program` at `x` by forward-mode differentiation,
/// `ceil(dim / CHUNK)` passes. Returns the program value.
pub fn forward_grad<P: Program + ?Sized>(program: &P, x: &[f64], grad: &mut [f64]) -> f64 {
    let n = program.dim();
    assert_eq!(x.len(), n);
    assert_eq!(grad.len(), n);
    if n == 0 {
        return program.evaluate(x);
    }
    let mut value = f64::NAN;
    let mut seeded: Vec<ChunkDual> = x.iter().map(|&v| ChunkDual::constant(v)).collect();
    for base in (0..n).step_by(CHUNK) {
        let end = (base + CHUNK).min(n);
        for (k, s) in seeded.iter_mut().enumerate() {
            *s = if (base..end).contains(&k) {
                ChunkDual::variable(x[k], k - base)
            } else {
                ChunkDual::constant(x[k])
            };
        }
        let out = program.evaluate_dual(&seeded);
        value = out.v;
        grad[base..end].copy_from_slice(&out.d[..end - base]);
    }
    value
}

/// Central finite-difference gradient, used as an independent check.
pub fn central_difference<P: Program + ?Sized>(program: &P, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|k| {
            let orig = xp[k];
            xp[k] = orig + h;
            let fp = program.evaluate(&xp);
            xp[k] = orig - h;
            let fm = program.evaluate(&xp);
            xp[k] = orig;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

//! Scalar abstraction shared by the plain `f64` kernels and the forward-mode
//! dual numbers used to differentiate an unrolled solve.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

/// Number of tangent directions carried by [`Dual4`], one per hyperparameter.
pub const TANGENTS: usize = 4;

pub trait Scalar:
    Copy
    + Debug
    + PartialEq
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    fn from_f64(v: f64) -> Self;
    /// Primal (real) part.
    fn re(&self) -> f64;
    fn abs(self) -> Self;
    fn sqrt(self) -> Self;
    fn powi(self, n: u32) -> Self;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }

    fn one() -> Self {
        Self::from_f64(1.0)
    }

    fn scale(self, c: f64) -> Self {
        self * Self::from_f64(c)
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn re(&self) -> f64 {
        *self
    }
    #[inline]
    fn abs(self) -> Self {
        f64::abs(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn powi(self, n: u32) -> Self {
        f64::powi(self, n as i32)
    }
    #[inline]
    fn scale(self, c: f64) -> Self {
        self * c
    }
}

/// First-order dual number with four tangent components.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual4 {
    pub re: f64,
    pub eps: [f64; TANGENTS],
}

impl Dual4 {
    pub const fn constant(re: f64) -> Self {
        Self {
            re,
            eps: [0.0; TANGENTS],
        }
    }

    pub const fn new(re: f64, eps: [f64; TANGENTS]) -> Self {
        Self { re, eps }
    }

    #[inline]
    fn map_eps(self, f: impl Fn(f64) -> f64) -> [f64; TANGENTS] {
        let mut out = self.eps;
        for e in &mut out {
            *e = f(*e);
        }
        out
    }
}

impl Add for Dual4 {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        let mut eps = self.eps;
        for (e, r) in eps.iter_mut().zip(rhs.eps) {
            *e += r;
        }
        Self { re: self.re + rhs.re, eps }
    }
}

impl Sub for Dual4 {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        let mut eps = self.eps;
        for (e, r) in eps.iter_mut().zip(rhs.eps) {
            *e -= r;
        }
        Self { re: self.re - rhs.re, eps }
    }
}

impl Mul for Dual4 {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        let mut eps = [0.0; TANGENTS];
        for (i, e) in eps.iter_mut().enumerate() {
            *e = self.eps[i] * rhs.re + self.re * rhs.eps[i];
        }
        Self { re: self.re * rhs.re, eps }
    }
}

impl Div for Dual4 {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let inv = 1.0 / rhs.re;
        let re = self.re * inv;
        let mut eps = [0.0; TANGENTS];
        for (i, e) in eps.iter_mut().enumerate() {
            *e = (self.eps[i] - re * rhs.eps[i]) * inv;
        }
        Self { re, eps }
    }
}

impl Neg for Dual4 {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self {
            re: -self.re,
            eps: self.map_eps(|e| -e),
        }
    }
}

impl AddAssign for Dual4 {
    #[inline]
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl SubAssign for Dual4 {
    #[inline]
    fn sub_assign(&mut self, rhs: Self) {
        *self = *self - rhs;
    }
}

impl MulAssign for Dual4 {
    #[inline]
    fn mul_assign(&mut self, rhs: Self) {
        *self = *self * rhs;
    }
}

impl Scalar for Dual4 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        Self::constant(v)
    }
    #[inline]
    fn re(&self) -> f64 {
        self.re
    }
    #[inline]
    fn abs(self) -> Self {
        if self.re < 0.0 {
            -self
        } else {
            self
        }
    }
    fn sqrt(self) -> Self {
        let re = self.re.sqrt();
        let d = if re > 0.0 { 0.5 / re } else { 0.0 };
        Self {
            re,
            eps: self.map_eps(|e| e * d),
        }
    }
    fn powi(self, n: u32) -> Self {
        if n == 0 {
            return Self::constant(1.0);
        }
        let d = n as f64 * self.re.powi(n as i32 - 1);
        Self {
            re: self.re.powi(n as i32),
            eps: self.map_eps(|e| e * d),
        }
    }
    #[inline]
    fn scale(self, c: f64) -> Self {
        Self {
            re: self.re * c,
            eps: self.map_eps(|e| e * c),
        }
    }
}

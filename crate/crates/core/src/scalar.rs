//! Scalar abstraction shared by the exact and numeric layers.
//!
//! The algebraic layer works over any commutative ring with identity; the
//! measurement layer needs absolute values and literals.  `Ring` captures the
//! former, `Scalar` the latter.  Four instantiations are used throughout the
//! crate: `i64` for structure constants, `Rat` for exact inverses of Cartan
//! matrices, `C64` for field values on grids, and [`Jet2`] for field values
//! carrying first and mixed second derivatives.

use num_complex::Complex;
use num_rational::Ratio;
use num_traits::{One, Zero};
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Complex double, the workhorse numeric scalar.
pub type C64 = Complex<f64>;

/// Exact rational with machine integer parts.
pub type Rat = Ratio<i64>;

/// Shorthand constructor for a complex double.
pub fn c64(re: f64, im: f64) -> C64 {
    Complex::new(re, im)
}

/// Commutative ring with identity, the minimum demanded of matrix entries.
pub trait Ring:
    Clone + PartialEq + std::fmt::Debug + Zero + One + Neg<Output = Self> + Sub<Output = Self>
{
}

impl<T> Ring for T where
    T: Clone + PartialEq + std::fmt::Debug + Zero + One + Neg<Output = T> + Sub<Output = T>
{
}

/// Ring that can absorb integer literals and report a magnitude.
///
/// `abs_f64` is used for pivot selection and residual measurement; for exact
/// types it is a faithful magnitude, for jets it is the magnitude of the value
/// component only.
pub trait Scalar: Ring {
    fn from_i64(n: i64) -> Self;
    fn abs_f64(&self) -> f64;
}

impl Scalar for i64 {
    fn from_i64(n: i64) -> Self {
        n
    }
    fn abs_f64(&self) -> f64 {
        (*self as f64).abs()
    }
}

impl Scalar for Rat {
    fn from_i64(n: i64) -> Self {
        Ratio::from_integer(n)
    }
    fn abs_f64(&self) -> f64 {
        (*self.numer() as f64 / *self.denom() as f64).abs()
    }
}

impl Scalar for C64 {
    fn from_i64(n: i64) -> Self {
        Complex::new(n as f64, 0.0)
    }
    fn abs_f64(&self) -> f64 {
        self.norm()
    }
}

/// Scalars with an exponential, for conjugation by group exponentials.
pub trait ExpScalar: Scalar {
    fn exp_s(&self) -> Self;
}

impl ExpScalar for C64 {
    fn exp_s(&self) -> Self {
        self.exp()
    }
}

impl ExpScalar for Jet2 {
    fn exp_s(&self) -> Self {
        self.exp()
    }
}

/// Entry type whose conjugation is meaningful for Hermitian transposes.
pub trait Conjugate {
    fn conj_val(&self) -> Self;
}

impl Conjugate for i64 {
    fn conj_val(&self) -> Self {
        *self
    }
}

impl Conjugate for Rat {
    fn conj_val(&self) -> Self {
        *self
    }
}

impl Conjugate for C64 {
    fn conj_val(&self) -> Self {
        self.conj()
    }
}

/// Value together with its z-derivative, zbar-derivative, and mixed second
/// derivative at one point of the plane.
///
/// Arithmetic propagates all four components, so any expression built from
/// [`Jet2::var`] by ring operations, `exp`, `ln`, `sqrt`, `recip`, and `conj`
/// carries exact derivatives of the expression.  Only the mixed second
/// derivative is tracked; pure second derivatives are never needed by the
/// residual formulas in this crate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet2 {
    /// Value at the point.
    pub v: C64,
    /// Derivative with respect to z.
    pub dz: C64,
    /// Derivative with respect to zbar.
    pub dzb: C64,
    /// Mixed derivative, d^2/dz dzbar.
    pub dzzb: C64,
}

impl Jet2 {
    /// Constant jet: all derivatives vanish.
    pub fn constant(v: C64) -> Self {
        Jet2 {
            v,
            dz: C64::zero(),
            dzb: C64::zero(),
            dzzb: C64::zero(),
        }
    }

    /// Constant jet from a real number.
    pub fn real(x: f64) -> Self {
        Self::constant(c64(x, 0.0))
    }

    /// The coordinate jet at the point z: value z, unit z-derivative.
    pub fn var(z: C64) -> Self {
        Jet2 {
            v: z,
            dz: C64::one(),
            dzb: C64::zero(),
            dzzb: C64::zero(),
        }
    }

    /// The conjugate coordinate jet at the point z: value zbar, unit
    /// zbar-derivative.
    pub fn var_bar(z: C64) -> Self {
        Jet2 {
            v: z.conj(),
            dz: C64::zero(),
            dzb: C64::one(),
            dzzb: C64::zero(),
        }
    }

    /// Multiplicative inverse.  Panics on a zero value component.
    pub fn recip(self) -> Self {
        let w = C64::one() / self.v;
        let w2 = w * w;
        Jet2 {
            v: w,
            dz: -self.dz * w2,
            dzb: -self.dzb * w2,
            dzzb: -self.dzzb * w2 + (self.dz * self.dzb) * (2.0 * w2 * w),
        }
    }

    /// Exponential.
    pub fn exp(self) -> Self {
        let e = self.v.exp();
        Jet2 {
            v: e,
            dz: e * self.dz,
            dzb: e * self.dzb,
            dzzb: e * (self.dzzb + self.dz * self.dzb),
        }
    }

    /// Principal branch logarithm.
    pub fn ln(self) -> Self {
        let w = C64::one() / self.v;
        Jet2 {
            v: self.v.ln(),
            dz: self.dz * w,
            dzb: self.dzb * w,
            dzzb: self.dzzb * w - self.dz * self.dzb * w * w,
        }
    }

    /// Principal branch square root.
    pub fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        let half = 0.5 / s;
        Jet2 {
            v: s,
            dz: self.dz * half,
            dzb: self.dzb * half,
            dzzb: self.dzzb * half - self.dz * self.dzb * (0.25 / (s * s * s)),
        }
    }

    /// Complex conjugate of the function.  Swaps the roles of the two first
    /// derivatives since conjugation exchanges z and zbar dependence.
    pub fn conj(self) -> Self {
        Jet2 {
            v: self.v.conj(),
            dz: self.dzb.conj(),
            dzb: self.dz.conj(),
            dzzb: self.dzzb.conj(),
        }
    }

    /// Scale by a complex constant.
    pub fn scale(self, k: C64) -> Self {
        Jet2 {
            v: self.v * k,
            dz: self.dz * k,
            dzb: self.dzb * k,
            dzzb: self.dzzb * k,
        }
    }
}

impl Add for Jet2 {
    type Output = Jet2;
    fn add(self, o: Jet2) -> Jet2 {
        Jet2 {
            v: self.v + o.v,
            dz: self.dz + o.dz,
            dzb: self.dzb + o.dzb,
            dzzb: self.dzzb + o.dzzb,
        }
    }
}

impl Sub for Jet2 {
    type Output = Jet2;
    fn sub(self, o: Jet2) -> Jet2 {
        Jet2 {
            v: self.v - o.v,
            dz: self.dz - o.dz,
            dzb: self.dzb - o.dzb,
            dzzb: self.dzzb - o.dzzb,
        }
    }
}

impl Neg for Jet2 {
    type Output = Jet2;
    fn neg(self) -> Jet2 {
        Jet2 {
            v: -self.v,
            dz: -self.dz,
            dzb: -self.dzb,
            dzzb: -self.dzzb,
        }
    }
}

impl Mul for Jet2 {
    type Output = Jet2;
    fn mul(self, o: Jet2) -> Jet2 {
        Jet2 {
            v: self.v * o.v,
            dz: self.dz * o.v + self.v * o.dz,
            dzb: self.dzb * o.v + self.v * o.dzb,
            // Leibniz rule for the mixed derivative picks up both cross terms.
            dzzb: self.dzzb * o.v + self.dz * o.dzb + self.dzb * o.dz + self.v * o.dzzb,
        }
    }
}

impl Div for Jet2 {
    type Output = Jet2;
    fn div(self, o: Jet2) -> Jet2 {
        self * o.recip()
    }
}

impl Zero for Jet2 {
    fn zero() -> Self {
        Jet2::constant(C64::zero())
    }
    fn is_zero(&self) -> bool {
        self.v.is_zero() && self.dz.is_zero() && self.dzb.is_zero() && self.dzzb.is_zero()
    }
}

impl One for Jet2 {
    fn one() -> Self {
        Jet2::constant(C64::one())
    }
}

impl Scalar for Jet2 {
    fn from_i64(n: i64) -> Self {
        Jet2::real(n as f64)
    }
    fn abs_f64(&self) -> f64 {
        self.v.norm()
    }
}

impl Conjugate for Jet2 {
    fn conj_val(&self) -> Self {
        (*self).conj()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn close(a: C64, b: C64, tol: f64) {
        assert_abs_diff_eq!(a.re, b.re, epsilon = tol);
        assert_abs_diff_eq!(a.im, b.im, epsilon = tol);
    }

    // f(z, zbar) = exp(z zbar) has dz = zbar f, dzb = z f,
    // dzzb = (1 + z zbar) f.
    #[test]
    fn exp_of_product_matches_hand_derivatives() {
        let z = c64(0.3, -0.7);
        let f = (Jet2::var(z) * Jet2::var_bar(z)).exp();
        let e = (z * z.conj()).exp();
        close(f.v, e, 1e-14);
        close(f.dz, z.conj() * e, 1e-14);
        close(f.dzb, z * e, 1e-14);
        close(f.dzzb, (C64::one() + z * z.conj()) * e, 1e-14);
    }

    // ln(1 + z zbar) has dzzb = 1/(1 + z zbar)^2.
    #[test]
    fn log_mixed_derivative() {
        let z = c64(0.4, 0.2);
        let w = Jet2::one() + Jet2::var(z) * Jet2::var_bar(z);
        let l = w.ln();
        let denom = (C64::one() + z * z.conj()) * (C64::one() + z * z.conj());
        close(l.dzzb, C64::one() / denom, 1e-14);
    }

    #[test]
    fn recip_inverts() {
        let z = c64(1.1, 0.6);
        let a = Jet2::var(z) * Jet2::var(z) + Jet2::var_bar(z);
        let p = a * a.recip();
        close(p.v, C64::one(), 1e-13);
        close(p.dz, C64::zero(), 1e-13);
        close(p.dzb, C64::zero(), 1e-13);
        close(p.dzzb, C64::zero(), 1e-13);
    }

    #[test]
    fn sqrt_squares_back() {
        let z = c64(0.9, 0.1);
        let a = Jet2::one() + Jet2::var(z) * Jet2::var_bar(z);
        let s = a.sqrt();
        let sq = s * s;
        close(sq.v, a.v, 1e-13);
        close(sq.dz, a.dz, 1e-13);
        close(sq.dzb, a.dzb, 1e-13);
        close(sq.dzzb, a.dzzb, 1e-13);
    }

    // conj(f) must represent the function fbar, whose z-derivative is the
    // conjugate of the zbar-derivative of f.
    #[test]
    fn conj_swaps_derivative_slots() {
        let z = c64(0.25, 0.75);
        let f = Jet2::var(z) * Jet2::var(z); // z^2, dz = 2z, dzb = 0
        let g = f.conj(); // zbar^2, dz = 0, dzb = 2 zbar
        close(g.dz, C64::zero(), 1e-15);
        close(g.dzb, (z * 2.0).conj(), 1e-15);
    }

    #[test]
    fn ln_exp_round_trip() {
        let z = c64(0.2, 0.3);
        let a = Jet2::var(z) * Jet2::var_bar(z) + Jet2::real(0.5);
        let r = a.exp().ln();
        close(r.v, a.v, 1e-13);
        close(r.dz, a.dz, 1e-13);
        close(r.dzb, a.dzb, 1e-13);
        close(r.dzzb, a.dzzb, 1e-13);
    }
}

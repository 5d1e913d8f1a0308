//! Bivariate polynomials in z and zbar with exact Wirtinger calculus.
//!
//! Holomorphic input data throughout the crate is polynomial, so derivatives
//! of generated solutions never touch a finite-difference stencil.  The two
//! variables are treated as independent; conjugation swaps them.

use crate::error::{Error, Result};
use crate::scalar::{c64, C64, Jet2};
use num_traits::{One, Zero};
use std::collections::BTreeMap;
use std::fmt;

/// Polynomial in z and zbar, keyed by (z-degree, zbar-degree).
///
/// Zero coefficients are never stored; the zero polynomial has an empty map.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PolyField {
    coeffs: BTreeMap<(u32, u32), C64>,
}

impl PolyField {
    pub fn zero() -> Self {
        PolyField::default()
    }

    pub fn constant(c: C64) -> Self {
        let mut p = PolyField::default();
        p.set(0, 0, c);
        p
    }

    /// The monomial z.
    pub fn var_z() -> Self {
        let mut p = PolyField::default();
        p.set(1, 0, C64::one());
        p
    }

    /// The monomial zbar.
    pub fn var_zbar() -> Self {
        let mut p = PolyField::default();
        p.set(0, 1, C64::one());
        p
    }

    /// Holomorphic polynomial from ascending-degree coefficients.
    pub fn from_z_coeffs(coeffs: &[C64]) -> Self {
        let mut p = PolyField::default();
        for (k, &c) in coeffs.iter().enumerate() {
            p.set(k as u32, 0, c);
        }
        p
    }

    pub fn set(&mut self, p: u32, q: u32, c: C64) {
        if c.is_zero() {
            self.coeffs.remove(&(p, q));
        } else {
            self.coeffs.insert((p, q), c);
        }
    }

    pub fn coeff(&self, p: u32, q: u32) -> C64 {
        self.coeffs.get(&(p, q)).copied().unwrap_or_else(C64::zero)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn is_constant(&self) -> bool {
        self.coeffs.keys().all(|&(p, q)| p == 0 && q == 0)
    }

    /// True when no zbar-dependence is present.
    pub fn is_holomorphic(&self) -> bool {
        self.coeffs.keys().all(|&(_, q)| q == 0)
    }

    /// True when no z-dependence is present.
    pub fn is_antiholomorphic(&self) -> bool {
        self.coeffs.keys().all(|&(p, _)| p == 0)
    }

    /// Exact Wirtinger derivative in z: p c_{p,q} moves to slot (p-1, q).
    pub fn dz(&self) -> Self {
        let mut out = PolyField::default();
        for (&(p, q), &c) in &self.coeffs {
            if p > 0 {
                out.set(p - 1, q, c * (p as f64));
            }
        }
        out
    }

    /// Exact Wirtinger derivative in zbar.
    pub fn dzbar(&self) -> Self {
        let mut out = PolyField::default();
        for (&(p, q), &c) in &self.coeffs {
            if q > 0 {
                out.set(p, q - 1, c * (q as f64));
            }
        }
        out
    }

    /// Complex conjugate field: coefficients conjugate, degrees swap.
    pub fn conj(&self) -> Self {
        let mut out = PolyField::default();
        for (&(p, q), &c) in &self.coeffs {
            out.set(q, p, c.conj());
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (&(p, q), &c) in &other.coeffs {
            let cur = out.coeff(p, q);
            out.set(p, q, cur + c);
        }
        out
    }

    pub fn scale(&self, k: C64) -> Self {
        let mut out = PolyField::default();
        for (&(p, q), &c) in &self.coeffs {
            out.set(p, q, c * k);
        }
        out
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = PolyField::default();
        for (&(p1, q1), &c1) in &self.coeffs {
            for (&(p2, q2), &c2) in &other.coeffs {
                let cur = out.coeff(p1 + p2, q1 + q2);
                out.set(p1 + p2, q1 + q2, cur + c1 * c2);
            }
        }
        out
    }

    /// Evaluate at a point of the plane, with zbar = conj(z).
    pub fn eval(&self, z: C64) -> C64 {
        let zb = z.conj();
        let mut acc = C64::zero();
        for (&(p, q), &c) in &self.coeffs {
            acc += c * z.powu(p) * zb.powu(q);
        }
        acc
    }

    /// Evaluate together with first and mixed second derivatives.
    pub fn eval_jet(&self, z: C64) -> Jet2 {
        let zj = Jet2::var(z);
        let zbj = Jet2::var_bar(z);
        let mut acc = Jet2::zero();
        for (&(p, q), &c) in &self.coeffs {
            let mut term = Jet2::constant(c);
            for _ in 0..p {
                term = term * zj;
            }
            for _ in 0..q {
                term = term * zbj;
            }
            acc = acc + term;
        }
        acc
    }

    pub fn max_total_degree(&self) -> u32 {
        self.coeffs.keys().map(|&(p, q)| p + q).max().unwrap_or(0)
    }

    /// Largest coefficient magnitude, a crude scale for tolerances.
    pub fn coeff_scale(&self) -> f64 {
        self.coeffs.values().map(|c| c.norm()).fold(0.0, f64::max)
    }
}

impl fmt::Display for PolyField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.coeffs.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (&(p, q), &c) in &self.coeffs {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "({})", format_c64(c))?;
            if p > 0 {
                write!(f, "*z^{p}")?;
            }
            if q > 0 {
                write!(f, "*w^{q}")?;
            }
        }
        Ok(())
    }
}

/// Render a complex number in the same `a+bi` syntax the parser accepts.
pub fn format_c64(c: C64) -> String {
    if c.im == 0.0 {
        format!("{}", c.re)
    } else if c.re == 0.0 {
        format!("{}i", c.im)
    } else if c.im < 0.0 {
        format!("{}{}i", c.re, c.im)
    } else {
        format!("{}+{}i", c.re, c.im)
    }
}

/// Parse a complex literal: `1.5`, `-2`, `i`, `-i`, `2i`, `1+2i`, `1-0.5i`.
pub fn parse_c64(s: &str) -> Result<C64> {
    let t = s.trim();
    if t.is_empty() {
        return Err(Error::Parse("empty complex literal".into()));
    }
    if let Some(body) = t.strip_suffix('i').or_else(|| t.strip_suffix('I')) {
        // Find the split between real and imaginary parts: the last +/- that
        // is not a leading sign and not part of an exponent.
        let bytes = body.as_bytes();
        let mut split = None;
        for k in (1..bytes.len()).rev() {
            let ch = bytes[k] as char;
            if (ch == '+' || ch == '-') && !matches!(bytes[k - 1] as char, 'e' | 'E') {
                split = Some(k);
                break;
            }
        }
        match split {
            Some(k) => {
                let re: f64 = body[..k]
                    .trim()
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad real part in '{t}'")))?;
                let imtxt = body[k..].trim();
                let im: f64 = match imtxt {
                    "+" => 1.0,
                    "-" => -1.0,
                    _ => imtxt
                        .parse()
                        .map_err(|_| Error::Parse(format!("bad imaginary part in '{t}'")))?,
                };
                Ok(c64(re, im))
            }
            None => {
                let imtxt = body.trim();
                let im: f64 = match imtxt {
                    "" | "+" => 1.0,
                    "-" => -1.0,
                    _ => imtxt
                        .parse()
                        .map_err(|_| Error::Parse(format!("bad imaginary literal '{t}'")))?,
                };
                Ok(c64(0.0, im))
            }
        }
    } else {
        let re: f64 = t
            .parse()
            .map_err(|_| Error::Parse(format!("bad real literal '{t}'")))?;
        Ok(c64(re, 0.0))
    }
}

/// Parse a comma-separated ascending-degree coefficient list into a
/// holomorphic polynomial: `0,1` is z, `1,0,-2i` is 1 - 2i z^2.
pub fn parse_holomorphic(s: &str) -> Result<PolyField> {
    let coeffs: Result<Vec<C64>> = s.split(',').map(parse_c64).collect();
    Ok(PolyField::from_z_coeffs(&coeffs?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dz_power_rule() {
        // d/dz of z^2 zbar = 2 z zbar.
        let p = PolyField::var_z().mul(&PolyField::var_z()).mul(&PolyField::var_zbar());
        let d = p.dz();
        let mut expect = PolyField::default();
        expect.set(1, 1, c64(2.0, 0.0));
        assert_eq!(d, expect);
    }

    #[test]
    fn dzbar_of_holomorphic_vanishes() {
        let p = PolyField::var_z().mul(&PolyField::var_z());
        assert!(p.dzbar().is_zero());
        assert!(p.is_holomorphic());
    }

    #[test]
    fn wirtinger_derivatives_commute() {
        let mut p = PolyField::default();
        p.set(3, 2, c64(1.5, -0.5));
        p.set(1, 4, c64(0.0, 2.0));
        p.set(2, 0, c64(-1.0, 0.0));
        assert_eq!(p.dz().dzbar(), p.dzbar().dz());
    }

    #[test]
    fn eval_jet_matches_formal_derivatives() {
        let mut p = PolyField::default();
        p.set(2, 1, c64(1.0, 1.0));
        p.set(0, 2, c64(-0.5, 0.0));
        let z = c64(0.3, 0.8);
        let j = p.eval_jet(z);
        assert!((j.v - p.eval(z)).norm() < 1e-14);
        assert!((j.dz - p.dz().eval(z)).norm() < 1e-14);
        assert!((j.dzb - p.dzbar().eval(z)).norm() < 1e-14);
        assert!((j.dzzb - p.dz().dzbar().eval(z)).norm() < 1e-14);
    }

    #[test]
    fn conj_evaluates_to_conjugate() {
        let mut p = PolyField::default();
        p.set(2, 0, c64(1.0, -2.0));
        p.set(1, 1, c64(0.5, 0.5));
        let z = c64(-0.7, 0.4);
        assert!((p.conj().eval(z) - p.eval(z).conj()).norm() < 1e-14);
    }

    #[test]
    fn parse_complex_literals() {
        assert_eq!(parse_c64("1.5").unwrap(), c64(1.5, 0.0));
        assert_eq!(parse_c64("-2").unwrap(), c64(-2.0, 0.0));
        assert_eq!(parse_c64("i").unwrap(), c64(0.0, 1.0));
        assert_eq!(parse_c64("-i").unwrap(), c64(0.0, -1.0));
        assert_eq!(parse_c64("2i").unwrap(), c64(0.0, 2.0));
        assert_eq!(parse_c64("1+2i").unwrap(), c64(1.0, 2.0));
        assert_eq!(parse_c64("1-0.5i").unwrap(), c64(1.0, -0.5));
        assert_eq!(parse_c64("-1e-3+2e2i").unwrap(), c64(-1e-3, 2e2));
        assert!(parse_c64("bogus").is_err());
    }

    #[test]
    fn parse_coefficient_list() {
        let p = parse_holomorphic("0,1").unwrap();
        assert_eq!(p, PolyField::var_z());
        let q = parse_holomorphic("1,0,-2i").unwrap();
        assert_eq!(q.coeff(0, 0), c64(1.0, 0.0));
        assert_eq!(q.coeff(2, 0), c64(0.0, -2.0));
    }
}

//! Centrally extended loop algebra with derivation, concretely for sl(2).
//!
//! Elements are finite Laurent polynomials with traceless matrix
//! coefficients, plus a central coordinate and a derivation coordinate.
//! The bracket is the pointwise matrix bracket, the derivation acting by
//! Laurent degree, and the cocycle feeding the central line:
//!
//!   cocycle(x, y) = sum_k k tr(x_k y_{-k})
//!
//! The bracket of two elements never produces a derivation component.

use crate::error::{Error, Result};
use crate::matrix::{commutator, Matrix};
use crate::scalar::{ExpScalar, Scalar};
use rand::Rng;
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq)]
pub struct AffineElement<T> {
    pub n: usize,
    /// Laurent degree to traceless coefficient matrix; zero matrices are
    /// dropped on normalization.
    pub laurent: BTreeMap<i32, Matrix<T>>,
    pub c: T,
    pub d: T,
}

impl<T: Scalar> AffineElement<T> {
    pub fn zero(n: usize) -> Self {
        AffineElement {
            n,
            laurent: BTreeMap::new(),
            c: T::zero(),
            d: T::zero(),
        }
    }

    pub fn from_term(degree: i32, m: Matrix<T>) -> Self {
        let n = m.rows();
        let mut e = AffineElement::zero(n);
        e.add_term(degree, m);
        e
    }

    pub fn with_c(mut self, c: T) -> Self {
        self.c = c;
        self
    }

    pub fn with_d(mut self, d: T) -> Self {
        self.d = d;
        self
    }

    pub fn add_term(&mut self, degree: i32, m: Matrix<T>) {
        assert_eq!(m.rows(), self.n);
        assert_eq!(m.cols(), self.n);
        let entry = self
            .laurent
            .entry(degree)
            .or_insert_with(|| Matrix::zeros(self.n, self.n));
        *entry = entry.clone() + m;
        if self.laurent[&degree].is_zero_matrix() {
            self.laurent.remove(&degree);
        }
    }

    pub fn coefficient(&self, degree: i32) -> Matrix<T> {
        self.laurent
            .get(&degree)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(self.n, self.n))
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n);
        let mut out = self.clone();
        for (&k, m) in &other.laurent {
            out.add_term(k, m.clone());
        }
        out.c = out.c + other.c.clone();
        out.d = out.d + other.d.clone();
        out
    }

    pub fn neg(&self) -> Self {
        self.scale(T::zero() - T::one())
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.neg())
    }

    pub fn scale(&self, k: T) -> Self {
        let mut out = AffineElement::zero(self.n);
        for (&deg, m) in &self.laurent {
            let sm = m.scale(k.clone());
            if !sm.is_zero_matrix() {
                out.laurent.insert(deg, sm);
            }
        }
        out.c = self.c.clone() * k.clone();
        out.d = self.d.clone() * k;
        out
    }

    pub fn max_abs(&self) -> f64 {
        let mut m = self.c.abs_f64().max(self.d.abs_f64());
        for mat in self.laurent.values() {
            m = m.max(mat.max_abs());
        }
        m
    }

    /// Split into (positive, Cartan, negative) triangular parts:
    /// degrees > 0 plus the strict upper triangle of degree 0; the diagonal
    /// of degree 0 together with c and d; degrees < 0 plus the strict lower
    /// triangle of degree 0.  The three parts sum back to the element.
    pub fn triangular_decompose(&self) -> (Self, Self, Self) {
        let mut plus = AffineElement::zero(self.n);
        let mut cartan = AffineElement::zero(self.n);
        let mut minus = AffineElement::zero(self.n);
        for (&deg, m) in &self.laurent {
            match deg.cmp(&0) {
                std::cmp::Ordering::Greater => plus.add_term(deg, m.clone()),
                std::cmp::Ordering::Less => minus.add_term(deg, m.clone()),
                std::cmp::Ordering::Equal => {
                    let mut up = Matrix::zeros(self.n, self.n);
                    let mut di = Matrix::zeros(self.n, self.n);
                    let mut lo = Matrix::zeros(self.n, self.n);
                    for i in 0..self.n {
                        for j in 0..self.n {
                            let v = m[(i, j)].clone();
                            match i.cmp(&j) {
                                std::cmp::Ordering::Less => up[(i, j)] = v,
                                std::cmp::Ordering::Equal => di[(i, j)] = v,
                                std::cmp::Ordering::Greater => lo[(i, j)] = v,
                            }
                        }
                    }
                    plus.add_term(0, up);
                    cartan.add_term(0, di);
                    minus.add_term(0, lo);
                }
            }
        }
        cartan.c = self.c.clone();
        cartan.d = self.d.clone();
        (plus, cartan, minus)
    }
}

/// The degree-weighted trace pairing feeding the central line.
pub fn cocycle<T: Scalar>(x: &AffineElement<T>, y: &AffineElement<T>) -> T {
    let mut acc = T::zero();
    for (&k, xk) in &x.laurent {
        if let Some(ymk) = y.laurent.get(&(-k)) {
            acc = acc + T::from_i64(k as i64) * xk.matmul(ymk).trace();
        }
    }
    acc
}

/// Bracket on the extended algebra.  The result carries no derivation
/// component; the central component is the cocycle of the loop parts.
pub fn loop_bracket<T: Scalar>(x: &AffineElement<T>, y: &AffineElement<T>) -> AffineElement<T> {
    assert_eq!(x.n, y.n);
    let mut out = AffineElement::zero(x.n);
    for (&k, xk) in &x.laurent {
        for (&l, yl) in &y.laurent {
            let br = commutator(xk, yl);
            if !br.is_zero_matrix() {
                out.add_term(k + l, br);
            }
        }
    }
    // [d, m lambda^k] = k m lambda^k.
    if !x.d.is_zero() {
        for (&l, yl) in &y.laurent {
            if l != 0 {
                out.add_term(l, yl.scale(x.d.clone() * T::from_i64(l as i64)));
            }
        }
    }
    if !y.d.is_zero() {
        for (&k, xk) in &x.laurent {
            if k != 0 {
                out.add_term(k, xk.scale(T::zero() - y.d.clone() * T::from_i64(k as i64)));
            }
        }
    }
    out.c = cocycle(x, y);
    out
}

/// Conjugation of `x` by exp(Phi) for a Cartan-valued exponent
/// Phi = (phi/2) H + eta d + (xi/2) c, given through its affine element.
///
/// Degree-k components scale by exp(k eta); raising and lowering parts of
/// each coefficient additionally pick up exp(+phi) and exp(-phi).  The
/// central and derivation coordinates of `x` are unchanged (the central
/// coordinate of Phi drops out entirely).
pub fn adjoint_exp_conjugate<T: ExpScalar>(
    phi_elem: &AffineElement<T>,
    x: &AffineElement<T>,
) -> Result<AffineElement<T>> {
    if phi_elem.n != 2 || x.n != 2 {
        return Err(Error::Shape("exponential conjugation is implemented for 2x2 loops".into()));
    }
    for (&deg, m) in &phi_elem.laurent {
        if deg != 0 {
            return Err(Error::Domain(
                "conjugation exponent must be concentrated at degree 0".into(),
            ));
        }
        if !m[(0, 1)].is_zero() || !m[(1, 0)].is_zero() {
            return Err(Error::Domain("conjugation exponent must be diagonal".into()));
        }
    }
    let half_phi = phi_elem.coefficient(0)[(0, 0)].clone();
    let phi = half_phi.clone() + half_phi;
    let eta = phi_elem.d.clone();
    let ep = phi.exp_s();
    let em = (T::zero() - phi).exp_s();
    let mut out = AffineElement::zero(2);
    for (&deg, m) in &x.laurent {
        let deg_factor = if deg == 0 {
            T::one()
        } else {
            let mut e = eta.clone();
            e = e * T::from_i64(deg as i64);
            e.exp_s()
        };
        let mut scaled = Matrix::zeros(2, 2);
        scaled[(0, 0)] = m[(0, 0)].clone() * deg_factor.clone();
        scaled[(1, 1)] = m[(1, 1)].clone() * deg_factor.clone();
        scaled[(0, 1)] = m[(0, 1)].clone() * ep.clone() * deg_factor.clone();
        scaled[(1, 0)] = m[(1, 0)].clone() * em.clone() * deg_factor;
        out.add_term(deg, scaled);
    }
    out.c = x.c.clone();
    out.d = x.d.clone();
    Ok(out)
}

/// Seeded random traceless element with degrees in [lo, hi], for property
/// tests.  Entries are uniform in the complex unit square.
pub fn random_element(rng: &mut impl Rng, lo: i32, hi: i32) -> AffineElement<crate::scalar::C64> {
    use crate::scalar::c64;
    let mut e = AffineElement::zero(2);
    for deg in lo..=hi {
        let a = c64(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let b = c64(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let c = c64(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let mut m = Matrix::zeros(2, 2);
        m[(0, 0)] = a;
        m[(0, 1)] = b;
        m[(1, 0)] = c;
        m[(1, 1)] = -a;
        e.add_term(deg, m);
    }
    e.c = c64(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    e.d = c64(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    e
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::ChevalleyBasis;
    use crate::scalar::{c64, C64};
    use num_traits::Zero;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sl2_mats() -> (Matrix<C64>, Matrix<C64>, Matrix<C64>) {
        let b = ChevalleyBasis::sl(2).unwrap();
        let alpha = crate::lie::Root::simple(1, 0);
        (
            b.h_as::<C64>(0),
            b.e_plus_as::<C64>(&alpha),
            b.e_minus_as::<C64>(&alpha),
        )
    }

    #[test]
    fn central_term_of_opposite_cartan_loops() {
        // [H lambda, H lambda^-1] = 2c: matrix brackets cancel, the cocycle
        // contributes 1 * tr(H H) = 2.
        let (h, _, _) = sl2_mats();
        let x = AffineElement::from_term(1, h.clone());
        let y = AffineElement::from_term(-1, h);
        let br = loop_bracket(&x, &y);
        assert!(br.laurent.is_empty());
        assert_eq!(br.c, c64(2.0, 0.0));
        assert_eq!(br.d, c64(0.0, 0.0));
    }

    #[test]
    fn cocycle_of_raising_lowering_pair() {
        let (_, ep, em) = sl2_mats();
        let x = AffineElement::from_term(2, ep);
        let y = AffineElement::from_term(-2, em);
        assert_eq!(cocycle(&x, &y), c64(2.0, 0.0));
    }

    #[test]
    fn derivation_grades_by_degree() {
        let (_, ep, _) = sl2_mats();
        let d = AffineElement::<C64>::zero(2).with_d(c64(1.0, 0.0));
        let x = AffineElement::from_term(3, ep.clone());
        let br = loop_bracket(&d, &x);
        assert_eq!(br.coefficient(3), ep.scale(c64(3.0, 0.0)));
        assert!(br.c.is_zero());
    }

    #[test]
    fn central_element_commutes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let c = AffineElement::<C64>::zero(2).with_c(c64(1.0, 0.0));
        let x = random_element(&mut rng, -3, 3);
        let br = loop_bracket(&c, &x);
        assert!(br.max_abs() < 1e-15);
    }

    #[test]
    fn bracket_has_no_derivation_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_element(&mut rng, -2, 2);
        let y = random_element(&mut rng, -2, 2);
        assert!(loop_bracket(&x, &y).d.is_zero());
    }

    #[test]
    fn antisymmetry_and_jacobi_on_seeded_elements() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let x = random_element(&mut rng, -3, 3);
            let y = random_element(&mut rng, -3, 3);
            let z = random_element(&mut rng, -3, 3);
            let anti = loop_bracket(&x, &y).add(&loop_bracket(&y, &x));
            assert!(anti.max_abs() < 1e-12, "antisymmetry defect {}", anti.max_abs());
            let j = loop_bracket(&loop_bracket(&x, &y), &z)
                .add(&loop_bracket(&loop_bracket(&y, &z), &x))
                .add(&loop_bracket(&loop_bracket(&z, &x), &y));
            assert!(j.max_abs() < 1e-12, "jacobi defect {}", j.max_abs());
        }
    }

    #[test]
    fn triangular_parts_sum_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_element(&mut rng, -2, 2);
        let (p, z, m) = x.triangular_decompose();
        assert!(p.add(&z).add(&m).sub(&x).max_abs() < 1e-15);
        for (_, mat) in &p.laurent {
            let _ = mat;
        }
        // The Cartan part holds c and d; the others carry none.
        assert!(p.c.is_zero() && p.d.is_zero());
        assert!(m.c.is_zero() && m.d.is_zero());
        assert_eq!(z.c, x.c);
        assert_eq!(z.d, x.d);
    }

    #[test]
    fn conjugation_matches_matrix_conjugation_at_degree_zero() {
        // With eta = 0 the rule must agree with conjugating each coefficient
        // by the diagonal matrix exp(diag(phi/2, -phi/2)).
        let (h, ep, em) = sl2_mats();
        let phi = c64(0.4, -0.3);
        let mut exponent = AffineElement::from_term(0, h.scale(phi * c64(0.5, 0.0)));
        exponent.c = c64(0.7, 0.0); // must be inert
        let x = AffineElement::from_term(0, ep.clone()).add(&AffineElement::from_term(0, em.clone()));
        let out = adjoint_exp_conjugate(&exponent, &x).unwrap();
        let g = Matrix::from_fn(2, 2, |i, j| {
            if i != j {
                c64(0.0, 0.0)
            } else if i == 0 {
                (phi * c64(0.5, 0.0)).exp()
            } else {
                (-phi * c64(0.5, 0.0)).exp()
            }
        });
        let direct = g.matmul(&x.coefficient(0)).matmul(&g.inverse().unwrap());
        assert!((out.coefficient(0) - direct).max_abs() < 1e-14);
    }

    #[test]
    fn conjugation_scales_degrees_by_eta() {
        let (_, ep, em) = sl2_mats();
        let phi = c64(0.2, 0.1);
        let eta = c64(-0.3, 0.25);
        let (h, _, _) = sl2_mats();
        let exponent = AffineElement::from_term(0, h.scale(phi * c64(0.5, 0.0))).with_d(eta);
        let x = AffineElement::from_term(1, em.clone()).add(&AffineElement::from_term(-2, ep.clone()));
        let out = adjoint_exp_conjugate(&exponent, &x).unwrap();
        let want_p1 = em.scale((eta - phi).exp());
        let want_m2 = ep.scale((phi - eta * c64(2.0, 0.0)).exp());
        assert!((out.coefficient(1) - want_p1).max_abs() < 1e-14);
        assert!((out.coefficient(-2) - want_m2).max_abs() < 1e-14);
    }

    #[test]
    fn conjugation_rejects_offdiagonal_exponent() {
        let (_, ep, _) = sl2_mats();
        let exponent = AffineElement::from_term(0, ep.clone());
        let x = AffineElement::from_term(0, ep);
        assert!(adjoint_exp_conjugate(&exponent, &x).is_err());
    }
}

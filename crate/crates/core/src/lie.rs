//! Chevalley bases for sl(n) in the defining representation.
//!
//! All generator matrices are integer, and every structural check in this
//! module is exact: no tolerance enters until coordinates live in a floating
//! type.  Positive roots are labelled by their simple-root support, an
//! interval [a, b]; the raising generator is the matrix unit e_{a, b+1}.

use crate::error::{Error, Result};
use crate::matrix::{commutator, Matrix};
use crate::scalar::{Rat, Scalar};

use std::collections::BTreeMap;
use std::fmt;

pub type IntMatrix = Matrix<i64>;
pub type RatMatrix = Matrix<Rat>;

/// A positive root of A_{n-1}, stored as simple-root multiplicities.
/// For this series the multiplicity vector is a contiguous run of ones.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Root {
    pub coeffs: Vec<i64>,
}

impl Root {
    pub fn simple(rank: usize, i: usize) -> Self {
        let mut coeffs = vec![0; rank];
        coeffs[i] = 1;
        Root { coeffs }
    }

    pub fn interval(rank: usize, a: usize, b: usize) -> Self {
        let mut coeffs = vec![0; rank];
        for c in coeffs.iter_mut().take(b + 1).skip(a) {
            *c = 1;
        }
        Root { coeffs }
    }

    pub fn height(&self) -> i64 {
        self.coeffs.iter().sum()
    }

    /// First and last simple index in the support.
    pub fn support(&self) -> (usize, usize) {
        let a = self.coeffs.iter().position(|&c| c != 0).expect("empty root");
        let b = self.coeffs.iter().rposition(|&c| c != 0).unwrap();
        (a, b)
    }

    pub fn is_simple(&self) -> bool {
        self.height() == 1
    }
}

impl fmt::Display for Root {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (a, b) = self.support();
        if a == b {
            write!(f, "a{a}")
        } else {
            write!(f, "a{a}..a{b}")
        }
    }
}

/// Integer Chevalley generators of sl(n) together with the Cartan matrix
/// read off from the commutation relations themselves.
#[derive(Debug, Clone)]
pub struct ChevalleyBasis {
    pub n: usize,
    pub rank: usize,
    pub h: Vec<IntMatrix>,
    pub e_plus: BTreeMap<Root, IntMatrix>,
    pub e_minus: BTreeMap<Root, IntMatrix>,
    /// Positive roots ordered by height, then by first support index.
    pub positive_roots: Vec<Root>,
    pub cartan: IntMatrix,
}

impl ChevalleyBasis {
    pub fn sl(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Domain(format!("sl(n) needs n >= 2, got {n}")));
        }
        let rank = n - 1;
        let mut h = Vec::with_capacity(rank);
        for i in 0..rank {
            let mut m = IntMatrix::zeros(n, n);
            m[(i, i)] = 1;
            m[(i + 1, i + 1)] = -1;
            h.push(m);
        }
        let mut e_plus = BTreeMap::new();
        let mut e_minus = BTreeMap::new();
        let mut positive_roots = Vec::new();
        for height in 1..=rank {
            for a in 0..=(rank - height) {
                let b = a + height - 1;
                let root = Root::interval(rank, a, b);
                e_plus.insert(root.clone(), IntMatrix::elementary(n, a, b + 1));
                e_minus.insert(root.clone(), IntMatrix::elementary(n, b + 1, a));
                positive_roots.push(root);
            }
        }
        let mut basis = ChevalleyBasis {
            n,
            rank,
            h,
            e_plus,
            e_minus,
            positive_roots,
            cartan: IntMatrix::zeros(rank, rank),
        };
        let mut cartan = IntMatrix::zeros(rank, rank);
        for j in 0..rank {
            let alpha = Root::simple(rank, j);
            for i in 0..rank {
                // [H_i, E_j^+] = k_{ji} E_j^+ fixes the row for root j.
                cartan[(j, i)] = basis.pairing(i, &alpha)?;
            }
        }
        basis.cartan = cartan;
        Ok(basis)
    }

    /// Eigenvalue of ad H_i on the raising generator of `alpha`, extracted
    /// from the commutator itself.  Exact.
    pub fn pairing(&self, i: usize, alpha: &Root) -> Result<i64> {
        let e = self
            .e_plus
            .get(alpha)
            .ok_or_else(|| Error::Domain(format!("unknown root {alpha}")))?;
        let br = commutator(&self.h[i], e);
        let (a, b) = alpha.support();
        let coeff = br[(a, b + 1)];
        let check = e.scale(coeff);
        if br != check {
            return Err(Error::Inconsistent(format!(
                "[H_{i}, E_{alpha}] is not proportional to E_{alpha}"
            )));
        }
        Ok(coeff)
    }

    /// Inverse Cartan matrix in exact rational arithmetic.
    pub fn cartan_inverse(&self) -> Result<RatMatrix> {
        self.cartan.map(|&v| Rat::from_integer(v)).inverse()
    }

    /// All generators with printable labels, Cartan first.
    pub fn labelled_generators(&self) -> Vec<(String, IntMatrix)> {
        let mut out = Vec::new();
        for (i, m) in self.h.iter().enumerate() {
            out.push((format!("H{i}"), m.clone()));
        }
        for (r, m) in &self.e_plus {
            out.push((format!("E+[{r}]"), m.clone()));
        }
        for (r, m) in &self.e_minus {
            out.push((format!("E-[{r}]"), m.clone()));
        }
        out
    }

    /// Check every defining relation and the Jacobi identity over the whole
    /// basis, exactly.  Returns a list of violations, empty when clean.
    pub fn verify_relations(&self) -> Vec<String> {
        let mut bad = Vec::new();
        let rank = self.rank;
        for i in 0..rank {
            for j in 0..rank {
                if !commutator(&self.h[i], &self.h[j]).is_zero_matrix() {
                    bad.push(format!("[H{i}, H{j}] != 0"));
                }
            }
        }
        // [H_i, E_alpha^pm] = pm <alpha, i> E_alpha^pm with the eigenvalue
        // additive over the support.
        for alpha in &self.positive_roots {
            for i in 0..rank {
                let expect: i64 = alpha
                    .coeffs
                    .iter()
                    .enumerate()
                    .map(|(j, &c)| c * self.cartan[(j, i)])
                    .sum();
                let ep = &self.e_plus[alpha];
                let em = &self.e_minus[alpha];
                if commutator(&self.h[i], ep) != ep.scale(expect) {
                    bad.push(format!("[H{i}, E+[{alpha}]] != {expect} E+[{alpha}]"));
                }
                if commutator(&self.h[i], em) != em.scale(-expect) {
                    bad.push(format!("[H{i}, E-[{alpha}]] != {} E-[{alpha}]", -expect));
                }
            }
        }
        // [E_i^+, E_j^-] = delta_ij H_j on simple pairs.
        for i in 0..rank {
            let ai = Root::simple(rank, i);
            for j in 0..rank {
                let aj = Root::simple(rank, j);
                let br = commutator(&self.e_plus[&ai], &self.e_minus[&aj]);
                let expect = if i == j {
                    self.h[j].clone()
                } else {
                    IntMatrix::zeros(self.n, self.n)
                };
                if br != expect {
                    bad.push(format!("[E+{i}, E-{j}] wrong"));
                }
            }
        }
        // [E_alpha^+, E_alpha^-] = sum of H_i over the support.
        for alpha in &self.positive_roots {
            let (a, b) = alpha.support();
            let mut expect = IntMatrix::zeros(self.n, self.n);
            for hmat in self.h.iter().take(b + 1).skip(a) {
                expect = expect + hmat.clone();
            }
            if commutator(&self.e_plus[alpha], &self.e_minus[alpha]) != expect {
                bad.push(format!("[E+[{alpha}], E-[{alpha}]] != H_{alpha}"));
            }
        }
        bad.extend(self.verify_jacobi());
        bad
    }

    /// Jacobi identity over all ordered basis triples, exact.
    pub fn verify_jacobi(&self) -> Vec<String> {
        let gens = self.labelled_generators();
        let mut bad = Vec::new();
        for (nx, x) in &gens {
            for (ny, y) in &gens {
                let xy = commutator(x, y);
                for (nz, z) in &gens {
                    let t = commutator(&xy, z) + commutator(&commutator(y, z), x)
                        + commutator(&commutator(z, x), y);
                    if !t.is_zero_matrix() {
                        bad.push(format!("jacobi({nx}, {ny}, {nz}) != 0"));
                    }
                }
            }
        }
        bad
    }

    /// Generator matrices converted into another scalar type.
    pub fn h_as<T: Scalar>(&self, i: usize) -> Matrix<T> {
        self.h[i].map(|&v| T::from_i64(v))
    }

    pub fn e_plus_as<T: Scalar>(&self, alpha: &Root) -> Matrix<T> {
        self.e_plus[alpha].map(|&v| T::from_i64(v))
    }

    pub fn e_minus_as<T: Scalar>(&self, alpha: &Root) -> Matrix<T> {
        self.e_minus[alpha].map(|&v| T::from_i64(v))
    }

    /// Coordinates of a traceless matrix in this basis.
    ///
    /// The h-coordinates are the partial sums of the diagonal; off-diagonal
    /// entries read off the raising and lowering coefficients directly.
    pub fn decompose<T: Scalar>(&self, m: &Matrix<T>) -> Result<ChevalleyCoords<T>> {
        if !m.is_square() || m.rows() != self.n {
            return Err(Error::Shape(format!(
                "expected {0}x{0} matrix, got {1}x{2}",
                self.n,
                m.rows(),
                m.cols()
            )));
        }
        let scale = m.max_abs();
        let trace = m.trace();
        if trace.abs_f64() > 1e-9 * (1.0 + scale) {
            return Err(Error::Domain(format!(
                "matrix has nonzero trace (|tr| = {:.3e})",
                trace.abs_f64()
            )));
        }
        let mut h = Vec::with_capacity(self.rank);
        let mut acc = T::zero();
        for i in 0..self.rank {
            acc = acc + m[(i, i)].clone();
            h.push(acc.clone());
        }
        let mut e_plus = BTreeMap::new();
        let mut e_minus = BTreeMap::new();
        for alpha in &self.positive_roots {
            let (a, b) = alpha.support();
            let gp = m[(a, b + 1)].clone();
            if !gp.is_zero() {
                e_plus.insert(alpha.clone(), gp);
            }
            let gm = m[(b + 1, a)].clone();
            if !gm.is_zero() {
                e_minus.insert(alpha.clone(), gm);
            }
        }
        let coords = ChevalleyCoords { h, e_plus, e_minus };
        let defect = (self.reconstruct(&coords) - m.clone()).max_abs();
        if defect > 1e-9 * (1.0 + scale) {
            return Err(Error::Decomposition(format!(
                "matrix is not in the basis span (defect {defect:.3e})"
            )));
        }
        Ok(coords)
    }

    pub fn reconstruct<T: Scalar>(&self, coords: &ChevalleyCoords<T>) -> Matrix<T> {
        let mut out = Matrix::zeros(self.n, self.n);
        for (i, c) in coords.h.iter().enumerate() {
            out = out + self.h_as::<T>(i).scale(c.clone());
        }
        for (alpha, c) in &coords.e_plus {
            out = out + self.e_plus_as::<T>(alpha).scale(c.clone());
        }
        for (alpha, c) in &coords.e_minus {
            out = out + self.e_minus_as::<T>(alpha).scale(c.clone());
        }
        out
    }
}

/// Coordinates in a Chevalley basis.  Absent map entries are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ChevalleyCoords<T> {
    pub h: Vec<T>,
    pub e_plus: BTreeMap<Root, T>,
    pub e_minus: BTreeMap<Root, T>,
}

impl<T: Scalar> ChevalleyCoords<T> {
    pub fn max_h(&self) -> f64 {
        self.h.iter().map(|c| c.abs_f64()).fold(0.0, f64::max)
    }

    pub fn max_plus(&self) -> f64 {
        self.e_plus.values().map(|c| c.abs_f64()).fold(0.0, f64::max)
    }

    pub fn max_minus(&self) -> f64 {
        self.e_minus.values().map(|c| c.abs_f64()).fold(0.0, f64::max)
    }

    /// No raising or lowering content above `tol`.
    pub fn is_diagonal(&self, tol: f64) -> bool {
        self.max_plus() <= tol && self.max_minus() <= tol
    }

    /// No Cartan content above `tol`.
    pub fn is_off_diagonal(&self, tol: f64) -> bool {
        self.max_h() <= tol
    }

    pub fn plus_coeff(&self, alpha: &Root) -> T {
        self.e_plus.get(alpha).cloned().unwrap_or_else(T::zero)
    }

    pub fn minus_coeff(&self, alpha: &Root) -> T {
        self.e_minus.get(alpha).cloned().unwrap_or_else(T::zero)
    }
}

/// Outcome of the diagonal-commutator dichotomy check.
#[derive(Debug, Clone, serde::Serialize)]
pub struct Result5Verdict {
    pub commutator_diagonal: bool,
    pub components_off_diagonal: bool,
    pub commutator_zero: bool,
    /// The dichotomy itself: a diagonal commutator forces one of the two
    /// branches above.  Vacuously true when the commutator is not diagonal.
    pub consistent: bool,
    pub max_proof_residual: f64,
}

/// Dichotomy for a pair of traceless connection components: if their
/// commutator is diagonal, then either both components are purely
/// off-diagonal or the commutator vanishes outright.
///
/// The proof residuals are the two-by-two determinants pairing each Cartan
/// coordinate with each raising (r1) or lowering (r2) coordinate across the
/// two inputs; they all vanish when the commutator is diagonal.
pub fn check_result5(
    basis: &ChevalleyBasis,
    az: &Matrix<crate::scalar::C64>,
    azbar: &Matrix<crate::scalar::C64>,
    tol: f64,
) -> Result<Result5Verdict> {
    let ca = basis.decompose(az)?;
    let cb = basis.decompose(azbar)?;
    let comm = commutator(az, azbar);
    let cc = basis.decompose(&comm)?;
    let scale_in = 1.0 + az.max_abs().max(azbar.max_abs());
    let scale_comm = 1.0 + az.max_abs() * azbar.max_abs();
    let commutator_diagonal = cc.is_diagonal(tol * scale_comm);
    let components_off_diagonal =
        ca.is_off_diagonal(tol * scale_in) && cb.is_off_diagonal(tol * scale_in);
    let commutator_zero = comm.max_abs() <= tol * scale_comm;
    let consistent = !commutator_diagonal || components_off_diagonal || commutator_zero;
    let mut max_proof_residual: f64 = 0.0;
    if commutator_diagonal {
        for beta in 0..basis.rank {
            for alpha in &basis.positive_roots {
                let r1 = ca.h[beta] * cb.plus_coeff(alpha) - cb.h[beta] * ca.plus_coeff(alpha);
                let r2 = ca.h[beta] * cb.minus_coeff(alpha) - cb.h[beta] * ca.minus_coeff(alpha);
                max_proof_residual = max_proof_residual.max(r1.norm()).max(r2.norm());
            }
        }
    }
    Ok(Result5Verdict {
        commutator_diagonal,
        components_off_diagonal,
        commutator_zero,
        consistent,
        max_proof_residual,
    })
}

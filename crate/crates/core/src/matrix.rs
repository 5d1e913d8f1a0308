//! Dense matrices over an arbitrary ring.
//!
//! The matrices here are small (rank + 1 square for the algebras in this
//! crate), so a simple row-major `Vec` with by-value arithmetic is both fast
//! enough and easy to audit.  Exact instantiations (`i64`, `Rat`) share all
//! code paths with the numeric ones (`C64`, `Jet2`).

use crate::error::{Error, Result};
use crate::scalar::{Conjugate, Ring, Scalar};
use std::ops::{Add, Div, Index, IndexMut, Mul, Neg, Sub};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Ring> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    /// Elementary matrix with a single one in row i, column j.
    pub fn elementary(n: usize, i: usize, j: usize) -> Self {
        let mut m = Self::zeros(n, n);
        m[(i, j)] = T::one();
        m
    }

    pub fn from_rows(rows: Vec<Vec<T>>) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        Matrix {
            rows: r,
            cols: c,
            data: rows.into_iter().flatten().collect(),
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn map<U: Ring>(&self, mut f: impl FnMut(&T) -> U) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| f(x)).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)].clone())
    }

    pub fn trace(&self) -> T {
        assert!(self.is_square());
        let mut t = T::zero();
        for i in 0..self.rows {
            t = t + self[(i, i)].clone();
        }
        t
    }

    pub fn scale(&self, k: T) -> Self {
        self.map(|x| x.clone() * k.clone())
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "inner dimensions must agree");
        Matrix::from_fn(self.rows, other.cols, |i, j| {
            let mut acc = T::zero();
            for k in 0..self.cols {
                acc = acc + self[(i, k)].clone() * other[(k, j)].clone();
            }
            acc
        })
    }

    pub fn is_zero_matrix(&self) -> bool {
        self.data.iter().all(|x| x.is_zero())
    }
}

impl<T: Ring + Conjugate> Matrix<T> {
    /// Conjugate transpose.
    pub fn dagger(&self) -> Self {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj_val())
    }
}

impl<T: Scalar> Matrix<T> {
    /// Largest entry magnitude.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|x| x.abs_f64()).fold(0.0, f64::max)
    }

    /// Frobenius norm built from entry magnitudes.
    pub fn fro_norm(&self) -> f64 {
        self.data
            .iter()
            .map(|x| {
                let a = x.abs_f64();
                a * a
            })
            .sum::<f64>()
            .sqrt()
    }
}

impl<T: Scalar + Div<Output = T>> Matrix<T> {
    /// Determinant by elimination with partial pivoting.
    pub fn det(&self) -> T {
        assert!(self.is_square());
        let n = self.rows;
        let mut a = self.clone();
        let mut det = T::one();
        for col in 0..n {
            let mut piv = col;
            let mut best = a[(col, col)].abs_f64();
            for r in col + 1..n {
                let m = a[(r, col)].abs_f64();
                if m > best {
                    best = m;
                    piv = r;
                }
            }
            if best == 0.0 {
                return T::zero();
            }
            if piv != col {
                for j in 0..n {
                    a.data.swap(col * n + j, piv * n + j);
                }
                det = -det;
            }
            let p = a[(col, col)].clone();
            det = det * p.clone();
            for r in col + 1..n {
                let factor = a[(r, col)].clone() / p.clone();
                if factor.is_zero() {
                    continue;
                }
                for j in col..n {
                    a[(r, j)] = a[(r, j)].clone() - factor.clone() * a[(col, j)].clone();
                }
            }
        }
        det
    }

    /// Inverse by Gauss-Jordan elimination with partial pivoting.
    ///
    /// Pivots are chosen by the `abs_f64` magnitude, which is exact for the
    /// rational instantiation and standard for the complex one.
    pub fn inverse(&self) -> Result<Self> {
        assert!(self.is_square());
        let n = self.rows;
        let mut a = self.clone();
        let mut inv = Self::identity(n);
        for col in 0..n {
            let mut piv = col;
            let mut best = a[(col, col)].abs_f64();
            for r in col + 1..n {
                let m = a[(r, col)].abs_f64();
                if m > best {
                    best = m;
                    piv = r;
                }
            }
            if best == 0.0 {
                return Err(Error::Singular(format!("no pivot in column {col}")));
            }
            if piv != col {
                for j in 0..n {
                    a.data.swap(col * n + j, piv * n + j);
                    inv.data.swap(col * n + j, piv * n + j);
                }
            }
            let p = a[(col, col)].clone();
            for j in 0..n {
                a[(col, j)] = a[(col, j)].clone() / p.clone();
                inv[(col, j)] = inv[(col, j)].clone() / p.clone();
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let factor = a[(r, col)].clone();
                if factor.is_zero() {
                    continue;
                }
                for j in 0..n {
                    a[(r, j)] = a[(r, j)].clone() - factor.clone() * a[(col, j)].clone();
                    inv[(r, j)] = inv[(r, j)].clone() - factor.clone() * inv[(col, j)].clone();
                }
            }
        }
        Ok(inv)
    }
}

/// Matrix commutator a b - b a.
pub fn commutator<T: Ring>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    a.matmul(b) - b.matmul(a)
}

/// Convenience constructor for a 2 by 2 matrix in reading order.
pub fn mat2<T: Ring>(a: T, b: T, c: T, d: T) -> Matrix<T> {
    Matrix::from_rows(vec![vec![a, b], vec![c, d]])
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl<T: Ring> Add for Matrix<T> {
    type Output = Matrix<T>;
    fn add(self, o: Matrix<T>) -> Matrix<T> {
        assert_eq!((self.rows, self.cols), (o.rows, o.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .into_iter()
                .zip(o.data)
                .map(|(x, y)| x + y)
                .collect(),
        }
    }
}

impl<T: Ring> Sub for Matrix<T> {
    type Output = Matrix<T>;
    fn sub(self, o: Matrix<T>) -> Matrix<T> {
        assert_eq!((self.rows, self.cols), (o.rows, o.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .into_iter()
                .zip(o.data)
                .map(|(x, y)| x - y)
                .collect(),
        }
    }
}

impl<T: Ring> Neg for Matrix<T> {
    type Output = Matrix<T>;
    fn neg(self) -> Matrix<T> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.into_iter().map(|x| -x).collect(),
        }
    }
}

impl<T: Ring> Mul for &Matrix<T> {
    type Output = Matrix<T>;
    fn mul(self, o: &Matrix<T>) -> Matrix<T> {
        self.matmul(o)
    }
}

impl<T: Ring> Mul for Matrix<T> {
    type Output = Matrix<T>;
    fn mul(self, o: Matrix<T>) -> Matrix<T> {
        self.matmul(&o)
    }
}

impl Matrix<crate::scalar::Jet2> {
    /// Value components.
    pub fn value(&self) -> Matrix<crate::scalar::C64> {
        self.map(|j| j.v)
    }

    /// z-derivative components.
    pub fn d_z(&self) -> Matrix<crate::scalar::C64> {
        self.map(|j| j.dz)
    }

    /// zbar-derivative components.
    pub fn d_zbar(&self) -> Matrix<crate::scalar::C64> {
        self.map(|j| j.dzb)
    }

    /// Mixed second derivative components.
    pub fn d_mixed(&self) -> Matrix<crate::scalar::C64> {
        self.map(|j| j.dzzb)
    }
}

impl Matrix<crate::scalar::C64> {
    /// Promote to a jet matrix of constants.
    pub fn to_jet(&self) -> Matrix<crate::scalar::Jet2> {
        self.map(|&v| crate::scalar::Jet2::constant(v))
    }
}

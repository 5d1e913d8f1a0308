//! Rectangular sample grids, masked finite differences, and residual reports.
//!
//! Grids carry an activity mask so families with poles or branch loci can
//! exclude a neighborhood of the bad set.  Every finite-difference operator
//! shrinks the mask by its stencil radius; consumers never index into stale
//! boundary values.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::{c64, C64};
use serde::Serialize;
use std::io::Write as IoWrite;
use std::sync::Arc;

/// Uniformly spaced rectangle in the complex plane.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grid {
    pub re_min: f64,
    pub re_max: f64,
    pub im_min: f64,
    pub im_max: f64,
    pub nx: usize,
    pub ny: usize,
    /// Active points; inactive points are excluded from every statistic.
    #[serde(skip)]
    pub mask: Vec<bool>,
}

impl Grid {
    pub fn new(re_min: f64, re_max: f64, im_min: f64, im_max: f64, nx: usize, ny: usize) -> Result<Arc<Self>> {
        if nx < 8 || ny < 8 {
            return Err(Error::Domain(format!("grid must be at least 8x8, got {nx}x{ny}")));
        }
        if !(re_max > re_min) || !(im_max > im_min) {
            return Err(Error::Domain("grid bounds must satisfy max > min".into()));
        }
        Ok(Arc::new(Grid {
            re_min,
            re_max,
            im_min,
            im_max,
            nx,
            ny,
            mask: vec![true; nx * ny],
        }))
    }

    /// Square grid centered at the origin with half-width `half`.
    pub fn square(half: f64, n: usize) -> Result<Arc<Self>> {
        Grid::new(-half, half, -half, half, n, n)
    }

    /// Copy with points failing `keep` masked out.
    pub fn masked(self: &Arc<Self>, keep: impl Fn(C64) -> bool) -> Arc<Self> {
        let mut g = (**self).clone();
        for j in 0..g.ny {
            for i in 0..g.nx {
                let idx = j * g.nx + i;
                g.mask[idx] = g.mask[idx] && keep(g.point(i, j));
            }
        }
        Arc::new(g)
    }

    /// Same rectangle with doubled resolution; every coarse node is a fine node.
    pub fn refine(self: &Arc<Self>) -> Result<Arc<Self>> {
        Grid::new(
            self.re_min,
            self.re_max,
            self.im_min,
            self.im_max,
            2 * self.nx - 1,
            2 * self.ny - 1,
        )
    }

    pub fn hx(&self) -> f64 {
        (self.re_max - self.re_min) / (self.nx - 1) as f64
    }

    pub fn hy(&self) -> f64 {
        (self.im_max - self.im_min) / (self.ny - 1) as f64
    }

    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn point(&self, i: usize, j: usize) -> C64 {
        c64(
            self.re_min + self.hx() * i as f64,
            self.im_min + self.hy() * j as f64,
        )
    }

    pub fn active(&self, i: usize, j: usize) -> bool {
        self.mask[self.idx(i, j)]
    }

    pub fn active_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Values attached to the active points of a grid.
#[derive(Debug, Clone)]
pub struct GridField<T> {
    pub grid: Arc<Grid>,
    pub values: Vec<T>,
}

/// Value types a grid can hold: enough structure for differences and norms.
pub trait FieldValue: Clone {
    fn norm_val(&self) -> f64;
    fn sub_val(&self, other: &Self) -> Self;
    fn add_val(&self, other: &Self) -> Self;
    fn scale_val(&self, k: C64) -> Self;
    fn zero_val(&self) -> Self;
}

impl FieldValue for C64 {
    fn norm_val(&self) -> f64 {
        self.norm()
    }
    fn sub_val(&self, other: &Self) -> Self {
        self - other
    }
    fn add_val(&self, other: &Self) -> Self {
        self + other
    }
    fn scale_val(&self, k: C64) -> Self {
        self * k
    }
    fn zero_val(&self) -> Self {
        C64::new(0.0, 0.0)
    }
}

impl FieldValue for Matrix<C64> {
    fn norm_val(&self) -> f64 {
        self.fro_norm()
    }
    fn sub_val(&self, other: &Self) -> Self {
        self.clone() - other.clone()
    }
    fn add_val(&self, other: &Self) -> Self {
        self.clone() + other.clone()
    }
    fn scale_val(&self, k: C64) -> Self {
        self.scale(k)
    }
    fn zero_val(&self) -> Self {
        Matrix::zeros(self.rows(), self.cols())
    }
}

impl<T: FieldValue> GridField<T> {
    /// Sample a pointwise closure on the active set; inactive slots get
    /// `fill` so the value vector stays rectangular.
    pub fn sample(grid: &Arc<Grid>, fill: T, f: impl Fn(C64) -> T) -> Self {
        let mut values = Vec::with_capacity(grid.nx * grid.ny);
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                if grid.active(i, j) {
                    values.push(f(grid.point(i, j)));
                } else {
                    values.push(fill.clone());
                }
            }
        }
        GridField { grid: grid.clone(), values }
    }

    pub fn at(&self, i: usize, j: usize) -> &T {
        &self.values[self.grid.idx(i, j)]
    }

    pub fn map<U: FieldValue>(&self, f: impl Fn(&T) -> U) -> GridField<U> {
        GridField {
            grid: self.grid.clone(),
            values: self.values.iter().map(f).collect(),
        }
    }

    pub fn zip<U: FieldValue, V: FieldValue>(&self, other: &GridField<U>, f: impl Fn(&T, &U) -> V) -> GridField<V> {
        assert_eq!(self.grid.nx, other.grid.nx);
        assert_eq!(self.grid.ny, other.grid.ny);
        GridField {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(other.values.iter())
                .map(|(a, b)| f(a, b))
                .collect(),
        }
    }

    fn fd_axis(&self, order4: bool, axis_x: bool) -> GridField<T> {
        let g = &self.grid;
        let (nx, ny) = (g.nx, g.ny);
        let h = if axis_x { g.hx() } else { g.hy() };
        let radius: isize = if order4 { 2 } else { 1 };
        let mut mask = g.mask.clone();
        let mut values = self.values.clone();
        for j in 0..ny {
            for i in 0..nx {
                let idx = g.idx(i, j);
                let (p, n) = if axis_x {
                    (i as isize, nx as isize)
                } else {
                    (j as isize, ny as isize)
                };
                let mut ok = g.mask[idx] && p - radius >= 0 && p + radius < n;
                if ok {
                    for off in -radius..=radius {
                        let (ii, jj) = if axis_x {
                            ((i as isize + off) as usize, j)
                        } else {
                            (i, (j as isize + off) as usize)
                        };
                        ok &= g.mask[g.idx(ii, jj)];
                    }
                }
                if !ok {
                    mask[idx] = false;
                    values[idx] = self.values[idx].zero_val();
                    continue;
                }
                let get = |off: isize| -> &T {
                    let (ii, jj) = if axis_x {
                        ((i as isize + off) as usize, j)
                    } else {
                        (i, (j as isize + off) as usize)
                    };
                    &self.values[g.idx(ii, jj)]
                };
                let v = if order4 {
                    // (-f2 + 8 f1 - 8 f-1 + f-2) / 12h
                    let a = get(1).scale_val(c64(8.0, 0.0)).sub_val(&get(-1).scale_val(c64(8.0, 0.0)));
                    let b = get(-2).sub_val(get(2));
                    a.add_val(&b).scale_val(c64(1.0 / (12.0 * h), 0.0))
                } else {
                    get(1).sub_val(get(-1)).scale_val(c64(1.0 / (2.0 * h), 0.0))
                };
                values[idx] = v;
            }
        }
        let mut grid = (**g).clone();
        grid.mask = mask;
        GridField { grid: Arc::new(grid), values }
    }

    /// Second-order central difference for the Wirtinger z-derivative.
    pub fn fd_dz(&self) -> GridField<T> {
        let dx = self.fd_axis(false, true);
        let dy = self.fd_axis(false, false);
        combine_wirtinger(&dx, &dy, false)
    }

    /// Second-order central difference for the zbar-derivative.
    pub fn fd_dzbar(&self) -> GridField<T> {
        let dx = self.fd_axis(false, true);
        let dy = self.fd_axis(false, false);
        combine_wirtinger(&dx, &dy, true)
    }

    /// Fourth-order five-point stencils, for checks with tight budgets.
    pub fn fd4_dz(&self) -> GridField<T> {
        let dx = self.fd_axis(true, true);
        let dy = self.fd_axis(true, false);
        combine_wirtinger(&dx, &dy, false)
    }

    pub fn fd4_dzbar(&self) -> GridField<T> {
        let dx = self.fd_axis(true, true);
        let dy = self.fd_axis(true, false);
        combine_wirtinger(&dx, &dy, true)
    }

    /// Magnitude statistics over the active set.
    pub fn report(&self) -> ResidualReport {
        let g = &self.grid;
        let mut max_abs: f64 = 0.0;
        let mut worst = (f64::NAN, f64::NAN);
        let mut sumsq = 0.0;
        let mut count = 0usize;
        for j in 0..g.ny {
            for i in 0..g.nx {
                if !g.active(i, j) {
                    continue;
                }
                let a = self.values[g.idx(i, j)].norm_val();
                if a > max_abs {
                    max_abs = a;
                    let z = g.point(i, j);
                    worst = (z.re, z.im);
                }
                sumsq += a * a;
                count += 1;
            }
        }
        ResidualReport {
            max_abs,
            rms: if count > 0 { (sumsq / count as f64).sqrt() } else { 0.0 },
            worst_point: worst,
            points_used: count,
        }
    }

    /// Statistics restricted to points satisfying `keep`.
    pub fn report_where(&self, keep: impl Fn(C64) -> bool) -> ResidualReport {
        let restricted = GridField {
            grid: self.grid.masked(keep),
            values: self.values.clone(),
        };
        restricted.report()
    }
}

fn combine_wirtinger<T: FieldValue>(dx: &GridField<T>, dy: &GridField<T>, bar: bool) -> GridField<T> {
    // d/dz = (d/dx - i d/dy)/2, d/dzbar = (d/dx + i d/dy)/2.
    let iy = if bar { c64(0.0, 0.5) } else { c64(0.0, -0.5) };
    let mut out = dx.zip(dy, |a, b| a.scale_val(c64(0.5, 0.0)).add_val(&b.scale_val(iy)));
    let mut grid = (*out.grid).clone();
    for k in 0..grid.mask.len() {
        grid.mask[k] = dx.grid.mask[k] && dy.grid.mask[k];
    }
    out.grid = Arc::new(grid);
    out
}

impl GridField<C64> {
    /// Trapezoid quadrature of the real part over the rectangle.
    /// Masked points contribute zero.
    pub fn trapezoid_real(&self) -> f64 {
        let g = &self.grid;
        let mut acc = 0.0;
        for j in 0..g.ny {
            for i in 0..g.nx {
                if !g.active(i, j) {
                    continue;
                }
                let wx = if i == 0 || i == g.nx - 1 { 0.5 } else { 1.0 };
                let wy = if j == 0 || j == g.ny - 1 { 0.5 } else { 1.0 };
                acc += wx * wy * self.values[g.idx(i, j)].re;
            }
        }
        acc * g.hx() * g.hy()
    }

    pub fn write_csv(&self, w: &mut impl IoWrite) -> Result<()> {
        writeln!(w, "re,im,value_re,value_im")?;
        let g = &self.grid;
        for j in 0..g.ny {
            for i in 0..g.nx {
                if !g.active(i, j) {
                    continue;
                }
                let z = g.point(i, j);
                let v = self.values[g.idx(i, j)];
                writeln!(w, "{:.17e},{:.17e},{:.17e},{:.17e}", z.re, z.im, v.re, v.im)?;
            }
        }
        Ok(())
    }
}

impl GridField<Matrix<C64>> {
    /// CSV with matrix entries flattened row-major after the coordinates.
    pub fn write_csv(&self, w: &mut impl IoWrite) -> Result<()> {
        let first = self.values.first().ok_or_else(|| Error::Shape("empty field".into()))?;
        let (r, c) = (first.rows(), first.cols());
        let mut header = String::from("re,im");
        for a in 0..r {
            for b in 0..c {
                header.push_str(&format!(",m{a}{b}_re,m{a}{b}_im"));
            }
        }
        writeln!(w, "{header}")?;
        let g = &self.grid;
        for j in 0..g.ny {
            for i in 0..g.nx {
                if !g.active(i, j) {
                    continue;
                }
                let z = g.point(i, j);
                let m = &self.values[g.idx(i, j)];
                let mut line = format!("{:.17e},{:.17e}", z.re, z.im);
                for a in 0..r {
                    for b in 0..c {
                        let v = m[(a, b)];
                        line.push_str(&format!(",{:.17e},{:.17e}", v.re, v.im));
                    }
                }
                writeln!(w, "{line}")?;
            }
        }
        Ok(())
    }
}

/// Magnitude summary of a residual field.
#[derive(Debug, Clone, Serialize)]
pub struct ResidualReport {
    pub max_abs: f64,
    pub rms: f64,
    pub worst_point: (f64, f64),
    pub points_used: usize,
}

impl ResidualReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_abs <= tol
    }
}

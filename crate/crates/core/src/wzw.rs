//! Triangular-diagonal-triangular factorization of 2x2 group fields and the
//! local field equations written in the factor coordinates.
//!
//! A regular group field g factors as g = A B C with A upper unipotent,
//! B = diag(e^{phi/2}, e^{-phi/2}), C lower unipotent. Two real forms are
//! supported; the second inserts a factor i into both unipotent exponents.
//! On top of the factorization the module provides the equations of motion
//! for the (x, y, phi) coordinates, an energy quadrature, the reduction of
//! holomorphic-data configurations to a Liouville equation, and a frame
//! check that conjugates the mixed-gauge connection commutator back to the
//! group-current commutator.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{Grid, GridField, ResidualReport};
use crate::matrix::{commutator, mat2, Matrix};
use crate::poly::PolyField;
use crate::scalar::{c64, C64, Jet2};
use crate::toda::ScalarJetFn;
use crate::{CMatrix, JetMatrix};

/// Lower-right entries smaller than this reject the factorization.
pub const REGULARITY_FLOOR: f64 = 1e-8;
/// Inputs must be unimodular to this tolerance.
pub const UNIMODULAR_TOL: f64 = 1e-10;

/// Which real form the factor matrices belong to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RealForm {
    /// A = exp(x E+), C = exp(y E-), all entries real for real data.
    Sl2R,
    /// A = exp(i x E+), C = exp(i y E-).
    Su11,
}

impl RealForm {
    /// Multiplier carried by the unipotent exponents.
    pub fn unit(self) -> C64 {
        match self {
            RealForm::Sl2R => c64(1.0, 0.0),
            RealForm::Su11 => c64(0.0, 1.0),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            RealForm::Sl2R => "sl2r",
            RealForm::Su11 => "su11",
        }
    }
}

/// Pointwise 2-jets of the three factor coordinates, ordered (x, y, phi).
pub type GaussJetFn = Arc<dyn Fn(C64) -> (Jet2, Jet2, Jet2)>;

/// Factor coordinates of a group field. phi is real whenever the field it
/// came from has a positive lower-right corner; the principal logarithm is
/// used otherwise and composition still inverts exactly.
pub struct GaussFields {
    pub signature: RealForm,
    pub x: GridField<C64>,
    pub y: GridField<C64>,
    pub phi: GridField<C64>,
    jets: Option<GaussJetFn>,
}

impl GaussFields {
    pub fn from_values(
        signature: RealForm,
        x: GridField<C64>,
        y: GridField<C64>,
        phi: GridField<C64>,
    ) -> Result<Self> {
        if x.grid.nx != y.grid.nx
            || x.grid.ny != y.grid.ny
            || x.grid.nx != phi.grid.nx
            || x.grid.ny != phi.grid.ny
        {
            return Err(Error::Shape("factor fields live on mismatched grids".into()));
        }
        Ok(GaussFields { signature, x, y, phi, jets: None })
    }

    /// Analytic construction: values are sampled from the jet closure and
    /// every residual below uses exact derivatives.
    pub fn from_jets(signature: RealForm, grid: &Arc<Grid>, jets: GaussJetFn) -> Self {
        let zero = c64(0.0, 0.0);
        let x = GridField::sample(grid, zero, |z| jets(z).0.v);
        let y = GridField::sample(grid, zero, |z| jets(z).1.v);
        let phi = GridField::sample(grid, zero, |z| jets(z).2.v);
        GaussFields { signature, x, y, phi, jets: Some(jets) }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.x.grid
    }

    pub fn has_jets(&self) -> bool {
        self.jets.is_some()
    }

    pub fn jet_at(&self, z: C64) -> Option<(Jet2, Jet2, Jet2)> {
        self.jets.as_ref().map(|j| j(z))
    }
}

fn decompose_point(m: &CMatrix, signature: RealForm) -> Result<(C64, C64, C64)> {
    let a = m[(0, 0)];
    let b = m[(0, 1)];
    let c = m[(1, 0)];
    let d = m[(1, 1)];
    let det = a * d - b * c;
    if (det - c64(1.0, 0.0)).norm() > UNIMODULAR_TOL {
        return Err(Error::Domain(format!(
            "factorization needs a unimodular matrix, |det - 1| = {:.3e}",
            (det - c64(1.0, 0.0)).norm()
        )));
    }
    if d.norm() <= REGULARITY_FLOOR {
        return Err(Error::Decomposition(format!(
            "lower-right entry {:.3e} is below the regularity floor",
            d.norm()
        )));
    }
    let inv_unit = match signature {
        RealForm::Sl2R => c64(1.0, 0.0),
        RealForm::Su11 => c64(0.0, -1.0),
    };
    let phi = -2.0 * d.ln();
    let x = inv_unit * b / d;
    let y = inv_unit * c / d;
    Ok((x, y, phi))
}

fn compose_point(signature: RealForm, x: C64, y: C64, phi: C64) -> CMatrix {
    let eps = signature.unit();
    let eh = (0.5 * phi).exp();
    let em = (-0.5 * phi).exp();
    let ex = eps * x;
    let ey = eps * y;
    mat2(eh + ex * ey * em, ex * em, ey * em, em)
}

/// Split a unimodular matrix field into factor coordinates.
///
/// The solve is closed-form: e^{-phi/2} is the lower-right entry and the
/// unipotent coordinates are the off-diagonal entries divided by it.
pub fn gauss_decompose(g: &GridField<CMatrix>, signature: RealForm) -> Result<GaussFields> {
    let grid = &g.grid;
    let zero = c64(0.0, 0.0);
    let mut xs = vec![zero; grid.nx * grid.ny];
    let mut ys = vec![zero; grid.nx * grid.ny];
    let mut ps = vec![zero; grid.nx * grid.ny];
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            if !grid.active(i, j) {
                continue;
            }
            let (x, y, phi) = decompose_point(g.at(i, j), signature)?;
            let k = grid.idx(i, j);
            xs[k] = x;
            ys[k] = y;
            ps[k] = phi;
        }
    }
    Ok(GaussFields {
        signature,
        x: GridField { grid: grid.clone(), values: xs },
        y: GridField { grid: grid.clone(), values: ys },
        phi: GridField { grid: grid.clone(), values: ps },
        jets: None,
    })
}

/// Rebuild the matrix field A B C from factor coordinates.
pub fn gauss_compose(f: &GaussFields) -> GridField<CMatrix> {
    let grid = f.grid().clone();
    let values = (0..grid.nx * grid.ny)
        .map(|k| compose_point(f.signature, f.x.values[k], f.y.values[k], f.phi.values[k]))
        .collect();
    GridField { grid, values }
}

/// The three residual fields of a coordinate equation system.
pub struct EomResiduals {
    pub phi: GridField<C64>,
    pub x_conservation: GridField<C64>,
    pub y_conservation: GridField<C64>,
}

impl EomResiduals {
    pub fn reports(&self) -> [ResidualReport; 3] {
        [self.phi.report(), self.x_conservation.report(), self.y_conservation.report()]
    }

    pub fn max_abs(&self) -> f64 {
        self.reports().iter().fold(0.0, |m, r| m.max(r.max_abs))
    }
}

/// Equations of motion of the first real form:
/// dz dzb phi + 2 e^{-phi} dz(y) dzb(x) = 0 together with the chiral
/// conservation laws dz(dzb(x) e^{-phi}) = 0 and dzb(dz(y) e^{-phi}) = 0.
///
/// Jet-backed fields get exact derivatives; value-only fields fall back to
/// fourth-order differences, shrinking the active set near the boundary.
pub fn wzw_eom_residual(f: &GaussFields) -> EomResiduals {
    if let Some(jets) = &f.jets {
        let grid = f.grid();
        let zero = c64(0.0, 0.0);
        let r_phi = GridField::sample(grid, zero, |z| {
            let (x, y, p) = jets(z);
            p.dzzb + 2.0 * (-p.v).exp() * y.dz * x.dzb
        });
        let r_x = GridField::sample(grid, zero, |z| {
            let (x, _, p) = jets(z);
            (x.dzzb - x.dzb * p.dz) * (-p.v).exp()
        });
        let r_y = GridField::sample(grid, zero, |z| {
            let (_, y, p) = jets(z);
            (y.dzzb - y.dz * p.dzb) * (-p.v).exp()
        });
        return EomResiduals { phi: r_phi, x_conservation: r_x, y_conservation: r_y };
    }
    let em = f.phi.map(|p| (-p).exp());
    let mixed = f.phi.fd4_dz().fd4_dzbar();
    let cross = em.zip(&f.y.fd4_dz(), |e, yz| e * yz).zip(&f.x.fd4_dzbar(), |t, xzb| t * xzb);
    let r_phi = mixed.zip(&cross, |m, c| m + 2.0 * c);
    let r_x = f.x.fd4_dzbar().zip(&em, |xzb, e| xzb * e).fd4_dz();
    let r_y = f.y.fd4_dz().zip(&em, |yz, e| yz * e).fd4_dzbar();
    EomResiduals { phi: r_phi, x_conservation: r_x, y_conservation: r_y }
}

/// Equations of motion of the second real form:
/// dz dzb phi - e^{-phi} (dz(x) dzb(y) + dz(y) dzb(x)) = 0 plus one
/// symmetric conservation law per unipotent coordinate.
pub fn su11_eom_residual(f: &GaussFields) -> EomResiduals {
    if let Some(jets) = &f.jets {
        let grid = f.grid();
        let zero = c64(0.0, 0.0);
        let r_phi = GridField::sample(grid, zero, |z| {
            let (x, y, p) = jets(z);
            p.dzzb - (-p.v).exp() * (x.dz * y.dzb + y.dz * x.dzb)
        });
        // dz(dzb(x) e^{-phi}) + dzb(dz(x) e^{-phi}) needs only mixed and
        // first derivatives, which the jets carry.
        let r_x = GridField::sample(grid, zero, |z| {
            let (x, _, p) = jets(z);
            (2.0 * x.dzzb - x.dzb * p.dz - x.dz * p.dzb) * (-p.v).exp()
        });
        let r_y = GridField::sample(grid, zero, |z| {
            let (_, y, p) = jets(z);
            (2.0 * y.dzzb - y.dzb * p.dz - y.dz * p.dzb) * (-p.v).exp()
        });
        return EomResiduals { phi: r_phi, x_conservation: r_x, y_conservation: r_y };
    }
    let em = f.phi.map(|p| (-p).exp());
    let mixed = f.phi.fd4_dz().fd4_dzbar();
    let cross = f
        .x
        .fd4_dz()
        .zip(&f.y.fd4_dzbar(), |a, b| a * b)
        .zip(&f.y.fd4_dz().zip(&f.x.fd4_dzbar(), |a, b| a * b), |s, t| s + t)
        .zip(&em, |s, e| s * e);
    let r_phi = mixed.zip(&cross, |m, c| m - c);
    let cons = |u: &GridField<C64>| -> GridField<C64> {
        let a = u.fd4_dzbar().zip(&em, |d, e| d * e).fd4_dz();
        let b = u.fd4_dz().zip(&em, |d, e| d * e).fd4_dzbar();
        a.zip(&b, |p, q| p + q)
    };
    EomResiduals { phi: r_phi, x_conservation: cons(&f.x), y_conservation: cons(&f.y) }
}

/// Trapezoid quadrature of the energy density, scaled by -k.
///
/// The density is 1/2 dz(phi) dzb(phi) minus the signature's cross term:
/// e^{-phi}(dz(x) dzb(y) + dz(y) dzb(x)) for the second real form, and
/// -2 e^{-phi} dz(y) dzb(x) for the first, matching each phi equation.
/// Value-only fields integrate over the differentiable interior.
pub fn su11_energy(f: &GaussFields, k: f64) -> f64 {
    let density = if let Some(jets) = &f.jets {
        let zero = c64(0.0, 0.0);
        let sig = f.signature;
        GridField::sample(f.grid(), zero, move |z| {
            let (x, y, p) = jets(z);
            let kin = 0.5 * p.dz * p.dzb;
            match sig {
                RealForm::Su11 => kin - (-p.v).exp() * (x.dz * y.dzb + y.dz * x.dzb),
                RealForm::Sl2R => kin + 2.0 * (-p.v).exp() * y.dz * x.dzb,
            }
        })
    } else {
        let em = f.phi.map(|p| (-p).exp());
        let kin = f.phi.fd4_dz().zip(&f.phi.fd4_dzbar(), |a, b| 0.5 * a * b);
        match f.signature {
            RealForm::Su11 => {
                let cross = f
                    .x
                    .fd4_dz()
                    .zip(&f.y.fd4_dzbar(), |a, b| a * b)
                    .zip(&f.y.fd4_dz().zip(&f.x.fd4_dzbar(), |a, b| a * b), |s, t| s + t)
                    .zip(&em, |s, e| s * e);
                kin.zip(&cross, |a, b| a - b)
            }
            RealForm::Sl2R => {
                let cross =
                    f.y.fd4_dz().zip(&f.x.fd4_dzbar(), |a, b| a * b).zip(&em, |s, e| s * e);
                kin.zip(&cross, |a, b| a + 2.0 * b)
            }
        }
    };
    -k * density.trapezoid_real()
}

/// Which reduction branch a holomorphic-data pair selects.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OrcBranch {
    /// Constant pair (mu, nu): the ansatz dzb(x) = nu e^phi, dz(y) = mu e^phi
    /// reduces the first real form to dz dzb phi + 2 mu nu e^phi = 0.
    Constants { mu: C64, nu: C64 },
    /// Holomorphic pair (f, g): the ansatz dz(x) = f e^phi, dz(y) = g e^phi
    /// with conjugate slots dzb(x) = conj(f) e^phi, dzb(y) = -conj(g) e^phi
    /// reduces the second real form to dz dzb phi + M e^phi = 0 with
    /// M = f conj(g) - conj(f) g.
    Generic,
}

/// Outcome of the holomorphic-data reduction.
pub struct OrcReduction {
    pub branch: OrcBranch,
    /// Coupling in front of e^phi: the constant 2 mu nu, or M(z, zbar).
    pub coupling: GridField<C64>,
    /// dz dzb phi + coupling * e^phi, from exact jets.
    pub liouville: GridField<C64>,
    /// M + conj(M), which vanishes identically; None on the constant branch.
    pub purity: Option<ResidualReport>,
    /// Largest disagreement between the two staircase integration orders.
    pub closure_defect: f64,
    /// Path-integrated coordinates, generic branch only.
    pub induced: Option<GaussFields>,
    /// Full coordinate equations evaluated on the reduction data.
    pub eom: EomResiduals,
}

const GL3_OFFSETS: [f64; 3] = [-0.774596669241483377, 0.0, 0.774596669241483377];
const GL3_WEIGHTS: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];

/// Integral of ds(z) over one straight segment, three-point Gauss rule.
fn gl3_segment(from: C64, dir: C64, ds: &impl Fn(C64) -> C64) -> C64 {
    let mut acc = c64(0.0, 0.0);
    for (t, w) in GL3_OFFSETS.iter().zip(GL3_WEIGHTS.iter()) {
        let s = 0.5 * (1.0 + t);
        acc += *w * ds(from + s * dir);
    }
    0.5 * acc
}

/// Staircase antiderivative of the 1-form sz dz + szb dzb from the grid
/// origin, rows first or columns first.
fn staircase(grid: &Arc<Grid>, slopes: &impl Fn(C64) -> (C64, C64), rows_first: bool) -> Vec<C64> {
    let hx = c64(grid.hx(), 0.0);
    let hy = c64(0.0, grid.hy());
    // Along dz = dt: the form pulls back to sz + szb; along dz = i dt it
    // pulls back to i (sz - szb).
    let along_x = |z: C64| {
        let (sz, szb) = slopes(z);
        sz + szb
    };
    let along_y = |z: C64| {
        let (sz, szb) = slopes(z);
        c64(0.0, 1.0) * (sz - szb)
    };
    let mut vals = vec![c64(0.0, 0.0); grid.nx * grid.ny];
    if rows_first {
        for i in 1..grid.nx {
            vals[grid.idx(i, 0)] = vals[grid.idx(i - 1, 0)]
                + gl3_segment(grid.point(i - 1, 0), hx, &along_x) * grid.hx();
        }
        for i in 0..grid.nx {
            for j in 1..grid.ny {
                vals[grid.idx(i, j)] = vals[grid.idx(i, j - 1)]
                    + gl3_segment(grid.point(i, j - 1), hy, &along_y) * grid.hy();
            }
        }
    } else {
        for j in 1..grid.ny {
            vals[grid.idx(0, j)] = vals[grid.idx(0, j - 1)]
                + gl3_segment(grid.point(0, j - 1), hy, &along_y) * grid.hy();
        }
        for j in 0..grid.ny {
            for i in 1..grid.nx {
                vals[grid.idx(i, j)] = vals[grid.idx(i - 1, j)]
                    + gl3_segment(grid.point(i - 1, j), hx, &along_x) * grid.hx();
            }
        }
    }
    vals
}

/// Reduce a holomorphic data pair to a Liouville equation for phi.
///
/// A constant pair selects the first-real-form ansatz and its residuals are
/// evaluated directly on the ansatz slots, so the conservation laws hold
/// structurally. A non-constant pair selects the second real form: the
/// unipotent coordinates are rebuilt by staircase path integration and the
/// full equations are evaluated on the rebuilt values. Integration needs a
/// fully active grid, and a closure defect above `closure_tol` means the
/// slope data was not integrable.
pub fn orc_reduction(
    fplus: &PolyField,
    gplus: &PolyField,
    phi: &ScalarJetFn,
    grid: &Arc<Grid>,
    closure_tol: f64,
) -> Result<OrcReduction> {
    if !fplus.is_holomorphic() || !gplus.is_holomorphic() {
        return Err(Error::Domain("reduction data must be holomorphic".into()));
    }
    let zero = c64(0.0, 0.0);
    if fplus.is_constant() && gplus.is_constant() {
        let nu = fplus.coeff(0, 0);
        let mu = gplus.coeff(0, 0);
        let coupling = GridField::sample(grid, zero, |_| 2.0 * mu * nu);
        let liouville =
            GridField::sample(grid, zero, |z| phi(z).dzzb + 2.0 * mu * nu * phi(z).v.exp());
        let r_x = GridField::sample(grid, zero, |z| {
            let p = phi(z);
            (p.exp().scale(nu) * p.scale(c64(-1.0, 0.0)).exp()).dz
        });
        let r_y = GridField::sample(grid, zero, |z| {
            let p = phi(z);
            (p.exp().scale(mu) * p.scale(c64(-1.0, 0.0)).exp()).dzb
        });
        return Ok(OrcReduction {
            branch: OrcBranch::Constants { mu, nu },
            coupling,
            liouville: liouville.clone(),
            purity: None,
            closure_defect: 0.0,
            induced: None,
            eom: EomResiduals { phi: liouville, x_conservation: r_x, y_conservation: r_y },
        });
    }

    if grid.active_count() != grid.nx * grid.ny {
        return Err(Error::Domain("path integration needs a fully active grid".into()));
    }
    let m_at = {
        let f = fplus.clone();
        let g = gplus.clone();
        move |z: C64| {
            let fv = f.eval(z);
            let gv = g.eval(z);
            fv * gv.conj() - fv.conj() * gv
        }
    };
    let coupling = GridField::sample(grid, zero, &m_at);
    let purity = GridField::sample(grid, zero, |z| {
        let m = m_at(z);
        m + m.conj()
    })
    .report();
    let liouville = GridField::sample(grid, zero, |z| phi(z).dzzb + m_at(z) * phi(z).v.exp());

    let x_slopes = {
        let f = fplus.clone();
        let phi = phi.clone();
        move |z: C64| {
            let e = phi(z).v.exp();
            let fv = f.eval(z);
            (fv * e, fv.conj() * e)
        }
    };
    let y_slopes = {
        let g = gplus.clone();
        let phi = phi.clone();
        move |z: C64| {
            let e = phi(z).v.exp();
            let gv = g.eval(z);
            (gv * e, -gv.conj() * e)
        }
    };
    let x_rows = staircase(grid, &x_slopes, true);
    let x_cols = staircase(grid, &x_slopes, false);
    let y_rows = staircase(grid, &y_slopes, true);
    let y_cols = staircase(grid, &y_slopes, false);
    let mut defect: f64 = 0.0;
    for k in 0..x_rows.len() {
        defect = defect.max((x_rows[k] - x_cols[k]).norm());
        defect = defect.max((y_rows[k] - y_cols[k]).norm());
    }
    if defect > closure_tol {
        return Err(Error::Inconsistent(format!(
            "staircase closure defect {defect:.3e} exceeds {closure_tol:.3e}"
        )));
    }
    let induced = GaussFields::from_values(
        RealForm::Su11,
        GridField { grid: grid.clone(), values: x_rows },
        GridField { grid: grid.clone(), values: y_rows },
        GridField::sample(grid, zero, |z| phi(z).v),
    )?;
    let eom = su11_eom_residual(&induced);
    Ok(OrcReduction {
        branch: OrcBranch::Generic,
        coupling,
        liouville,
        purity: Some(purity),
        closure_defect: defect,
        induced: Some(induced),
        eom,
    })
}

/// Frame check tying the factorization to the current commutator.
pub struct BcFrameCheck {
    /// (BC)^{-1} [Az~, Azb~] (BC) against the commutator of g^{-1}dg,
    /// where A~ = A^{-1}dA + (dB)B^{-1} + B(dC)C^{-1}B^{-1}. Exact identity.
    pub conjugation_identity: ResidualReport,
    /// Off-diagonal size of the conjugated commutator.
    pub off_diagonal: ResidualReport,
    /// Lower-left corner alone; triangular data keeps it at zero.
    pub lower_corner: ResidualReport,
    /// Cartan coefficient of the commutator against the antisymmetric
    /// combination (dz(x) dzb(y) - dz(y) dzb(x)) e^{-phi}. The symmetric
    /// variant with both factors equal vanishes identically and carries no
    /// information, so the antisymmetric form is the one implemented.
    pub cartan_identity: ResidualReport,
    /// dzb of log(cartan / (coupling e^phi)), where both sides are away
    /// from zero. None without a coupling or without usable points.
    pub diagonal_holomorphy: Option<ResidualReport>,
    pub conjugated: GridField<CMatrix>,
}

fn jet_factor_matrices(sig: RealForm, x: Jet2, y: Jet2, p: Jet2) -> (JetMatrix, JetMatrix, JetMatrix) {
    let one = Jet2::constant(c64(1.0, 0.0));
    let zero = Jet2::constant(c64(0.0, 0.0));
    let eps = sig.unit();
    let a = mat2(one, x.scale(eps), zero, one);
    let b = mat2(p.scale(c64(0.5, 0.0)).exp(), zero, zero, p.scale(c64(-0.5, 0.0)).exp());
    let c = mat2(one, zero, y.scale(eps), one);
    (a, b, c)
}

/// Conjugate the mixed-gauge connection commutator by BC and compare it
/// with the left-current commutator, which it equals identically. Needs
/// jet-backed fields.
pub fn bc_frame_check(
    f: &GaussFields,
    coupling: Option<&dyn Fn(C64) -> C64>,
) -> Result<BcFrameCheck> {
    let jets = f
        .jets
        .as_ref()
        .ok_or_else(|| Error::Domain("frame check needs jet-backed fields".into()))?;
    let grid = f.grid();
    let sig = f.signature;
    let zero = c64(0.0, 0.0);
    let fill = Matrix::zeros(2, 2);

    let per_point = |z: C64| -> (CMatrix, f64, C64, C64) {
        let (xj, yj, pj) = jets(z);
        let (a, b, c) = jet_factor_matrices(sig, xj, yj, pj);
        let eps = sig.unit();
        let one = c64(1.0, 0.0);
        let av_inv = mat2(one, -eps * xj.v, zero, one);
        let bv = b.value();
        let bv_inv = mat2((-0.5 * pj.v).exp(), zero, zero, (0.5 * pj.v).exp());
        let cv = c.value();
        let cv_inv = mat2(one, zero, -eps * yj.v, one);

        let tilde = |da: CMatrix, db: CMatrix, dc: CMatrix| -> CMatrix {
            let t1 = &av_inv * &da;
            let t2 = &db * &bv_inv;
            let t3 = &(&bv * &(&dc * &cv_inv)) * &bv_inv;
            t1 + t2 + t3
        };
        let az = tilde(a.d_z(), b.d_z(), c.d_z());
        let azb = tilde(a.d_zbar(), b.d_zbar(), c.d_zbar());
        let k = commutator(&az, &azb);
        let bc = &bv * &cv;
        let bc_inv = &cv_inv * &bv_inv;
        let t = &(&bc_inv * &k) * &bc;

        let g = &(&a * &b) * &c;
        let gv = g.value();
        let det = gv[(0, 0)] * gv[(1, 1)] - gv[(0, 1)] * gv[(1, 0)];
        let g_inv = mat2(gv[(1, 1)] / det, -gv[(0, 1)] / det, -gv[(1, 0)] / det, gv[(0, 0)] / det);
        let lz = &g_inv * &g.d_z();
        let lzb = &g_inv * &g.d_zbar();
        let kl = commutator(&lz, &lzb);
        let ident = (t.clone() - kl).fro_norm();

        let sign = match sig {
            RealForm::Sl2R => c64(1.0, 0.0),
            RealForm::Su11 => c64(-1.0, 0.0),
        };
        let antisym = sign * (xj.dz * yj.dzb - yj.dz * xj.dzb) * (-pj.v).exp();
        let cartan = k[(0, 0)] - antisym;
        (t, ident, cartan, k[(0, 0)])
    };

    let conjugated = GridField::sample(grid, fill, |z| per_point(z).0);
    let identity = GridField::sample(grid, zero, |z| c64(per_point(z).1, 0.0)).report();
    let off_diagonal = conjugated
        .map(|t| c64(t[(0, 1)].norm().max(t[(1, 0)].norm()), 0.0))
        .report();
    let lower_corner = conjugated.map(|t| t[(1, 0)]).report();
    let cartan_identity = GridField::sample(grid, zero, |z| per_point(z).2).report();

    let diagonal_holomorphy = coupling.and_then(|m| {
        let kappa = GridField::sample(grid, zero, |z| per_point(z).3);
        let target = GridField::sample(grid, zero, |z| m(z) * jets(z).2.v.exp());
        let k_scale = kappa.report().max_abs;
        let t_scale = target.report().max_abs;
        if k_scale == 0.0 || t_scale == 0.0 {
            return None;
        }
        let mut masked = (**grid).clone();
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let idx = grid.idx(i, j);
                masked.mask[idx] = masked.mask[idx]
                    && kappa.values[idx].norm() > 1e-8 * k_scale
                    && target.values[idx].norm() > 1e-8 * t_scale;
            }
        }
        let masked = Arc::new(masked);
        let ratio = GridField {
            grid: masked.clone(),
            values: kappa
                .values
                .iter()
                .zip(target.values.iter())
                .map(|(k, t)| if t.norm() > 0.0 { k / t } else { c64(0.0, 0.0) })
                .collect(),
        };
        let deriv = ratio.fd_dzbar();
        if deriv.grid.active_count() == 0 {
            return None;
        }
        Some(deriv.zip(&ratio, |d, r| d / r).report())
    });

    Ok(BcFrameCheck {
        conjugation_identity: identity,
        off_diagonal,
        lower_corner,
        cartan_identity,
        diagonal_holomorphy,
        conjugated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::cell::RefCell;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn small_grid() -> Arc<Grid> {
        Grid::square(0.5, 9).unwrap()
    }

    fn const_matrix_field(grid: &Arc<Grid>, m: CMatrix) -> GridField<CMatrix> {
        GridField::sample(grid, Matrix::zeros(2, 2), move |_| m.clone())
    }

    #[test]
    fn decompose_identity_gives_zero_coordinates() {
        let grid = small_grid();
        for sig in [RealForm::Sl2R, RealForm::Su11] {
            let g = const_matrix_field(&grid, Matrix::identity(2));
            let f = gauss_decompose(&g, sig).unwrap();
            assert!(f.x.report().max_abs <= 1e-15);
            assert!(f.y.report().max_abs <= 1e-15);
            assert!(f.phi.report().max_abs <= 1e-15);
        }
    }

    #[test]
    fn decompose_known_real_matrix() {
        let grid = small_grid();
        let one = c64(1.0, 0.0);
        let g = const_matrix_field(&grid, mat2(2.0 * one, one, one, one));
        let f = gauss_decompose(&g, RealForm::Sl2R).unwrap();
        assert!((f.phi.at(3, 3) - c64(0.0, 0.0)).norm() <= 1e-15);
        assert!((f.x.at(3, 3) - one).norm() <= 1e-15);
        assert!((f.y.at(3, 3) - one).norm() <= 1e-15);
        let back = gauss_compose(&f);
        let diff = back.zip(&g, |a, b| a.clone() - b.clone());
        assert!(diff.report().max_abs <= 1e-14);
    }

    #[test]
    fn decompose_diagonal_su11_matrix() {
        let grid = small_grid();
        let t = 0.3_f64;
        let g = const_matrix_field(
            &grid,
            mat2(c64(t.exp(), 0.0), c64(0.0, 0.0), c64(0.0, 0.0), c64((-t).exp(), 0.0)),
        );
        let f = gauss_decompose(&g, RealForm::Su11).unwrap();
        assert!(f.x.report().max_abs <= 1e-15);
        assert!(f.y.report().max_abs <= 1e-15);
        assert!((f.phi.at(0, 0) - c64(2.0 * t, 0.0)).norm() <= 1e-14);
    }

    #[test]
    fn decompose_rejects_small_corner_and_bad_determinant() {
        let grid = small_grid();
        let one = c64(1.0, 0.0);
        // Unimodular with a vanishing lower-right corner.
        let offdiag = const_matrix_field(&grid, mat2(c64(0.0, 0.0), one, -one, c64(1e-9, 0.0)));
        match gauss_decompose(&offdiag, RealForm::Sl2R) {
            Err(Error::Decomposition(_)) => {}
            Err(e) => panic!("expected a regularity rejection, got {e:?}"),
            Ok(_) => panic!("expected a regularity rejection, got a factorization"),
        }
        let scaled = const_matrix_field(&grid, mat2(2.0 * one, c64(0.0, 0.0), c64(0.0, 0.0), one));
        match gauss_decompose(&scaled, RealForm::Sl2R) {
            Err(Error::Domain(_)) => {}
            Err(e) => panic!("expected a unimodularity rejection, got {e:?}"),
            Ok(_) => panic!("expected a unimodularity rejection, got a factorization"),
        }
    }

    #[test]
    fn negative_corner_round_trips_through_the_principal_log() {
        let grid = small_grid();
        let one = c64(1.0, 0.0);
        // d = -1: phi picks up an imaginary part and composition still inverts.
        let g = const_matrix_field(&grid, mat2(-one, one, c64(0.0, 0.0), -one));
        let f = gauss_decompose(&g, RealForm::Sl2R).unwrap();
        assert!(f.phi.at(2, 2).im.abs() > 1.0);
        let back = gauss_compose(&f);
        let diff = back.zip(&g, |a, b| a.clone() - b.clone());
        assert!(diff.report().max_abs <= 1e-13);
    }

    fn round_trip_field(entries: &[(C64, C64, C64)], sig: RealForm) -> f64 {
        let grid = Grid::square(0.5, 8).unwrap();
        let pool: RefCell<Vec<CMatrix>> = RefCell::new(
            entries
                .iter()
                .map(|&(a, b, c)| {
                    let d = (c64(1.0, 0.0) + b * c) / a;
                    let (b, c, d) = if d.norm() < 0.05 {
                        (c64(0.0, 0.0), c64(0.0, 0.0), c64(1.0, 0.0) / a)
                    } else {
                        (b, c, d)
                    };
                    mat2(a, b, c, d)
                })
                .collect(),
        );
        let g = GridField::sample(&grid, Matrix::zeros(2, 2), |_| {
            pool.borrow_mut().pop().expect("pool sized to the active count")
        });
        let f = gauss_decompose(&g, sig).unwrap();
        let back = gauss_compose(&f);
        back.zip(&g, |a, b| a.clone() - b.clone()).report().max_abs
    }

    proptest! {
        #[test]
        fn random_real_matrices_round_trip(
            raw in prop::collection::vec((-2.0f64..2.0, -1.5f64..1.5, -1.5f64..1.5), 64)
        ) {
            let entries: Vec<(C64, C64, C64)> = raw
                .iter()
                .map(|&(a, b, c)| {
                    let a = if a.abs() < 0.3 { 0.3 + a.abs() } else { a };
                    (c64(a, 0.0), c64(b, 0.0), c64(c, 0.0))
                })
                .collect();
            prop_assert!(round_trip_field(&entries, RealForm::Sl2R) <= 1e-12);
        }

        #[test]
        fn random_complex_matrices_round_trip(
            raw in prop::collection::vec(
                (-2.0f64..2.0, -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0),
                64,
            )
        ) {
            let entries: Vec<(C64, C64, C64)> = raw
                .iter()
                .map(|&(ar, ai, br, bi, cr, ci)| {
                    let ar = if ar.abs() < 0.3 { 0.3 + ar.abs() } else { ar };
                    (c64(ar, ai), c64(br, bi), c64(cr, ci))
                })
                .collect();
            prop_assert!(round_trip_field(&entries, RealForm::Su11) <= 1e-12);
        }

        #[test]
        fn real_coordinates_survive_and_keep_the_diagonal_positive(
            raw in prop::collection::vec((-1.5f64..1.5, -1.5f64..1.5, -1.5f64..1.5), 64),
            su11 in prop::bool::ANY,
        ) {
            let sig = if su11 { RealForm::Su11 } else { RealForm::Sl2R };
            let grid = Grid::square(0.5, 8).unwrap();
            let pool: RefCell<Vec<(f64, f64, f64)>> = RefCell::new(raw.clone());
            let g = GridField::sample(&grid, Matrix::zeros(2, 2), |_| {
                let (x, y, p) = pool.borrow_mut().pop().expect("pool sized to the active count");
                compose_point(sig, c64(x, 0.0), c64(y, 0.0), c64(p, 0.0))
            });
            let f = gauss_decompose(&g, sig).unwrap();
            // Real data comes back real, with a positive diagonal factor.
            prop_assert!(f.phi.map(|p| c64(p.im, 0.0)).report().max_abs <= 1e-12);
            prop_assert!(f.x.map(|v| c64(v.im, 0.0)).report().max_abs <= 1e-12);
            prop_assert!(f.y.map(|v| c64(v.im, 0.0)).report().max_abs <= 1e-12);
            for p in f.phi.values.iter() {
                prop_assert!((0.5 * *p).exp().re > 0.0);
            }
            let back = gauss_compose(&f);
            prop_assert!(back.zip(&g, |a, b| a.clone() - b.clone()).report().max_abs <= 1e-12);
        }
    }

    #[test]
    fn from_values_rejects_mismatched_grids() {
        let g1 = small_grid();
        let g2 = Grid::square(0.5, 11).unwrap();
        let zero = c64(0.0, 0.0);
        let a = GridField::sample(&g1, zero, |_| zero);
        let b = GridField::sample(&g2, zero, |_| zero);
        let c = GridField::sample(&g1, zero, |_| zero);
        assert!(matches!(
            GaussFields::from_values(RealForm::Sl2R, a, b, c),
            Err(Error::Shape(_))
        ));
    }

    fn harmonic_phi_fields(sig: RealForm, grid: &Arc<Grid>) -> GaussFields {
        let jets: GaussJetFn = Arc::new(|z| {
            let zero = Jet2::constant(c64(0.0, 0.0));
            (zero, zero, Jet2::var(z) + Jet2::var_bar(z))
        });
        GaussFields::from_jets(sig, grid, jets)
    }

    #[test]
    fn first_form_equations_vanish_on_decoupled_data() {
        let grid = small_grid();
        let f = harmonic_phi_fields(RealForm::Sl2R, &grid);
        let r = wzw_eom_residual(&f);
        assert!(r.max_abs() <= 1e-10);
    }

    #[test]
    fn first_form_equations_vanish_on_constants_through_differences() {
        let grid = small_grid();
        let one = c64(1.0, 0.0);
        let x = GridField::sample(&grid, one, |_| one);
        let y = GridField::sample(&grid, one, |_| one);
        let phi = GridField::sample(&grid, c64(0.0, 0.0), |_| c64(0.0, 0.0));
        let f = GaussFields::from_values(RealForm::Sl2R, x, y, phi).unwrap();
        let r = wzw_eom_residual(&f);
        assert!(r.max_abs() <= 1e-14);
        assert!(r.phi.grid.active_count() > 0);
    }

    #[test]
    fn second_form_flags_a_non_solution() {
        let grid = small_grid();
        let jets: GaussJetFn = Arc::new(|z| {
            let zero = Jet2::constant(c64(0.0, 0.0));
            (zero, zero, Jet2::var(z) * Jet2::var_bar(z))
        });
        let f = GaussFields::from_jets(RealForm::Su11, &grid, jets);
        let r = su11_eom_residual(&f);
        let off_by_one = r.phi.map(|v| v - c64(1.0, 0.0));
        assert!(off_by_one.report().max_abs <= 1e-12);
        assert!(r.x_conservation.report().max_abs <= 1e-14);
    }

    #[test]
    fn second_form_equations_vanish_on_decoupled_data() {
        let grid = small_grid();
        let f = harmonic_phi_fields(RealForm::Su11, &grid);
        assert!(su11_eom_residual(&f).max_abs() <= 1e-10);
    }

    #[test]
    fn energy_of_the_linear_solution_matches_the_closed_integral() {
        let grid = Grid::square(0.5, 17).unwrap();
        let f = harmonic_phi_fields(RealForm::Su11, &grid);
        let e1 = su11_energy(&f, 1.0);
        assert!((e1 + 0.5).abs() <= 1e-3);
        let e2 = su11_energy(&f, 2.0);
        assert!((e2 - 2.0 * e1).abs() <= 1e-12);
    }

    fn disk_phi() -> ScalarJetFn {
        Arc::new(|z| {
            let w = Jet2::constant(c64(1.0, 0.0)) + Jet2::var(z) * Jet2::var_bar(z);
            w.ln().scale(c64(-2.0, 0.0))
        })
    }

    #[test]
    fn constant_pair_reduction_hits_the_liouville_family() {
        let grid = small_grid();
        let nu = PolyField::constant(c64(0.5, 0.0));
        let mu = PolyField::constant(c64(2.0, 0.0));
        let phi = disk_phi();
        let r = orc_reduction(&nu, &mu, &phi, &grid, 1e-6).unwrap();
        match r.branch {
            OrcBranch::Constants { mu, nu } => {
                assert!((2.0 * mu * nu - c64(2.0, 0.0)).norm() <= 1e-15);
            }
            _ => panic!("constant data must select the constant branch"),
        }
        assert!(r.liouville.report().max_abs <= 1e-8);
        assert!(r.eom.max_abs() <= 1e-8);
        assert_eq!(r.closure_defect, 0.0);
        assert!(r.purity.is_none());
        assert!(r.coupling.map(|c| c - c64(2.0, 0.0)).report().max_abs <= 1e-15);
    }

    #[test]
    fn constant_pair_with_the_wrong_product_reports_a_residual() {
        let grid = small_grid();
        let nu = PolyField::constant(c64(2.0, 0.0));
        let mu = PolyField::constant(c64(1.0, 0.0));
        let phi = disk_phi();
        let r = orc_reduction(&nu, &mu, &phi, &grid, 1e-6).unwrap();
        // dzdzb phi = -2 e^phi against coupling 4: residual 2 e^phi, maximal
        // at the origin.
        assert!((r.liouville.report().max_abs - 2.0).abs() <= 1e-10);
    }

    #[test]
    fn constant_branch_bounds_the_full_system_by_the_liouville_residual() {
        let grid = Grid::square(0.5, 33).unwrap();
        let h = grid.hx();
        let nu = PolyField::constant(c64(1.0, 0.0));
        let mu = PolyField::constant(c64(1.0, 0.0));
        for t in [0.0, 0.25, 1.0] {
            let phi: ScalarJetFn = Arc::new(move |z| {
                let w = Jet2::constant(c64(1.0, 0.0)) + Jet2::var(z) * Jet2::var_bar(z);
                w.ln().scale(c64(-2.0, 0.0))
                    + (Jet2::var(z) + Jet2::var_bar(z)).scale(c64(0.2 * t, 0.0))
            });
            let r = orc_reduction(&nu, &mu, &phi, &grid, 1e-6).unwrap();
            let eps = r.liouville.report().max_abs;
            if t > 0.0 {
                assert!(eps > 0.01, "perturbed data should leave the solution family");
            }
            assert!(r.eom.max_abs() <= 2.0 * eps + 10.0 * h * h);
        }
    }

    // Holomorphic pair f = i z, g = z with phi depending on i(z^2 - zbar^2)/2.
    // Both slope forms close exactly and the Liouville equation holds, so the
    // rebuilt coordinates must satisfy the full system up to quadrature and
    // stencil error.
    fn pencil_phi() -> ScalarJetFn {
        Arc::new(|z| {
            let vz = Jet2::var(z);
            let vzb = Jet2::var_bar(z);
            let u = (vz * vz - vzb * vzb).scale(c64(0.0, 0.5));
            let cosh = (u.exp() + u.scale(c64(-1.0, 0.0)).exp()).scale(c64(0.5, 0.0));
            cosh.scale(c64(FRAC_1_SQRT_2, FRAC_1_SQRT_2)).ln().scale(c64(-2.0, 0.0))
        })
    }

    #[test]
    fn holomorphic_pair_reduction_rebuilds_a_solution() {
        let grid = Grid::square(0.5, 33).unwrap();
        let h = grid.hx();
        let f = PolyField::from_z_coeffs(&[c64(0.0, 0.0), c64(0.0, 1.0)]);
        let g = PolyField::from_z_coeffs(&[c64(0.0, 0.0), c64(1.0, 0.0)]);
        let phi = pencil_phi();
        let r = orc_reduction(&f, &g, &phi, &grid, 1e-6).unwrap();
        assert_eq!(r.branch, OrcBranch::Generic);
        let eps = r.liouville.report().max_abs;
        assert!(eps <= 1e-10, "the family solves its Liouville equation, eps = {eps:.3e}");
        assert!(r.purity.as_ref().unwrap().max_abs <= 1e-12);
        assert!(r.closure_defect <= 1e-8);
        // Coupling is M = 2 i z zbar.
        let expect = GridField::sample(&grid, c64(0.0, 0.0), |z| c64(0.0, 2.0) * z * z.conj());
        assert!(r.coupling.zip(&expect, |a, b| a - b).report().max_abs <= 1e-12);
        assert!(r.eom.max_abs() <= 2.0 * eps + 10.0 * h * h);
        let induced = r.induced.as_ref().unwrap();
        // x = -i tanh(u) + const, y = -tanh(u) + const with u = -2 Re(z) Im(z);
        // check against the closed forms relative to the base corner.
        let base = grid.point(0, 0);
        let u0 = -2.0 * base.re * base.im;
        let xi = induced.x.zip(
            &GridField::sample(&grid, c64(0.0, 0.0), |z| {
                let u = -2.0 * z.re * z.im;
                c64(0.0, -1.0) * c64(u.tanh() - u0.tanh(), 0.0)
            }),
            |a, b| a - b,
        );
        assert!(xi.report().max_abs <= 1e-8);
    }

    #[test]
    fn non_integrable_slopes_are_rejected() {
        let grid = small_grid();
        let f = PolyField::from_z_coeffs(&[c64(0.0, 0.0), c64(1.0, 0.0)]);
        let g = PolyField::constant(c64(1.0, 0.0));
        let phi = disk_phi();
        match orc_reduction(&f, &g, &phi, &grid, 1e-6) {
            Err(Error::Inconsistent(_)) => {}
            Err(e) => panic!("expected a closure rejection, got {e:?}"),
            Ok(_) => panic!("expected a closure rejection, got a reduction"),
        }
    }

    #[test]
    fn reduction_rejects_antiholomorphic_data() {
        let grid = small_grid();
        let mut f = PolyField::zero();
        f.set(0, 1, c64(1.0, 0.0));
        let g = PolyField::constant(c64(1.0, 0.0));
        assert!(matches!(
            orc_reduction(&f, &g, &disk_phi(), &grid, 1e-6),
            Err(Error::Domain(_))
        ));
    }

    proptest! {
        #[test]
        fn coupling_is_purely_imaginary(
            fc in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 4),
            gc in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 4),
            zr in -0.9f64..0.9,
            zi in -0.9f64..0.9,
        ) {
            let f = PolyField::from_z_coeffs(&fc.iter().map(|&(r, i)| c64(r, i)).collect::<Vec<_>>());
            let g = PolyField::from_z_coeffs(&gc.iter().map(|&(r, i)| c64(r, i)).collect::<Vec<_>>());
            let z = c64(zr, zi);
            let fv = f.eval(z);
            let gv = g.eval(z);
            let m = fv * gv.conj() - fv.conj() * gv;
            prop_assert!((m + m.conj()).norm() <= 1e-12);
            prop_assert!(m.re.abs() <= 1e-12);
        }
    }

    #[test]
    fn frame_check_is_silent_on_the_identity() {
        let grid = small_grid();
        let jets: GaussJetFn = Arc::new(|_| {
            let zero = Jet2::constant(c64(0.0, 0.0));
            (zero, zero, zero)
        });
        let f = GaussFields::from_jets(RealForm::Sl2R, &grid, jets);
        let r = bc_frame_check(&f, None).unwrap();
        assert!(r.conjugation_identity.max_abs <= 1e-15);
        assert!(r.off_diagonal.max_abs <= 1e-15);
        assert!(r.cartan_identity.max_abs <= 1e-15);
        assert!(r.diagonal_holomorphy.is_none());
    }

    #[test]
    fn frame_check_requires_jets() {
        let grid = small_grid();
        let zero = c64(0.0, 0.0);
        let x = GridField::sample(&grid, zero, |_| zero);
        let y = GridField::sample(&grid, zero, |_| zero);
        let p = GridField::sample(&grid, zero, |_| zero);
        let f = GaussFields::from_values(RealForm::Sl2R, x, y, p).unwrap();
        assert!(matches!(bc_frame_check(&f, None), Err(Error::Domain(_))));
    }

    // Constant-pair solution family: x = nu zbar / (1 + z zbar),
    // y = mu z / (1 + z zbar), phi = -2 ln(1 + z zbar) with mu nu = 1.
    fn constant_family_jets(mu: f64, nu: f64) -> GaussJetFn {
        Arc::new(move |z| {
            let w = Jet2::constant(c64(1.0, 0.0)) + Jet2::var(z) * Jet2::var_bar(z);
            let x = (Jet2::var_bar(z) * w.recip()).scale(c64(nu, 0.0));
            let y = (Jet2::var(z) * w.recip()).scale(c64(mu, 0.0));
            (x, y, w.ln().scale(c64(-2.0, 0.0)))
        })
    }

    #[test]
    fn constant_family_solves_the_first_form_exactly() {
        let grid = small_grid();
        let f = GaussFields::from_jets(RealForm::Sl2R, &grid, constant_family_jets(2.0, 0.5));
        assert!(wzw_eom_residual(&f).max_abs() <= 1e-12);
    }

    #[test]
    fn constant_family_through_differences_stays_inside_the_stencil_budget() {
        let grid = Grid::square(0.5, 33).unwrap();
        let h = grid.hx();
        let jets = constant_family_jets(2.0, 0.5);
        let exact = GaussFields::from_jets(RealForm::Sl2R, &grid, jets);
        let values = GaussFields::from_values(
            RealForm::Sl2R,
            exact.x.clone(),
            exact.y.clone(),
            exact.phi.clone(),
        )
        .unwrap();
        let r = wzw_eom_residual(&values);
        assert!(r.phi.grid.active_count() > 0);
        assert!(r.max_abs() <= 10.0 * h * h);
    }

    #[test]
    fn frame_check_ties_the_conjugated_commutator_to_the_current() {
        let grid = small_grid();
        let (mu, nu) = (2.0, 0.5);
        let f = GaussFields::from_jets(RealForm::Sl2R, &grid, constant_family_jets(mu, nu));
        let r = bc_frame_check(&f, None).unwrap();
        assert!(r.conjugation_identity.max_abs <= 1e-10);
        assert!(r.cartan_identity.max_abs <= 1e-12);
        // The conjugated commutator is upper triangular on this family:
        // diag(-mu nu, mu nu) with corner -2 nu zbar.
        assert!(r.lower_corner.max_abs <= 1e-12);
        let expect = GridField::sample(&grid, Matrix::zeros(2, 2), |z| {
            mat2(
                c64(-mu * nu, 0.0),
                -2.0 * nu * z.conj(),
                c64(0.0, 0.0),
                c64(mu * nu, 0.0),
            )
        });
        let diff = r.conjugated.zip(&expect, |a, b| a.clone() - b.clone());
        assert!(diff.report().max_abs <= 1e-10);
        // The corner does not vanish: the factor frame leaves a triangular
        // obstruction on this family.
        assert!(r.off_diagonal.max_abs > 0.1);
    }

    #[test]
    fn frame_check_commutator_vanishes_on_the_integrable_family() {
        let grid = small_grid();
        let phi = pencil_phi();
        let jets: GaussJetFn = Arc::new(move |z| {
            let vz = Jet2::var(z);
            let vzb = Jet2::var_bar(z);
            let u = (vz * vz - vzb * vzb).scale(c64(0.0, 0.5));
            let ep = u.exp();
            let em = u.scale(c64(-1.0, 0.0)).exp();
            let tanh = (ep - em) / (ep + em);
            (tanh.scale(c64(0.0, -1.0)), tanh.scale(c64(-1.0, 0.0)), phi(z))
        });
        let f = GaussFields::from_jets(RealForm::Su11, &grid, jets);
        assert!(su11_eom_residual(&f).max_abs() <= 1e-10);
        let r = bc_frame_check(&f, None).unwrap();
        assert!(r.off_diagonal.max_abs <= 1e-10);
        assert!(r.conjugation_identity.max_abs <= 1e-10);
        assert!(r.cartan_identity.max_abs <= 1e-12);
    }

    // Slot data built from a holomorphic pair with plain conjugate slots:
    // dz(x) = f e^phi, dzb(x) = conj(f) e^phi and likewise for y. The
    // Cartan coefficient of the commutator is then -M e^phi exactly.
    #[test]
    fn frame_check_diagonal_tracks_the_coupling() {
        let grid = small_grid();
        let fc = c64(2.0, 1.0);
        let gc = c64(1.0, -0.5);
        let m = fc * gc.conj() - fc.conj() * gc;
        let jets: GaussJetFn = Arc::new(move |z| {
            let w = Jet2::constant(c64(1.0, 0.0)) + Jet2::var(z) * Jet2::var_bar(z);
            let p = w.ln().scale(c64(-2.0, 0.0));
            let e = p.v.exp();
            let slot = |coef: C64| Jet2 {
                v: c64(0.0, 0.0),
                dz: coef * e,
                dzb: coef.conj() * e,
                dzzb: coef.conj() * p.dz * e,
            };
            (slot(fc), slot(gc), p)
        });
        let f = GaussFields::from_jets(RealForm::Su11, &grid, jets);
        let coupling = move |_z: C64| m;
        let r = bc_frame_check(&f, Some(&coupling)).unwrap();
        assert!(r.cartan_identity.max_abs <= 1e-12);
        let holo = r.diagonal_holomorphy.expect("coupling and commutator are nonzero");
        let h = grid.hx();
        assert!(holo.max_abs <= 10.0 * h * h);
        assert!(holo.points_used > 0);
        assert!(r.conjugation_identity.max_abs <= 1e-10);
    }
}

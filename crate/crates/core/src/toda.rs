//! Toda field data and the flat connections attached to it.
//!
//! Three layers live here.  `TodaData` carries conformal Toda fields for
//! sl(n) together with the first-order connection whose curvature sits in
//! the Cartan subalgebra; `CatFields` carries the conformal affine Toda
//! triple (phi, eta, xi) with its loop-algebra Lax pencil; the reduction
//! entry points turn abstract flat-pencil data into those field systems
//! and report every residual they can measure along the way.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_traits::{One, Zero};

use crate::affine::{adjoint_exp_conjugate, loop_bracket, AffineElement};
use crate::connection::Connection;
use crate::error::{Error, Result};
use crate::grid::{Grid, GridField, ResidualReport};
use crate::lie::{ChevalleyBasis, Root};
use crate::matrix::Matrix;
use crate::scalar::{c64, C64, Jet2};
use crate::JetMatrix;

/// Pointwise analytic scalar: value, both first derivatives, and the mixed
/// second derivative at the queried point.
pub type ScalarJetFn = Arc<dyn Fn(C64) -> Jet2>;

/// Jet of the z-derivative of `j`.  A mixed-order-two jet does not track
/// the holomorphic second derivative, so `dz` and `dzzb` of the result are
/// zero and must not be consumed downstream.
pub fn deriv_z(j: Jet2) -> Jet2 {
    Jet2 { v: j.dz, dz: C64::zero(), dzb: j.dzzb, dzzb: C64::zero() }
}

/// Jet of the zbar-derivative of `j`; the same truncation caveat applies
/// to `dzb` and `dzzb` of the result.
pub fn deriv_zbar(j: Jet2) -> Jet2 {
    Jet2 { v: j.dzb, dz: j.dzzb, dzb: C64::zero(), dzzb: C64::zero() }
}

fn zero_jet_fn() -> ScalarJetFn {
    Arc::new(|_| Jet2::zero())
}

/// Conformal Toda data: one scalar field per node of the Dynkin diagram
/// plus the two coupling constants.
pub struct TodaData {
    pub basis: ChevalleyBasis,
    pub phi: Vec<ScalarJetFn>,
    pub alpha: C64,
    pub beta: C64,
    kinv: Vec<Vec<C64>>,
}

impl TodaData {
    pub fn new(
        basis: ChevalleyBasis,
        phi: Vec<ScalarJetFn>,
        alpha: C64,
        beta: C64,
    ) -> Result<Self> {
        if beta.norm() == 0.0 {
            return Err(Error::Domain("coupling beta must be nonzero".into()));
        }
        if phi.len() != basis.rank {
            return Err(Error::Shape(format!(
                "{} fields supplied for rank {}",
                phi.len(),
                basis.rank
            )));
        }
        let ki = basis.cartan_inverse()?;
        let mut kinv = Vec::with_capacity(basis.rank);
        for i in 0..basis.rank {
            let mut row = Vec::with_capacity(basis.rank);
            for j in 0..basis.rank {
                let r = ki[(i, j)];
                row.push(c64(*r.numer() as f64 / *r.denom() as f64, 0.0));
            }
            kinv.push(row);
        }
        Ok(TodaData { basis, phi, alpha, beta, kinv })
    }

    pub fn rank(&self) -> usize {
        self.basis.rank
    }

    /// Linear combination psi_i = beta * sum_j (K^-1)_ij phi_j entering the
    /// diagonal part of the connection.
    pub fn psi_jet(&self, i: usize, z: C64) -> Jet2 {
        let mut acc = Jet2::zero();
        for j in 0..self.rank() {
            acc = acc + (self.phi[j])(z).scale(self.beta * self.kinv[i][j]);
        }
        acc
    }

    /// Field equation defect per node: dd phi_i - (alpha^2/beta) sum_j
    /// K_ij exp(beta phi_j).  Zero on solutions.
    pub fn residual(&self, grid: &Arc<Grid>) -> Vec<GridField<C64>> {
        let pref = self.alpha * self.alpha / self.beta;
        (0..self.rank())
            .map(|i| {
                GridField::sample(grid, C64::zero(), |z| {
                    let mut s = C64::zero();
                    for j in 0..self.rank() {
                        let k = c64(self.basis.cartan[(i, j)] as f64, 0.0);
                        s += k * (self.beta * (self.phi[j])(z).v).exp();
                    }
                    (self.phi[i])(z).dzzb - pref * s
                })
            })
            .collect()
    }

    /// First-order connection whose z-part is diagonal plus the raising
    /// generators and whose zbar-part is exponential lowering terms.  Its
    /// curvature lies in the Cartan subalgebra and encodes the field
    /// equations.
    pub fn connection(self: &Arc<Self>, grid: &Arc<Grid>) -> Connection {
        let data = self.clone();
        let rank = self.rank();
        let n = self.basis.n;
        let h: Vec<JetMatrix> = (0..rank).map(|i| data.basis.h_as::<Jet2>(i)).collect();
        let ep: Vec<JetMatrix> = (0..rank)
            .map(|i| data.basis.e_plus_as::<Jet2>(&Root::simple(rank, i)))
            .collect();
        let em: Vec<JetMatrix> = (0..rank)
            .map(|i| data.basis.e_minus_as::<Jet2>(&Root::simple(rank, i)))
            .collect();
        let alpha = self.alpha;
        let beta = self.beta;
        Connection::from_jets(grid, move |z| {
            let mut az = Matrix::<Jet2>::zeros(n, n);
            let mut azbar = Matrix::<Jet2>::zeros(n, n);
            for i in 0..rank {
                let dpsi = deriv_z(data.psi_jet(i, z));
                az = az + h[i].scale(dpsi) + ep[i].scale(Jet2::constant(alpha));
                let w = ((data.phi[i])(z).scale(beta)).exp().scale(alpha);
                azbar = azbar + em[i].scale(w);
            }
            (az, azbar)
        })
    }

    /// Curvature diagnostics: the Cartan coordinates of F must reproduce
    /// alpha^2 exp(beta phi_i) - dd psi_i, equivalently the inverse-Cartan
    /// image of the field-equation residuals, and everything off the
    /// Cartan directions must vanish.
    pub fn curvature_identity(self: &Arc<Self>, grid: &Arc<Grid>) -> Result<BTreeMap<String, ResidualReport>> {
        let conn = self.connection(grid);
        let curv = conn.curvature();
        let resid = self.residual(grid);
        let rank = self.rank();
        let mut vs_fields = GridField::sample(grid, C64::zero(), |_| C64::zero());
        let mut vs_residual = vs_fields.clone();
        let mut off_cartan = vs_fields.clone();
        for jy in 0..grid.ny {
            for ix in 0..grid.nx {
                if !grid.active(ix, jy) {
                    continue;
                }
                let z = grid.point(ix, jy);
                let coords = self.basis.decompose(curv.at(ix, jy))?;
                let idx = grid.idx(ix, jy);
                let mut worst_f = 0.0f64;
                let mut worst_r = 0.0f64;
                for i in 0..rank {
                    let psi = self.psi_jet(i, z);
                    let direct = self.alpha * self.alpha * (self.beta * (self.phi[i])(z).v).exp()
                        - psi.dzzb;
                    worst_f = worst_f.max((coords.h[i] - direct).norm());
                    let mut via_resid = C64::zero();
                    for j in 0..rank {
                        via_resid += self.kinv[i][j] * resid[j].values[idx];
                    }
                    via_resid *= -self.beta;
                    worst_r = worst_r.max((coords.h[i] - via_resid).norm());
                }
                vs_fields.values[idx] = c64(worst_f, 0.0);
                vs_residual.values[idx] = c64(worst_r, 0.0);
                off_cartan.values[idx] = c64(coords.max_plus().max(coords.max_minus()), 0.0);
            }
        }
        let mut out = BTreeMap::new();
        out.insert("h_vs_fields".into(), vs_fields.report());
        out.insert("h_vs_residual".into(), vs_residual.report());
        out.insert("off_cartan".into(), off_cartan.report());
        Ok(out)
    }
}

/// How the third conformal affine field is known.  The pencil reductions
/// can only reconstruct its mixed second derivative, which is all the
/// field equations consume; analytically given data carries full jets and
/// additionally supports building the Lax connection.
#[derive(Clone)]
pub enum XiField {
    Analytic(ScalarJetFn),
    Laplacian(Arc<dyn Fn(C64) -> C64>),
}

/// Conformal affine Toda triple for the sl(2) loop algebra.
#[derive(Clone)]
pub struct CatFields {
    pub phi: ScalarJetFn,
    pub eta: ScalarJetFn,
    pub xi: XiField,
}

/// Residuals of the three coupled field equations.
pub struct CatResidual {
    pub phi: GridField<C64>,
    pub eta: GridField<C64>,
    pub xi: GridField<C64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CatLimit {
    SinhGordon,
    Liouville,
}

impl CatFields {
    pub fn xi_laplacian(&self, z: C64) -> C64 {
        match &self.xi {
            XiField::Analytic(f) => f(z).dzzb,
            XiField::Laplacian(f) => f(z),
        }
    }

    /// dd phi - e^{2 phi} + e^{2 eta - 2 phi}, dd eta, and
    /// dd xi - e^{2 eta - 2 phi}.
    pub fn residual(&self, grid: &Arc<Grid>) -> CatResidual {
        let phi = GridField::sample(grid, C64::zero(), |z| {
            let p = (self.phi)(z);
            let e = (self.eta)(z);
            p.dzzb - (p.v * 2.0).exp() + (e.v * 2.0 - p.v * 2.0).exp()
        });
        let eta = GridField::sample(grid, C64::zero(), |z| (self.eta)(z).dzzb);
        let xi = GridField::sample(grid, C64::zero(), |z| {
            let p = (self.phi)(z);
            let e = (self.eta)(z);
            self.xi_laplacian(z) - (e.v * 2.0 - p.v * 2.0).exp()
        });
        CatResidual { phi, eta, xi }
    }

    /// Residual of the named degenerate regime, gated on the data actually
    /// being in that regime.
    pub fn limit_residual(&self, grid: &Arc<Grid>, which: CatLimit) -> Result<GridField<C64>> {
        match which {
            CatLimit::SinhGordon => {
                let sup = GridField::sample(grid, C64::zero(), |z| (self.eta)(z).v).report();
                if sup.max_abs > 1e-8 {
                    return Err(Error::Domain(format!(
                        "limit not applicable: |eta| reaches {:.3e}",
                        sup.max_abs
                    )));
                }
                Ok(GridField::sample(grid, C64::zero(), |z| {
                    let p = (self.phi)(z);
                    p.dzzb - (p.v * 2.0).exp() + (-p.v * 2.0).exp()
                }))
            }
            CatLimit::Liouville => {
                let sup = GridField::sample(grid, C64::zero(), |z| {
                    ((self.eta)(z).v * 2.0 - (self.phi)(z).v * 2.0).exp()
                })
                .report();
                if sup.max_abs > 1e-8 {
                    return Err(Error::Domain(format!(
                        "limit not applicable: screening term reaches {:.3e}",
                        sup.max_abs
                    )));
                }
                Ok(GridField::sample(grid, C64::zero(), |z| {
                    let p = (self.phi)(z);
                    p.dzzb - (p.v * 2.0).exp()
                }))
            }
        }
    }

    /// Loop-algebra Lax connection built by conjugating the constant
    /// raising and lowering slopes with exp of the diagonal field element.
    /// Needs analytic xi: the central coordinate of the z-part carries its
    /// holomorphic derivative.
    pub fn connection(&self) -> Result<AffineLax> {
        let phi = self.phi.clone();
        let eta = self.eta.clone();
        let xi = match &self.xi {
            XiField::Analytic(f) => f.clone(),
            XiField::Laplacian(_) => {
                return Err(Error::Domain(
                    "Lax connection needs analytic xi, only its laplacian is known".into(),
                ))
            }
        };
        let eval: Arc<dyn Fn(C64) -> Result<AffineLaxPoint>> = Arc::new(move |z| {
            let pj = phi(z);
            let ej = eta(z);
            let xj = xi(z);
            let half = Jet2::real(0.5);
            let mut diag = Matrix::<Jet2>::zeros(2, 2);
            diag[(0, 0)] = pj * half;
            diag[(1, 1)] = -(pj * half);
            let cap = AffineElement::from_term(0, diag)
                .with_c(xj * half)
                .with_d(ej);
            let dz_cap = map_element(&cap, deriv_z);
            let dzb_cap = map_element(&cap, deriv_zbar);

            let mut e_up = Matrix::<Jet2>::zeros(2, 2);
            e_up[(0, 1)] = Jet2::one();
            let mut e_dn = Matrix::<Jet2>::zeros(2, 2);
            e_dn[(1, 0)] = Jet2::one();

            let mut slope_z = AffineElement::from_term(0, e_up.clone());
            slope_z.add_term(1, e_dn.clone());
            let mut slope_zb = AffineElement::from_term(0, e_dn);
            slope_zb.add_term(-1, e_up);

            let az = dz_cap.add(&adjoint_exp_conjugate(&cap, &slope_z)?);
            let azbar = dzb_cap.neg().add(&adjoint_exp_conjugate(&cap.neg(), &slope_zb)?);
            Ok(AffineLaxPoint::from_jets(&az, &azbar))
        });
        Ok(AffineLax { n: 2, eval })
    }

    /// Two-path check: every coefficient row of the Lax curvature must be
    /// minus the matching field-equation residual, and every other row
    /// must vanish outright.
    pub fn curvature_identity(&self, grid: &Arc<Grid>) -> Result<BTreeMap<String, ResidualReport>> {
        let lax = self.connection()?;
        let rows = affine_curvature_rows(&lax, grid)?;
        let resid = self.residual(grid);
        let mut out = BTreeMap::new();
        out.insert(
            "h_vs_phi_row".into(),
            rows["deg0_h"].zip(&resid.phi, |a, b| a + b).report(),
        );
        out.insert(
            "d_vs_eta_row".into(),
            rows["d"].zip(&resid.eta, |a, b| a + *b * 2.0).report(),
        );
        out.insert(
            "c_vs_xi_row".into(),
            rows["c"].zip(&resid.xi, |a, b| a + b).report(),
        );
        out.insert(
            "deg0_offdiagonal".into(),
            rows["deg0_e_plus"].zip(&rows["deg0_e_minus"], |a, b| c64(a.norm().max(b.norm()), 0.0)).report(),
        );
        out.insert(
            "other_degrees".into(),
            rows["deg_plus1"].zip(&rows["deg_minus1"], |a, b| c64(a.norm().max(b.norm()), 0.0))
                .zip(&rows["deg_other"], |a, b| c64(a.re.max(b.norm()), 0.0))
                .report(),
        );
        Ok(out)
    }
}

/// One sampled point of a loop-algebra connection: both components plus
/// the cross derivatives the curvature needs.
pub struct AffineLaxPoint {
    pub az: AffineElement<C64>,
    pub az_dzbar: AffineElement<C64>,
    pub azbar: AffineElement<C64>,
    pub azbar_dz: AffineElement<C64>,
}

impl AffineLaxPoint {
    pub fn from_jets(az: &AffineElement<Jet2>, azbar: &AffineElement<Jet2>) -> Self {
        AffineLaxPoint {
            az: project_element(az, |j| j.v),
            az_dzbar: project_element(az, |j| j.dzb),
            azbar: project_element(azbar, |j| j.v),
            azbar_dz: project_element(azbar, |j| j.dz),
        }
    }
}

/// Loop-algebra connection given through a pointwise analytic evaluator.
pub struct AffineLax {
    pub n: usize,
    pub eval: Arc<dyn Fn(C64) -> Result<AffineLaxPoint>>,
}

fn map_element(e: &AffineElement<Jet2>, f: impl Fn(Jet2) -> Jet2 + Copy) -> AffineElement<Jet2> {
    let mut out = AffineElement::zero(e.n);
    for (&k, m) in &e.laurent {
        out.add_term(k, m.map(|j| f(*j)));
    }
    out.c = f(e.c);
    out.d = f(e.d);
    out
}

fn project_element(e: &AffineElement<Jet2>, f: impl Fn(&Jet2) -> C64 + Copy) -> AffineElement<C64> {
    let mut out = AffineElement::zero(e.n);
    for (&k, m) in &e.laurent {
        let pm = m.map(|j| f(j));
        if !pm.is_zero_matrix() {
            out.add_term(k, pm);
        }
    }
    out.c = f(&e.c);
    out.d = f(&e.d);
    out
}

/// Coefficient rows of the loop-algebra curvature
/// F = d_z Azbar - d_zbar Az + [Az, Azbar], sampled over the grid.
///
/// Keys: `deg0_h`, `deg0_e_plus`, `deg0_e_minus` for the degree-zero
/// matrix, `c` and `d` for the extension coordinates, `deg_plus1` and
/// `deg_minus1` for the Frobenius size of the neighbouring degrees, and
/// `deg_other` for everything beyond.
pub fn affine_curvature_rows(
    lax: &AffineLax,
    grid: &Arc<Grid>,
) -> Result<BTreeMap<String, GridField<C64>>> {
    if lax.n != 2 {
        return Err(Error::Shape("curvature rows are implemented for 2x2 loops".into()));
    }
    let zero = GridField::sample(grid, C64::zero(), |_| C64::zero());
    let mut h = zero.clone();
    let mut e_plus = zero.clone();
    let mut e_minus = zero.clone();
    let mut c_row = zero.clone();
    let mut d_row = zero.clone();
    let mut p1 = zero.clone();
    let mut m1 = zero.clone();
    let mut other = zero;
    for jy in 0..grid.ny {
        for ix in 0..grid.nx {
            if !grid.active(ix, jy) {
                continue;
            }
            let z = grid.point(ix, jy);
            let p = (lax.eval)(z)?;
            let f = p
                .azbar_dz
                .sub(&p.az_dzbar)
                .add(&loop_bracket(&p.az, &p.azbar));
            let idx = grid.idx(ix, jy);
            let m0 = f.coefficient(0);
            h.values[idx] = m0[(0, 0)];
            e_plus.values[idx] = m0[(0, 1)];
            e_minus.values[idx] = m0[(1, 0)];
            c_row.values[idx] = f.c;
            d_row.values[idx] = f.d;
            p1.values[idx] = c64(f.coefficient(1).max_abs(), 0.0);
            m1.values[idx] = c64(f.coefficient(-1).max_abs(), 0.0);
            let mut worst = 0.0f64;
            for (&k, m) in &f.laurent {
                if k.abs() >= 2 {
                    worst = worst.max(m.max_abs());
                }
            }
            other.values[idx] = c64(worst, 0.0);
        }
    }
    let mut out = BTreeMap::new();
    out.insert("deg0_h".into(), h);
    out.insert("deg0_e_plus".into(), e_plus);
    out.insert("deg0_e_minus".into(), e_minus);
    out.insert("c".into(), c_row);
    out.insert("d".into(), d_row);
    out.insert("deg_plus1".into(), p1);
    out.insert("deg_minus1".into(), m1);
    out.insert("deg_other".into(), other);
    Ok(out)
}

/// Scalar coefficients of the dressing derivative
/// W_z = alpha E_+ + beta H + gamma E_- + delta c and its zbar companion
/// (primed entries).
#[derive(Clone)]
pub struct ThetaCoeffs {
    pub alpha: ScalarJetFn,
    pub beta: ScalarJetFn,
    pub gamma: ScalarJetFn,
    pub delta: ScalarJetFn,
    pub alpha_p: ScalarJetFn,
    pub beta_p: ScalarJetFn,
    pub gamma_p: ScalarJetFn,
    pub delta_p: ScalarJetFn,
}

/// Chiral-pair input: holomorphic-weight field on the z side, its partner
/// on the zbar side, and the dressing coefficients.
#[derive(Clone)]
pub struct Theorem2Input {
    pub f: ScalarJetFn,
    pub f_p: ScalarJetFn,
    pub theta: ThetaCoeffs,
}

pub struct Theorem2Reduction {
    pub cat: CatFields,
    /// Hypothesis residuals that were gated on entry.
    pub constraint_reports: BTreeMap<String, ResidualReport>,
    /// Field-equation rows of the assembled triple.
    pub cat_reports: BTreeMap<String, ResidualReport>,
    /// Coefficient rows of the loop-pencil curvature.
    pub pencil_reports: BTreeMap<String, ResidualReport>,
    /// Path integral of the central one-form, informational only.
    pub tau: GridField<C64>,
    /// Per-cell closure defect of that one-form against the product f f';
    /// this is the central curvature row measured by quadrature.
    pub closure_defect: GridField<C64>,
    pub branch_jump: bool,
}

fn branch_jumps(grid: &Arc<Grid>, field: &GridField<C64>) -> bool {
    for jy in 0..grid.ny {
        for ix in 0..grid.nx {
            if !grid.active(ix, jy) {
                continue;
            }
            let v = field.at(ix, jy).im;
            if ix + 1 < grid.nx && grid.active(ix + 1, jy)
                && (field.at(ix + 1, jy).im - v).abs() > std::f64::consts::PI
            {
                return true;
            }
            if jy + 1 < grid.ny && grid.active(ix, jy + 1)
                && (field.at(ix, jy + 1).im - v).abs() > std::f64::consts::PI
            {
                return true;
            }
        }
    }
    false
}

/// Simpson quadrature of delta dz + delta' dzb along one axis-aligned
/// edge from `z0` with complex step `step` (real or imaginary).
fn edge_integral(delta: &ScalarJetFn, delta_p: &ScalarJetFn, z0: C64, step: C64) -> C64 {
    let g = |z: C64| delta(z).v * step + delta_p(z).v * step.conj();
    (g(z0) + g(z0 + step * 0.5) * 4.0 + g(z0 + step)) / 6.0
}

/// Reduce chiral-pair data to the conformal affine triple, checking the
/// hypotheses on entry and measuring every residual the reduction is
/// supposed to kill.
pub fn theorem2_reduce(
    input: &Theorem2Input,
    grid: &Arc<Grid>,
    gate_tol: f64,
) -> Result<Theorem2Reduction> {
    if grid.active_count() != grid.nx * grid.ny {
        return Err(Error::Domain("reduction needs a full rectangular grid".into()));
    }
    let f = input.f.clone();
    let fp = input.f_p.clone();
    let th = input.theta.clone();

    let mut constraint_reports = BTreeMap::new();
    let gates: [(&str, Box<dyn Fn(C64) -> C64>); 4] = [
        ("dz_f_prime_transport", {
            let fp = fp.clone();
            let b = th.beta.clone();
            Box::new(move |z| fp(z).dz + b(z).v * fp(z).v * 2.0)
        }),
        ("dzbar_f_transport", {
            let f = f.clone();
            let bp = th.beta_p.clone();
            Box::new(move |z| f(z).dzb - bp(z).v * f(z).v * 2.0)
        }),
        ("alpha_matches_f", {
            let f = f.clone();
            let a = th.alpha.clone();
            Box::new(move |z| a(z).v - f(z).v)
        }),
        ("gamma_prime_matches_f_prime", {
            let fp = fp.clone();
            let gp = th.gamma_p.clone();
            Box::new(move |z| gp(z).v - fp(z).v)
        }),
    ];
    for (name, g) in gates {
        let rep = GridField::sample(grid, C64::zero(), &g).report();
        if !rep.passes(gate_tol) {
            return Err(Error::Domain(format!(
                "hypothesis {name} fails: residual {:.3e} exceeds {gate_tol:.1e}",
                rep.max_abs
            )));
        }
        constraint_reports.insert(name.to_string(), rep);
    }
    for (name, g) in [("f", f.clone()), ("f_prime", fp.clone()), ("gamma", th.gamma.clone()), ("alpha_prime", th.alpha_p.clone())] {
        let mut lo = f64::INFINITY;
        for jy in 0..grid.ny {
            for ix in 0..grid.nx {
                lo = lo.min(g(grid.point(ix, jy)).v.norm());
            }
        }
        if lo < 1e-8 {
            return Err(Error::Domain(format!(
                "{name} vanishes on the grid (min modulus {lo:.3e}), logarithms are unavailable"
            )));
        }
    }

    let phi_c: ScalarJetFn = {
        let f = f.clone();
        let fp = fp.clone();
        Arc::new(move |z| (f(z).ln() + fp(z).ln()) * Jet2::real(0.5))
    };
    let eta_c: ScalarJetFn = {
        let f = f.clone();
        let fp = fp.clone();
        let g = th.gamma.clone();
        let ap = th.alpha_p.clone();
        Arc::new(move |z| {
            (g(z).ln() + f(z).ln() + ap(z).ln() + fp(z).ln()) * Jet2::real(0.5)
        })
    };
    let xi_lap: Arc<dyn Fn(C64) -> C64> = {
        let d = th.delta.clone();
        let dp = th.delta_p.clone();
        let phi_c = phi_c.clone();
        Arc::new(move |z| d(z).dzb - dp(z).dz - phi_c(z).dzzb)
    };
    let cat = CatFields {
        phi: phi_c.clone(),
        eta: eta_c.clone(),
        xi: XiField::Laplacian(xi_lap),
    };

    let branch_jump = {
        let lf = GridField::sample(grid, C64::zero(), |z| f(z).ln().v);
        let lfp = GridField::sample(grid, C64::zero(), |z| fp(z).ln().v);
        let lg = GridField::sample(grid, C64::zero(), |z| (th.gamma)(z).ln().v);
        let lap = GridField::sample(grid, C64::zero(), |z| (th.alpha_p)(z).ln().v);
        branch_jumps(grid, &lf)
            || branch_jumps(grid, &lfp)
            || branch_jumps(grid, &lg)
            || branch_jumps(grid, &lap)
    };

    let resid = cat.residual(grid);
    let mut cat_reports = BTreeMap::new();
    cat_reports.insert("phi_equation".into(), resid.phi.report());
    cat_reports.insert("eta_equation".into(), resid.eta.report());
    cat_reports.insert("xi_equation".into(), resid.xi.report());

    let lax = {
        let f = f.clone();
        let fp = fp.clone();
        let th = th.clone();
        let eval: Arc<dyn Fn(C64) -> Result<AffineLaxPoint>> = Arc::new(move |z| {
            let half = Jet2::real(0.5);
            let phi2_dz = deriv_z(fp(z).ln());
            let phi1_dzb = deriv_zbar(f(z).ln());
            let mut m_z = Matrix::<Jet2>::zeros(2, 2);
            m_z[(0, 0)] = phi2_dz * half;
            m_z[(1, 1)] = -(phi2_dz * half);
            m_z[(1, 0)] = -(th.gamma)(z);
            let mut az = AffineElement::from_term(0, m_z).with_c(-(th.delta)(z));
            let mut low = Matrix::<Jet2>::zeros(2, 2);
            low[(0, 1)] = -f(z);
            az.add_term(-1, low);

            let mut m_zb = Matrix::<Jet2>::zeros(2, 2);
            m_zb[(0, 0)] = -(phi1_dzb * half);
            m_zb[(1, 1)] = phi1_dzb * half;
            m_zb[(0, 1)] = -(th.alpha_p)(z);
            let mut azbar = AffineElement::from_term(0, m_zb).with_c(-(th.delta_p)(z));
            let mut up = Matrix::<Jet2>::zeros(2, 2);
            up[(1, 0)] = -fp(z);
            azbar.add_term(1, up);
            Ok(AffineLaxPoint::from_jets(&az, &azbar))
        });
        AffineLax { n: 2, eval }
    };
    let rows = affine_curvature_rows(&lax, grid)?;
    let mut pencil_reports = BTreeMap::new();
    for (k, v) in &rows {
        pencil_reports.insert(k.clone(), v.report());
    }

    let base = (grid.nx / 2, grid.ny / 2);
    let (tau, closure_defect) = central_potential(&th.delta, &th.delta_p, &f, &fp, grid, base);

    Ok(Theorem2Reduction {
        cat,
        constraint_reports,
        cat_reports,
        pencil_reports,
        tau,
        closure_defect,
        branch_jump,
    })
}

/// Staircase integral of the central one-form (x direction first, then y)
/// and the per-cell closure defect against the product f f'.
fn central_potential(
    delta: &ScalarJetFn,
    delta_p: &ScalarJetFn,
    f: &ScalarJetFn,
    fp: &ScalarJetFn,
    grid: &Arc<Grid>,
    base: (usize, usize),
) -> (GridField<C64>, GridField<C64>) {
    let hx = c64(grid.hx(), 0.0);
    let hy = c64(0.0, grid.hy());
    let mut tau = GridField::sample(grid, C64::zero(), |_| C64::zero());
    let (bx, by) = base;
    for ix in (0..bx).rev() {
        let z = grid.point(ix + 1, by);
        let step = tau.at(ix + 1, by) - edge_integral(delta, delta_p, z - hx, hx);
        tau.values[grid.idx(ix, by)] = step;
    }
    for ix in bx + 1..grid.nx {
        let z = grid.point(ix - 1, by);
        let step = *tau.at(ix - 1, by) + edge_integral(delta, delta_p, z, hx);
        tau.values[grid.idx(ix, by)] = step;
    }
    for ix in 0..grid.nx {
        for jy in (0..by).rev() {
            let z = grid.point(ix, jy + 1);
            let step = tau.at(ix, jy + 1) - edge_integral(delta, delta_p, z - hy, hy);
            tau.values[grid.idx(ix, jy)] = step;
        }
        for jy in by + 1..grid.ny {
            let z = grid.point(ix, jy - 1);
            let step = *tau.at(ix, jy - 1) + edge_integral(delta, delta_p, z, hy);
            tau.values[grid.idx(ix, jy)] = step;
        }
    }
    let mut defect = GridField::sample(grid, C64::zero(), |_| C64::zero());
    let area = c64(0.0, 2.0) * grid.hx() * grid.hy();
    for jy in 0..grid.ny - 1 {
        for ix in 0..grid.nx - 1 {
            let z00 = grid.point(ix, jy);
            let loop_int = edge_integral(delta, delta_p, z00, hx)
                + edge_integral(delta, delta_p, z00 + hx, hy)
                + edge_integral(delta, delta_p, z00 + hx + hy, -hx)
                + edge_integral(delta, delta_p, z00 + hy, -hy);
            let zc = z00 + (hx + hy) * 0.5;
            defect.values[grid.idx(ix, jy)] = loop_int / area - f(zc).v * fp(zc).v;
        }
    }
    (tau, defect)
}

/// Exact chiral-pair instance: exponentials of a degree-one holomorphic
/// weight and its conjugate, with the dressing coefficients that make
/// every hypothesis and every curvature row vanish identically.
pub fn theorem2_generator(a1: C64, b1: C64, grid: &Arc<Grid>) -> Result<Theorem2Input> {
    if a1.norm() == 0.0 {
        return Err(Error::Domain("weight slope must be nonzero".into()));
    }
    let mut r_max = 0.0f64;
    for jy in 0..grid.ny {
        for ix in 0..grid.nx {
            if grid.active(ix, jy) {
                r_max = r_max.max(grid.point(ix, jy).norm());
            }
        }
    }
    if a1.norm() * r_max + b1.norm() > 0.95 * std::f64::consts::PI {
        return Err(Error::Domain(
            "weight is large enough to cross the logarithm branch cut".into(),
        ));
    }
    let a2 = a1.conj();
    let b2 = b1.conj();
    let f: ScalarJetFn =
        Arc::new(move |z| (Jet2::var(z).scale(a1) + Jet2::constant(b1)).exp());
    let fp: ScalarJetFn =
        Arc::new(move |z| (Jet2::var_bar(z).scale(a2) + Jet2::constant(b2)).exp());
    let delta: ScalarJetFn = {
        let f = f.clone();
        let fp = fp.clone();
        Arc::new(move |z| (f(z) * fp(z)).scale(a2.finv()))
    };
    let theta = ThetaCoeffs {
        alpha: f.clone(),
        beta: zero_jet_fn(),
        gamma: f.clone(),
        delta,
        alpha_p: fp.clone(),
        beta_p: zero_jet_fn(),
        gamma_p: fp.clone(),
        delta_p: zero_jet_fn(),
    };
    Ok(Theorem2Input { f, f_p: fp, theta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::ChevalleyBasis;

    fn sl2_solution() -> Arc<TodaData> {
        let basis = ChevalleyBasis::sl(2).unwrap();
        let phi: ScalarJetFn = Arc::new(|z| {
            ((Jet2::one() + Jet2::var(z) * Jet2::var_bar(z)).ln()).scale(c64(-2.0, 0.0))
        });
        Arc::new(TodaData::new(basis, vec![phi], c64(0.0, 1.0), c64(1.0, 0.0)).unwrap())
    }

    #[test]
    fn zero_coupling_is_rejected() {
        let basis = ChevalleyBasis::sl(2).unwrap();
        let err = TodaData::new(basis, vec![zero_jet_fn()], C64::one(), C64::zero());
        assert!(matches!(err, Err(Error::Domain(_))));
    }

    #[test]
    fn field_count_must_match_rank() {
        let basis = ChevalleyBasis::sl(3).unwrap();
        let err = TodaData::new(basis, vec![zero_jet_fn()], C64::one(), C64::one());
        assert!(matches!(err, Err(Error::Shape(_))));
    }

    #[test]
    fn radial_solution_has_vanishing_residual() {
        let data = sl2_solution();
        let grid = Grid::square(1.5, 24).unwrap();
        let r = data.residual(&grid);
        assert!(r[0].report().max_abs < 1e-12);
    }

    #[test]
    fn radial_solution_connection_is_flat() {
        let data = sl2_solution();
        let grid = Grid::square(1.5, 24).unwrap();
        let conn = data.connection(&grid);
        let worst = conn.curvature().map(|m| c64(m.max_abs(), 0.0)).report();
        assert!(worst.max_abs < 1e-8, "curvature {:.3e}", worst.max_abs);
    }

    #[test]
    fn cartan_rows_track_the_field_equations_off_shell() {
        let basis = ChevalleyBasis::sl(3).unwrap();
        let p1: ScalarJetFn = Arc::new(|z| {
            Jet2::var(z).scale(c64(0.3, 0.1)) + Jet2::var_bar(z).scale(c64(0.2, 0.0))
                + (Jet2::var(z) * Jet2::var_bar(z)).scale(c64(0.1, -0.05))
        });
        let p2: ScalarJetFn = Arc::new(|z| {
            Jet2::var(z).scale(c64(-0.2, 0.05)) + (Jet2::var(z) * Jet2::var_bar(z)).scale(c64(0.12, 0.02))
        });
        let data = Arc::new(
            TodaData::new(basis, vec![p1, p2], c64(0.7, 0.2), c64(1.3, -0.4)).unwrap(),
        );
        let grid = Grid::square(1.0, 16).unwrap();
        let reports = data.curvature_identity(&grid).unwrap();
        assert!(reports["h_vs_fields"].max_abs < 1e-12);
        assert!(reports["h_vs_residual"].max_abs < 1e-9);
        assert!(reports["off_cartan"].max_abs < 1e-12);
    }

    fn liouville_cat() -> CatFields {
        let phi: ScalarJetFn = Arc::new(|z| {
            -((Jet2::one() - Jet2::var(z) * Jet2::var_bar(z)).ln())
        });
        let eta: ScalarJetFn = Arc::new(|_| Jet2::real(-20.0));
        CatFields { phi, eta, xi: XiField::Analytic(zero_jet_fn()) }
    }

    #[test]
    fn screened_radial_data_solves_all_three_equations() {
        let cat = liouville_cat();
        let grid = Grid::square(0.6, 20).unwrap();
        let r = cat.residual(&grid);
        assert!(r.phi.report().max_abs < 1e-12);
        assert!(r.eta.report().max_abs < 1e-15);
        assert!(r.xi.report().max_abs < 1e-12);
    }

    #[test]
    fn screening_limit_gate_and_residual() {
        let cat = liouville_cat();
        let grid = Grid::square(0.6, 20).unwrap();
        let lim = cat.limit_residual(&grid, CatLimit::Liouville).unwrap();
        assert!(lim.report().max_abs < 1e-12);
        assert!(matches!(
            cat.limit_residual(&grid, CatLimit::SinhGordon),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn symmetric_limit_matches_full_phi_row_when_eta_vanishes() {
        let phi: ScalarJetFn = Arc::new(|z| {
            Jet2::var(z).scale(c64(0.2, 0.1)) + (Jet2::var(z) * Jet2::var_bar(z)).scale(c64(0.15, 0.0))
        });
        let cat = CatFields { phi, eta: zero_jet_fn(), xi: XiField::Analytic(zero_jet_fn()) };
        let grid = Grid::square(0.8, 16).unwrap();
        let full = cat.residual(&grid);
        let lim = cat.limit_residual(&grid, CatLimit::SinhGordon).unwrap();
        let diff = full.phi.zip(&lim, |a, b| a - b).report();
        assert!(diff.max_abs <= 1e-14);
    }

    #[test]
    fn lax_rows_reproduce_the_equation_residuals() {
        let cat = liouville_cat();
        let grid = Grid::square(0.6, 16).unwrap();
        let reports = cat.curvature_identity(&grid).unwrap();
        for (name, rep) in &reports {
            assert!(rep.max_abs < 1e-12, "{name}: {:.3e}", rep.max_abs);
        }
    }

    #[test]
    fn lax_rows_track_residuals_off_shell() {
        let phi: ScalarJetFn = Arc::new(|z| {
            Jet2::var(z).scale(c64(0.31, -0.12)) + (Jet2::var(z) * Jet2::var_bar(z)).scale(c64(0.07, 0.2))
        });
        let eta: ScalarJetFn = Arc::new(|z| (Jet2::var(z) * Jet2::var_bar(z)).scale(c64(0.11, 0.05)));
        let xi: ScalarJetFn = Arc::new(|z| Jet2::var_bar(z).scale(c64(0.4, 0.0)));
        let cat = CatFields { phi, eta, xi: XiField::Analytic(xi) };
        let grid = Grid::square(0.7, 12).unwrap();
        let reports = cat.curvature_identity(&grid).unwrap();
        for (name, rep) in &reports {
            assert!(rep.max_abs < 1e-12, "{name}: {:.3e}", rep.max_abs);
        }
    }

    #[test]
    fn chiral_pair_reduces_to_a_solution() {
        let grid = Grid::square(0.8, 24).unwrap();
        let input = theorem2_generator(c64(0.4, 0.15), c64(0.1, -0.05), &grid).unwrap();
        let red = theorem2_reduce(&input, &grid, 1e-10).unwrap();
        assert!(!red.branch_jump);
        for (name, rep) in red.cat_reports.iter().chain(red.pencil_reports.iter()) {
            assert!(rep.max_abs < 1e-10, "{name}: {:.3e}", rep.max_abs);
        }
        // The defect compares a cell average against a center value, so it
        // carries an O(h^2) quadrature floor even on exact data.
        let h = grid.hx();
        let defect = red.closure_defect.report();
        assert!(defect.max_abs < 10.0 * h * h, "closure defect {:.3e}", defect.max_abs);
        let tau_span = red.tau.report();
        assert!(tau_span.max_abs.is_finite() && tau_span.max_abs > 0.0);
    }

    #[test]
    fn broken_hypothesis_is_rejected() {
        let grid = Grid::square(0.8, 16).unwrap();
        let mut input = theorem2_generator(c64(0.4, 0.15), c64(0.1, -0.05), &grid).unwrap();
        let fp = input.f_p.clone();
        input.theta.gamma_p = Arc::new(move |z| fp(z).scale(c64(2.0, 0.0)));
        let err = theorem2_reduce(&input, &grid, 1e-10);
        match err {
            Err(Error::Domain(msg)) => assert!(msg.contains("gamma_prime"), "{msg}"),
            Err(other) => panic!("expected domain error, got {other:?}"),
            Ok(_) => panic!("expected domain error, reduction succeeded"),
        }
    }

    #[test]
    fn generator_rejects_branch_crossing_weights() {
        let grid = Grid::square(1.5, 16).unwrap();
        assert!(matches!(
            theorem2_generator(c64(2.0, 0.0), C64::zero(), &grid),
            Err(Error::Domain(_))
        ));
    }
}

//! Recovery of affine Toda data from flat pencils of triangular shape.
//!
//! A pencil qualifies when one base component is lower triangular, the
//! other upper triangular, and both deflection components are strictly
//! off-diagonal.  The coefficient equations of its curvature then close
//! on logarithmic transport identities for the root coefficients, a
//! Cartan balance row, a pair of chiral products, and one second-order
//! equation per simple root.  Everything here measures those statements
//! on sampled data; nothing assumes the input is actually flat.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_traits::Zero;

use crate::connection::{Connection, Pencil};
use crate::error::{Error, Result};
use crate::grid::{Grid, GridField, ResidualReport};
use crate::lie::{ChevalleyBasis, Root};
use crate::matrix::Matrix;
use crate::scalar::{c64, C64, Jet2};
use crate::toda::{deriv_z, deriv_zbar};
use crate::CMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Result4Orientation {
    /// Base z component lower triangular, zbar component upper.
    Canonical,
    /// Base z component upper triangular, zbar component lower.
    Mirrored,
}

/// Verdict of the admissibility test, with the coordinates that break it.
#[derive(Debug)]
pub struct Result4Shape {
    pub admissible: bool,
    pub orientation: Option<Result4Orientation>,
    pub offending: Vec<String>,
    /// Largest coordinate over all components, the reference for the
    /// relative threshold.
    pub scale: f64,
}

struct Extrema {
    h: f64,
    plus: f64,
    minus: f64,
}

fn extrema(basis: &ChevalleyBasis, grid: &Arc<Grid>, vals: &[CMatrix]) -> Result<Extrema> {
    let mut out = Extrema { h: 0.0, plus: 0.0, minus: 0.0 };
    for jy in 0..grid.ny {
        for ix in 0..grid.nx {
            if !grid.active(ix, jy) {
                continue;
            }
            let coords = basis.decompose(&vals[grid.idx(ix, jy)])?;
            out.h = out.h.max(coords.max_h());
            out.plus = out.plus.max(coords.max_plus());
            out.minus = out.minus.max(coords.max_minus());
        }
    }
    Ok(out)
}

/// Decide whether the pencil has the triangular shape the reduction
/// needs, in either orientation.  `tol` is relative to the largest
/// coordinate present.
pub fn result4_shape_check(
    p: &Pencil,
    basis: &ChevalleyBasis,
    tol: f64,
) -> Result<Result4Shape> {
    let az = extrema(basis, &p.a.grid, &p.a.az)?;
    let azbar = extrema(basis, &p.a.grid, &p.a.azbar)?;
    let bz = extrema(basis, &p.b.grid, &p.b.az)?;
    let bzbar = extrema(basis, &p.b.grid, &p.b.azbar)?;
    let scale = [&az, &azbar, &bz, &bzbar]
        .iter()
        .map(|e| e.h.max(e.plus).max(e.minus))
        .fold(0.0f64, f64::max);
    let thresh = tol * (1.0 + scale);

    let mut common = Vec::new();
    if bz.h > thresh {
        common.push(format!("deflection z component has a Cartan coordinate ({:.3e})", bz.h));
    }
    if bzbar.h > thresh {
        common.push(format!(
            "deflection zbar component has a Cartan coordinate ({:.3e})",
            bzbar.h
        ));
    }

    let canonical: Vec<String> = [
        (az.plus, "base z component has raising coordinates"),
        (azbar.minus, "base zbar component has lowering coordinates"),
    ]
    .iter()
    .filter(|(v, _)| *v > thresh)
    .map(|(v, m)| format!("{m} ({v:.3e})"))
    .collect();
    let mirrored: Vec<String> = [
        (az.minus, "base z component has lowering coordinates"),
        (azbar.plus, "base zbar component has raising coordinates"),
    ]
    .iter()
    .filter(|(v, _)| *v > thresh)
    .map(|(v, m)| format!("{m} ({v:.3e})"))
    .collect();

    let (orientation, mut offending) = if common.is_empty() && canonical.is_empty() {
        (Some(Result4Orientation::Canonical), Vec::new())
    } else if common.is_empty() && mirrored.is_empty() {
        (Some(Result4Orientation::Mirrored), Vec::new())
    } else if canonical.len() <= mirrored.len() {
        (None, canonical)
    } else {
        (None, mirrored)
    };
    offending.extend(common);
    Ok(Result4Shape { admissible: orientation.is_some(), orientation, offending, scale })
}

/// Per-direction coordinate grids of one component, restricted to simple
/// roots; coordinates on higher roots are folded into a scalar field so
/// their presence is visible without being silently consumed.
struct CoordGrids {
    h: Vec<GridField<C64>>,
    plus: Vec<GridField<C64>>,
    minus: Vec<GridField<C64>>,
    nonsimple: GridField<C64>,
}

fn coordinate_grids(
    basis: &ChevalleyBasis,
    grid: &Arc<Grid>,
    vals: &[CMatrix],
) -> Result<CoordGrids> {
    let rank = basis.rank;
    let zero = GridField::sample(grid, C64::zero(), |_| C64::zero());
    let mut out = CoordGrids {
        h: vec![zero.clone(); rank],
        plus: vec![zero.clone(); rank],
        minus: vec![zero.clone(); rank],
        nonsimple: zero,
    };
    for jy in 0..grid.ny {
        for ix in 0..grid.nx {
            if !grid.active(ix, jy) {
                continue;
            }
            let idx = grid.idx(ix, jy);
            let coords = basis.decompose(&vals[idx])?;
            for i in 0..rank {
                out.h[i].values[idx] = coords.h[i];
                let alpha = Root::simple(rank, i);
                out.plus[i].values[idx] = coords.plus_coeff(&alpha);
                out.minus[i].values[idx] = coords.minus_coeff(&alpha);
            }
            let mut worst = 0.0f64;
            for (alpha, v) in coords.e_plus.iter().chain(coords.e_minus.iter()) {
                if !alpha.is_simple() {
                    worst = worst.max(v.norm());
                }
            }
            out.nonsimple.values[idx] = c64(worst, 0.0);
        }
    }
    Ok(out)
}

fn deriv_grid(
    grid: &Arc<Grid>,
    derivs: &Option<Vec<CMatrix>>,
    pick: impl Fn(&CMatrix) -> C64,
) -> Result<GridField<C64>> {
    let d = derivs.as_ref().ok_or_else(|| {
        Error::Domain(
            "reduction needs analytic cross derivatives; build the connections from jets".into(),
        )
    })?;
    let mut out = GridField::sample(grid, C64::zero(), |_| C64::zero());
    for jy in 0..grid.ny {
        for ix in 0..grid.nx {
            if grid.active(ix, jy) {
                out.values[grid.idx(ix, jy)] = pick(&d[grid.idx(ix, jy)]);
            }
        }
    }
    Ok(out)
}

/// Everything the reduction recovers, together with the residual of each
/// statement it rests on.
pub struct Result4Reduction {
    pub orientation: Result4Orientation,
    pub roots: Vec<Root>,
    /// Logarithm of the chiral ratio per simple root; purely diagnostic,
    /// the residual itself is computed branch-free from the ratio.
    pub phi: Vec<GridField<C64>>,
    /// Holomorphic chiral product per simple root.
    pub eta_plus: Vec<GridField<C64>>,
    /// Anti-holomorphic chiral product per simple root.
    pub eta_minus: Vec<GridField<C64>>,
    pub reports: BTreeMap<String, ResidualReport>,
    pub branch_jump: bool,
}

/// Run the reduction on an admissible pencil.  The connections must carry
/// analytic cross derivatives: all transport identities are evaluated
/// from them exactly, and the single finite-difference application left
/// in the second-order equation runs at fourth order.
pub fn result4_reduce(
    p: &Pencil,
    basis: &ChevalleyBasis,
    shape_tol: f64,
) -> Result<Result4Reduction> {
    let shape = result4_shape_check(p, basis, shape_tol)?;
    let orientation = shape.orientation.ok_or_else(|| {
        Error::Domain(format!("pencil is not admissible: {}", shape.offending.join("; ")))
    })?;
    let grid = p.a.grid.clone();
    if p.b.grid.nx != grid.nx || p.b.grid.ny != grid.ny {
        return Err(Error::Shape("pencil components live on different grids".into()));
    }
    let rank = basis.rank;
    let roots: Vec<Root> = (0..rank).map(|i| Root::simple(rank, i)).collect();
    let mut pmat = vec![vec![0i64; rank]; rank];
    for (a, alpha) in roots.iter().enumerate() {
        for i in 0..rank {
            pmat[a][i] = basis.pairing(i, alpha)?;
        }
    }

    let az = coordinate_grids(basis, &grid, &p.a.az)?;
    let azbar = coordinate_grids(basis, &grid, &p.a.azbar)?;
    let bz = coordinate_grids(basis, &grid, &p.b.az)?;
    let bzbar = coordinate_grids(basis, &grid, &p.b.azbar)?;

    // Role extraction.  `x` rides the base z component, `y` the base zbar
    // component, `d` the z deflection, `e` the zbar deflection; `sgn`
    // tracks which root direction the base z component occupies.
    let (x, y, dfl, efl, sgn) = match orientation {
        Result4Orientation::Canonical => (&az.minus, &azbar.plus, &bz.plus, &bzbar.minus, 1.0),
        Result4Orientation::Mirrored => (&az.plus, &azbar.minus, &bz.minus, &bzbar.plus, -1.0),
    };

    let pick_entry = |m: &CMatrix, which: &Root, raise: bool| -> C64 {
        let (a, b) = which.support();
        if raise {
            m[(a, b + 1)]
        } else {
            m[(b + 1, a)]
        }
    };
    // Analytic cross derivatives of the four root-coefficient families.
    let mut x_dzb = Vec::with_capacity(rank);
    let mut y_dz = Vec::with_capacity(rank);
    let mut d_dzb = Vec::with_capacity(rank);
    let mut e_dz = Vec::with_capacity(rank);
    let mut h_plus_dzb = Vec::with_capacity(rank);
    let mut h_minus_dz = Vec::with_capacity(rank);
    for (i, alpha) in roots.iter().enumerate() {
        let raise_x = matches!(orientation, Result4Orientation::Mirrored);
        x_dzb.push(deriv_grid(&grid, &p.a.az_dzbar, |m| pick_entry(m, alpha, raise_x))?);
        y_dz.push(deriv_grid(&grid, &p.a.azbar_dz, |m| pick_entry(m, alpha, !raise_x))?);
        d_dzb.push(deriv_grid(&grid, &p.b.az_dzbar, |m| pick_entry(m, alpha, !raise_x))?);
        e_dz.push(deriv_grid(&grid, &p.b.azbar_dz, |m| pick_entry(m, alpha, raise_x))?);
        let ii = i;
        h_plus_dzb.push(deriv_grid(&grid, &p.a.az_dzbar, move |m| {
            (0..=ii).map(|k| m[(k, k)]).sum()
        })?);
        h_minus_dz.push(deriv_grid(&grid, &p.a.azbar_dz, move |m| {
            (0..=ii).map(|k| m[(k, k)]).sum()
        })?);
    }

    let pair = |h: &[GridField<C64>], a: usize| -> GridField<C64> {
        let mut acc = GridField::sample(&grid, C64::zero(), |_| C64::zero());
        for i in 0..rank {
            acc = acc.zip(&h[i], |s, v| s + *v * pmat[a][i] as f64);
        }
        acc
    };

    let mut reports = BTreeMap::new();
    let worst = |fields: Vec<GridField<C64>>| -> ResidualReport {
        let mut acc = fields[0].map(|v| c64(v.norm(), 0.0));
        for f in &fields[1..] {
            acc = acc.zip(f, |a, b| c64(a.re.max(b.norm()), 0.0));
        }
        acc.report()
    };

    // Transport identities, one per family, exact in the derivatives.
    let mut t_y = Vec::new();
    let mut t_x = Vec::new();
    let mut t_d = Vec::new();
    let mut t_e = Vec::new();
    let mut balance = Vec::new();
    for a in 0..rank {
        let pz = pair(&az.h, a);
        let pzb = pair(&azbar.h, a);
        t_y.push(y_dz[a].zip(&pz.zip(&y[a], |p, v| p * v), |d, pv| d + *pv * sgn));
        t_x.push(x_dzb[a].zip(&pzb.zip(&x[a], |p, v| p * v), |d, pv| d - *pv * sgn));
        t_d.push(d_dzb[a].zip(&pzb.zip(&dfl[a], |p, v| p * v), |d, pv| d + *pv * sgn));
        t_e.push(e_dz[a].zip(&pz.zip(&efl[a], |p, v| p * v), |d, pv| d - *pv * sgn));
        let cross = x[a].zip(&y[a], |u, v| u * v).zip(&dfl[a].zip(&efl[a], |u, v| u * v), |xy, de| xy - de);
        balance.push(
            h_minus_dz[a]
                .zip(&h_plus_dzb[a], |m, p| m - p)
                .zip(&cross, |d, c| d - *c * sgn),
        );
    }
    reports.insert("transport_base_zbar".into(), worst(t_y));
    reports.insert("transport_base_z".into(), worst(t_x));
    reports.insert("transport_deflection_z".into(), worst(t_d));
    reports.insert("transport_deflection_zbar".into(), worst(t_e));
    reports.insert("cartan_balance".into(), worst(balance));

    // Chiral products and their one-sided constancy, measured by second
    // order differences as an independent check on the sampled grids.
    let mut eta_plus = Vec::new();
    let mut eta_minus = Vec::new();
    let mut holo = Vec::new();
    let mut antiholo = Vec::new();
    for a in 0..rank {
        let ep = dfl[a].zip(&x[a], |u, v| -(u * v));
        let em = efl[a].zip(&y[a], |u, v| -(u * v));
        holo.push(ep.fd_dzbar());
        antiholo.push(em.fd_dz());
        eta_plus.push(ep);
        eta_minus.push(em);
    }
    reports.insert("eta_plus_holomorphic".into(), worst(holo));
    reports.insert("eta_minus_antiholomorphic".into(), worst(antiholo));

    // Second-order equation per root, assembled branch-free from the
    // chiral ratio u = e/x.
    let mut phi = Vec::new();
    let mut resid_fields = Vec::new();
    let mut branch_jump = false;
    let mut ratios = Vec::new();
    let mut dd_phi = Vec::new();
    for a in 0..rank {
        let u = efl[a].zip(&x[a], |e, xv| e / xv);
        // dd ln u = dzbar(dz ln e) - dz(dzbar ln x): one exact derivative
        // inside each term, one fourth-order difference outside.
        let dz_ln_e = e_dz[a].zip(&efl[a], |d, v| d / v);
        let dzb_ln_x = x_dzb[a].zip(&x[a], |d, v| d / v);
        let term1 = dz_ln_e.fd4_dzbar();
        let term2 = dzb_ln_x.fd4_dz();
        dd_phi.push(term1.zip(&term2, |t1, t2| t1 - t2));
        let lnu = u.map(|v| v.ln());
        branch_jump |= has_branch_jump(&lnu);
        phi.push(lnu);
        ratios.push(u);
    }
    for a in 0..rank {
        let mut resid = dd_phi[a].clone();
        for i in 0..rank {
            let coupling = eta_plus[i].zip(&ratios[i], |e, u| e * u).zip(
                &eta_minus[i].zip(&ratios[i], |e, u| e / u),
                |pu, mu| pu - mu,
            );
            resid = resid.zip(&coupling, |r, cpl| r + *cpl * pmat[a][i] as f64);
        }
        resid_fields.push(resid);
    }
    reports.insert("toda_residual".into(), worst(resid_fields));
    reports.insert(
        "nonsimple_support".into(),
        az.nonsimple
            .zip(&azbar.nonsimple, |a, b| c64(a.re.max(b.re), 0.0))
            .zip(&bz.nonsimple.zip(&bzbar.nonsimple, |a, b| c64(a.re.max(b.re), 0.0)), |a, b| {
                c64(a.re.max(b.re), 0.0)
            })
            .report(),
    );
    for (k, v) in p.coefficient_curvature().reports() {
        reports.insert(format!("pencil_{k}"), v);
    }

    Ok(Result4Reduction { orientation, roots, phi, eta_plus, eta_minus, reports, branch_jump })
}

fn has_branch_jump(field: &GridField<C64>) -> bool {
    let g = &field.grid;
    for jy in 0..g.ny {
        for ix in 0..g.nx {
            if !g.active(ix, jy) {
                continue;
            }
            let v = field.at(ix, jy).im;
            if ix + 1 < g.nx && g.active(ix + 1, jy)
                && (field.at(ix + 1, jy).im - v).abs() > std::f64::consts::PI
            {
                return true;
            }
            if jy + 1 < g.ny && g.active(ix, jy + 1)
                && (field.at(ix, jy + 1).im - v).abs() > std::f64::consts::PI
            {
                return true;
            }
        }
    }
    false
}

/// Exact admissible pencil in canonical orientation, built from a shared
/// harmonic weight.  Works whenever the Cartan matrix has constant
/// nonzero row sums, which holds for ranks one and two.
pub fn result4_generator(
    basis: &ChevalleyBasis,
    a: C64,
    b: C64,
    curve: C64,
    t: f64,
    grid: &Arc<Grid>,
) -> Result<Pencil> {
    let rank = basis.rank;
    let mut row_sum = None;
    for j in 0..rank {
        let s: i64 = (0..rank).map(|i| basis.cartan[(j, i)]).sum();
        match row_sum {
            None => row_sum = Some(s),
            Some(prev) if prev == s => {}
            _ => {
                return Err(Error::Domain(
                    "shared-weight construction needs constant Cartan row sums".into(),
                ))
            }
        }
    }
    let s = row_sum.unwrap_or(0);
    if s == 0 {
        return Err(Error::Domain(
            "shared-weight construction needs nonzero Cartan row sums".into(),
        ));
    }
    let mut im_max = 0.0f64;
    for jy in 0..grid.ny {
        for ix in 0..grid.nx {
            if grid.active(ix, jy) {
                let z = grid.point(ix, jy);
                im_max = im_max.max((a * z + b).im.abs());
            }
        }
    }
    if im_max > 0.45 * std::f64::consts::PI {
        return Err(Error::Domain(
            "weight is large enough to cross the logarithm branch cut".into(),
        ));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain("interpolation parameter must sit in [0, 1]".into()));
    }

    let n = basis.n;
    let h_mats: Vec<Matrix<Jet2>> = (0..rank).map(|i| basis.h_as::<Jet2>(i)).collect();
    let ep_mats: Vec<Matrix<Jet2>> = (0..rank)
        .map(|i| basis.e_plus_as::<Jet2>(&Root::simple(rank, i)))
        .collect();
    let em_mats: Vec<Matrix<Jet2>> = (0..rank)
        .map(|i| basis.e_minus_as::<Jet2>(&Root::simple(rank, i)))
        .collect();
    let inv_s = 1.0 / s as f64;

    let weight = move |z: C64| -> (Jet2, Jet2, Jet2, Jet2) {
        let j = Jet2::var(z).scale(a) + Jet2::constant(b);
        let big_s = j + j.conj();
        let w = (Jet2::var(z) * Jet2::var_bar(z)).scale(curve);
        let u1 = big_s.scale(c64(t, 0.0)) + w;
        let u2 = big_s.scale(c64(1.0 - t, 0.0)) - w;
        (j, big_s, u1, u2)
    };

    let hm = h_mats.clone();
    let epm = ep_mats.clone();
    let emm = em_mats.clone();
    let base = Connection::from_jets(grid, move |z| {
        let (_, _, u1, u2) = weight(z);
        let x = u2.exp();
        let y = u1.exp();
        let hp = deriv_z(u1).scale(c64(-inv_s, 0.0));
        let hmn = deriv_zbar(u2).scale(c64(inv_s, 0.0));
        let mut az = Matrix::<Jet2>::zeros(n, n);
        let mut azbar = Matrix::<Jet2>::zeros(n, n);
        for i in 0..rank {
            az = az + emm[i].scale(x) + hm[i].scale(hp);
            azbar = azbar + epm[i].scale(y) + hm[i].scale(hmn);
        }
        (az, azbar)
    });
    let epm2 = ep_mats;
    let emm2 = em_mats;
    let deflect = Connection::from_jets(grid, move |z| {
        let (j, _, u1, u2) = weight(z);
        let d = (j + j - u2).exp();
        let e = (j.conj() + j.conj() - u1).exp();
        let mut az = Matrix::<Jet2>::zeros(n, n);
        let mut azbar = Matrix::<Jet2>::zeros(n, n);
        for i in 0..rank {
            az = az + epm2[i].scale(d);
            azbar = azbar + emm2[i].scale(e);
        }
        (az, azbar)
    });
    Ok(Pencil { a: base, b: deflect })
}

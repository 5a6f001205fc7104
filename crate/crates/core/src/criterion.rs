//! The fourth-order integrability criterion for conformal metrics
//! `λ(dφ² + dy²)` with `λ = f_zz̄`, `z = φ + iy`:
//!
//! `Im(f_zzzz f_zz̄ + 3 f_zzz f_zzz̄ + 2 f_zz f_zzzz̄) = 0`
//!
//! evaluated on `f = u(y) cos φ + ξ(y) + d(φ² - y²)` or on user-supplied jets.

use crate::error::{Error, Result};
use crate::quartic_ode::{quartic_rhs, UJet, USolution};
use num_complex::Complex64;
use num_dual::Dual2_64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// `∂_φ^i ∂_y^j f` for `i + j ≤ 4`, stored as `table[i][j]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Partials {
    pub table: [[f64; 5]; 5],
}

impl Partials {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.table[i][j]
    }
}

/// Second closure for `ξ''`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum XiClosure {
    /// `ξ'' = (d1 u + c)/u'²`, with `d = 0` in `f`.
    DZero { c: f64, d1: f64 },
    /// `ξ'' = (2d(u'² - u² + p) + d1 u)/u'²`, with the same `d ≠ 0` in `f`.
    DNonzero { d: f64, d1: f64, p: f64 },
}

impl XiClosure {
    pub fn d(&self) -> f64 {
        match *self {
            XiClosure::DZero { .. } => 0.0,
            XiClosure::DNonzero { d, .. } => d,
        }
    }

    fn validate(&self) -> Result<()> {
        if let XiClosure::DNonzero { d, .. } = *self {
            if d == 0.0 {
                return Err(Error::BadParams("the d != 0 closure needs d != 0".into()));
            }
        }
        Ok(())
    }

    /// `ξ''` as a function of `u` and `u'`, generic over dual numbers.
    fn xi2<D: num_dual::DualNum<f64> + Copy>(&self, u: D, u1: D) -> D {
        let w = u1 * u1;
        match *self {
            XiClosure::DZero { c, d1 } => (u * d1 + c) / w,
            XiClosure::DNonzero { d, d1, p } => ((w - u * u + p) * (2.0 * d) + u * d1) / w,
        }
    }
}

/// Deliberate inconsistencies, used to show the criterion detects violations.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Perturbation {
    /// Added to `ξ''`.
    pub xi_offset: f64,
    /// Relative change of `d` in `f`'s `d(φ² - y²)` term only.
    pub d_term_rel: f64,
}

/// A function `f` whose Wirtinger jet can be evaluated.
#[derive(Clone)]
pub enum FAnsatz {
    Family { usol: Arc<USolution>, closure: XiClosure, perturbation: Perturbation },
    Raw(Arc<dyn Fn(f64, f64) -> Partials + Send + Sync>),
}

impl FAnsatz {
    pub fn family(usol: Arc<USolution>, closure: XiClosure) -> Result<Self> {
        closure.validate()?;
        Ok(FAnsatz::Family { usol, closure, perturbation: Perturbation::default() })
    }

    pub fn perturbed(&self, perturbation: Perturbation) -> Self {
        match self {
            FAnsatz::Family { usol, closure, .. } => {
                FAnsatz::Family { usol: usol.clone(), closure: *closure, perturbation }
            }
            raw => raw.clone(),
        }
    }

    /// `u'` at `y`, or `None` for raw functions.
    fn slope(&self, y: f64) -> Result<Option<f64>> {
        match self {
            FAnsatz::Family { usol, .. } => Ok(Some(usol.jet(y)?.u1)),
            FAnsatz::Raw(_) => Ok(None),
        }
    }

    /// Real partials of `f` to total order 4.
    pub fn partials(&self, phi: f64, y: f64) -> Result<Partials> {
        match self {
            FAnsatz::Raw(f) => Ok(f(phi, y)),
            FAnsatz::Family { usol, closure, perturbation } => {
                Ok(family_partials(&usol.jet(y)?, closure, perturbation, phi))
            }
        }
    }
}

fn family_partials(jet: &UJet, closure: &XiClosure, pert: &Perturbation, phi: f64) -> Partials {
    let (s, c) = phi.sin_cos();
    let trig = [c, -s, -c, s, c];
    let ud = [jet.u, jet.u1, jet.u2, jet.u3, jet.u4];
    // ξ'', ξ''', ξ'''' from the closure differentiated along y.
    let xi = closure.xi2(Dual2_64::new(jet.u, jet.u1, jet.u2), Dual2_64::new(jet.u1, jet.u2, jet.u3));
    let xi_d = [0.0, 0.0, xi.re + pert.xi_offset, xi.v1, xi.v2];
    let d = closure.d() * (1.0 + pert.d_term_rel);
    let mut out = Partials::default();
    for i in 0..5 {
        for j in 0..5 - i {
            let mut v = ud[j] * trig[i];
            if i == 0 {
                v += xi_d[j];
            }
            out.table[i][j] = v;
        }
    }
    out.table[2][0] += 2.0 * d;
    out.table[0][2] -= 2.0 * d;
    out
}

/// The Wirtinger derivatives entering the criterion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WirtingerJet {
    pub f_zz: Complex64,
    pub f_zzbar: Complex64,
    pub f_zzz: Complex64,
    /// `∂³f / ∂z² ∂z̄`
    pub f_zzzbar: Complex64,
    pub f_zzzz: Complex64,
    /// `∂⁴f / ∂z³ ∂z̄`
    pub f_zzzzbar: Complex64,
}

impl WirtingerJet {
    pub fn components(&self) -> [Complex64; 6] {
        [self.f_zz, self.f_zzbar, self.f_zzz, self.f_zzzbar, self.f_zzzz, self.f_zzzzbar]
    }

    /// Largest componentwise difference, relative to the largest component of `self`.
    pub fn relative_difference(&self, other: &WirtingerJet) -> f64 {
        let a = self.components();
        let b = other.components();
        let scale = a.iter().fold(0.0f64, |m, z| m.max(z.norm()));
        let diff = a.iter().zip(&b).fold(0.0f64, |m, (x, y)| m.max((x - y).norm()));
        if scale == 0.0 {
            diff
        } else {
            diff / scale
        }
    }
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `∂_z^a ∂_z̄^b f` with `∂_z = ½(∂_φ - i∂_y)`, `∂_z̄ = ½(∂_φ + i∂_y)`.
pub fn wirtinger(p: &Partials, a: usize, b: usize) -> Complex64 {
    let mi = Complex64::new(0.0, -1.0);
    let pi = Complex64::new(0.0, 1.0);
    let mut acc = Complex64::new(0.0, 0.0);
    for k in 0..=a {
        for l in 0..=b {
            let coef = binom(a, k) * binom(b, l);
            let unit = mi.powu(k as u32) * pi.powu(l as u32);
            acc += unit * coef * p.get(a + b - k - l, k + l);
        }
    }
    acc * 0.5f64.powi((a + b) as i32)
}

pub fn wirtinger_jet(p: &Partials) -> WirtingerJet {
    WirtingerJet {
        f_zz: wirtinger(p, 2, 0),
        f_zzbar: wirtinger(p, 1, 1),
        f_zzz: wirtinger(p, 3, 0),
        f_zzzbar: wirtinger(p, 2, 1),
        f_zzzz: wirtinger(p, 4, 0),
        f_zzzzbar: wirtinger(p, 3, 1),
    }
}

pub fn f_jet(ansatz: &FAnsatz, phi: f64, y: f64) -> Result<WirtingerJet> {
    Ok(wirtinger_jet(&ansatz.partials(phi, y)?))
}

fn criterion_terms(j: &WirtingerJet) -> [Complex64; 3] {
    [j.f_zzzz * j.f_zzbar, j.f_zzz * j.f_zzzbar * 3.0, j.f_zz * j.f_zzzzbar * 2.0]
}

/// `Im(f_zzzz f_zz̄ + 3 f_zzz f_zzz̄ + 2 f_zz f_zzzz̄)`.
pub fn criterion_residual(j: &WirtingerJet) -> f64 {
    criterion_terms(j).iter().sum::<Complex64>().im
}

/// Residual divided by the largest magnitude of the three products (0 if all vanish).
pub fn relative_residual(j: &WirtingerJet) -> f64 {
    let terms = criterion_terms(j);
    let scale = terms.iter().fold(0.0f64, |m, t| m.max(t.norm()));
    if scale == 0.0 {
        0.0
    } else {
        criterion_residual(j).abs() / scale
    }
}

/// Fourth-order central stencils for derivatives of order 0..=4 at offsets -3..=3.
const STENCILS: [[f64; 7]; 5] = [
    [0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0 / 12.0, -8.0 / 12.0, 0.0, 8.0 / 12.0, -1.0 / 12.0, 0.0],
    [0.0, -1.0 / 12.0, 16.0 / 12.0, -30.0 / 12.0, 16.0 / 12.0, -1.0 / 12.0, 0.0],
    [1.0 / 8.0, -1.0, 13.0 / 8.0, 0.0, -13.0 / 8.0, 1.0, -1.0 / 8.0],
    [-1.0 / 6.0, 2.0, -6.5, 28.0 / 3.0, -6.5, 2.0, -1.0 / 6.0],
];

fn fd_partials(f: &dyn Fn(f64, f64) -> f64, phi: f64, y: f64, h: f64) -> Partials {
    let mut samples = [[0.0; 7]; 7];
    for (a, row) in samples.iter_mut().enumerate() {
        for (b, v) in row.iter_mut().enumerate() {
            *v = f(phi + (a as f64 - 3.0) * h, y + (b as f64 - 3.0) * h);
        }
    }
    let mut out = Partials::default();
    for i in 0..5 {
        for j in 0..5 - i {
            let mut acc = 0.0;
            for a in 0..7 {
                if STENCILS[i][a] == 0.0 {
                    continue;
                }
                for b in 0..7 {
                    acc += STENCILS[i][a] * STENCILS[j][b] * samples[a][b];
                }
            }
            out.table[i][j] = acc / h.powi((i + j) as i32);
        }
    }
    out
}

/// Finite-difference partials: fourth-order stencils at `h` and `h/2`, Richardson-combined.
pub fn fd_oracle_partials(f: &dyn Fn(f64, f64) -> f64, phi: f64, y: f64, h: f64) -> Partials {
    let coarse = fd_partials(f, phi, y, h);
    let fine = fd_partials(f, phi, y, 0.5 * h);
    let mut out = Partials::default();
    for i in 0..5 {
        for j in 0..5 - i {
            out.table[i][j] = (16.0 * fine.table[i][j] - coarse.table[i][j]) / 15.0;
        }
    }
    out
}

pub fn fd_oracle(f: &dyn Fn(f64, f64) -> f64, phi: f64, y: f64, h: f64) -> WirtingerJet {
    wirtinger_jet(&fd_oracle_partials(f, phi, y, h))
}

/// Values of the family `f` near `(φ0, y0)`, obtained by integrating `(u, ξ, ξ')`
/// with a fixed number of classical RK4 steps from `y0`. The result is a smooth
/// function of `(φ, y)` that never uses the differentiated closures, so it can
/// serve as an independent check of [`f_jet`].
///
/// `f` is returned up to an affine function, which the jet does not see: `ξ`
/// starts at 0 and the quadratic term is centred at `(φ0, y0)`. Keeping the
/// samples small keeps roundoff out of the fourth differences.
pub fn family_values_near(ansatz: &FAnsatz, phi0: f64, y0: f64) -> Result<impl Fn(f64, f64) -> f64> {
    let FAnsatz::Family { usol, closure, perturbation } = ansatz else {
        return Err(Error::BadParams("value sampler needs a family ansatz".into()));
    };
    let params = *usol.params();
    let u0 = usol.u(y0)?;
    let closure = *closure;
    let offset = perturbation.xi_offset;
    let d = closure.d() * (1.0 + perturbation.d_term_rel);
    let rhs = move |s: [f64; 3]| {
        let u1 = params.branch.sign() * quartic_rhs(s[0], &params).sqrt().sqrt();
        [u1, s[2], closure.xi2(s[0], u1) + offset]
    };
    Ok(move |phi: f64, y: f64| {
        const STEPS: usize = 64;
        let h = (y - y0) / STEPS as f64;
        let mut s = [u0, 0.0, 0.0];
        for _ in 0..STEPS {
            let add = |s: [f64; 3], k: [f64; 3], w: f64| [s[0] + w * k[0], s[1] + w * k[1], s[2] + w * k[2]];
            let k1 = rhs(s);
            let k2 = rhs(add(s, k1, 0.5 * h));
            let k3 = rhs(add(s, k2, 0.5 * h));
            let k4 = rhs(add(s, k3, h));
            for i in 0..3 {
                s[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        let (dp, dy) = (phi - phi0, y - y0);
        s[0] * phi.cos() + s[1] + d * (dp * dp - dy * dy)
    })
}

/// Summary of the criterion over a grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub max_relative: f64,
    pub mean_relative: f64,
    pub points: usize,
    /// Points skipped because `|u'| < 1e-6` (the closures blow up there).
    pub skipped: usize,
}

/// Relative residual on an `n_phi × n_y` grid over `[0, 2π] × y_range` (both ends included).
pub fn check_grid(ansatz: &FAnsatz, n_phi: usize, n_y: usize, y_range: (f64, f64)) -> Result<GridReport> {
    if n_phi < 2 || n_y < 2 {
        return Err(Error::BadParams("grid needs at least 2 points per direction".into()));
    }
    let pts: Vec<(f64, f64)> = (0..n_phi)
        .flat_map(|i| {
            (0..n_y).map(move |j| {
                (
                    std::f64::consts::TAU * i as f64 / (n_phi - 1) as f64,
                    y_range.0 + (y_range.1 - y_range.0) * j as f64 / (n_y - 1) as f64,
                )
            })
        })
        .collect();
    let results: Vec<Option<f64>> = pts
        .par_iter()
        .map(|&(phi, y)| -> Result<Option<f64>> {
            if let Some(u1) = ansatz.slope(y)? {
                if u1.abs() < 1e-6 {
                    return Ok(None);
                }
            }
            Ok(Some(relative_residual(&f_jet(ansatz, phi, y)?)))
        })
        .collect::<Result<_>>()?;
    let vals: Vec<f64> = results.iter().flatten().copied().collect();
    Ok(GridReport {
        max_relative: vals.iter().fold(0.0, |m: f64, v| m.max(*v)),
        mean_relative: if vals.is_empty() { 0.0 } else { vals.iter().sum::<f64>() / vals.len() as f64 },
        points: vals.len(),
        skipped: results.len() - vals.len(),
    })
}

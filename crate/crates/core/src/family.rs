//! Constructors for the conservative systems built from the quartic ODE.
//!
//! * base: `H = A^{-1/2}(dφ² + A^{-1/2} du²) - (u/2)(a + 2u² - 2A^{1/2}) cos φ`,
//! * shifted: `dφ² + A^{-1/2} du²` times `(A^{1/2} - u² + p)/A^{1/2}`, potential
//!   divided by `A^{1/2} - u² + p`,
//! * general: the same systems in `(φ, y)` for any local solution `u(y)`.
//!
//! With `b = 1`, `a > -2` the base and shifted systems extend smoothly over the
//! two poles `u → ±∞`; those are represented by two Cartesian pole caps built
//! from [`PoleFunctions`].

use crate::chart::{Chart, ChartKind, ChartedSystem, Model, SystemKind, SystemParams};
use crate::error::{Error, Result};
use crate::kovalevskaya;
use crate::quartic_ode::{compute_pole_functions, solve_u, FamilyParams, PoleFunctions, USolution, SCHEMA_VERSION};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Chebyshev resolution and tolerance used for pole functions built implicitly.
pub const DEFAULT_POLE_GRID: usize = 64;
pub const DEFAULT_POLE_TOL: f64 = 1e-13;

/// Whether a construction must close up on the sphere.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Global,
    Local,
}

fn cylinder_chart() -> Chart {
    Chart::new("cylinder", ["phi", "u"], ChartKind::Cylinder)
}

fn cap_charts() -> [Chart; 2] {
    [
        Chart::new("north", ["X", "Y"], ChartKind::Cap { south: false }),
        Chart::new("south", ["X", "Y"], ChartKind::Cap { south: true }),
    ]
}

fn global_pole(a: f64, b: f64) -> Result<Arc<PoleFunctions>> {
    if b != 1.0 || !(a > -2.0) {
        return Err(Error::BadParams(format!("a sphere construction needs b = 1 and a > -2 (got a = {a}, b = {b})")));
    }
    Ok(Arc::new(compute_pole_functions(a, DEFAULT_POLE_GRID, DEFAULT_POLE_TOL)?))
}

fn quartic_system(params: SystemParams, pole: Option<Arc<PoleFunctions>>) -> ChartedSystem {
    let mut charts = vec![cylinder_chart()];
    if pole.is_some() {
        charts.extend(cap_charts());
    }
    ChartedSystem::from_parts(params, Model::Quartic { pole }, charts)
}

fn base_params(a: f64, b: f64, global: bool) -> SystemParams {
    SystemParams { kind: SystemKind::Base, a, b, p: None, d: 0.0, c: 0.0, d1: 0.0, sign: 1.0, global }
}

/// The base family in `(φ, u)`, plus pole caps when `scope` is global.
pub fn build_base(a: f64, b: f64, scope: Scope) -> Result<ChartedSystem> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::BadParams("a and b must be finite".into()));
    }
    match scope {
        Scope::Global => Ok(quartic_system(base_params(a, b, true), Some(global_pole(a, b)?))),
        Scope::Local => Ok(quartic_system(base_params(a, b, false), None)),
    }
}

/// One open interval of admissible `p` and the sign of the stored Hamiltonian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PComponent {
    pub lo: f64,
    pub hi: f64,
    pub sign: f64,
}

/// Admissible shifts `p` for a given `a` (`b = 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PRange {
    pub a: f64,
    pub components: Vec<PComponent>,
}

impl PRange {
    /// Sign to use for `p`, or `None` if `p` is not admissible (boundaries excluded).
    pub fn sign_for(&self, p: f64) -> Option<f64> {
        self.components.iter().find(|c| c.lo < p && p < c.hi).map(|c| c.sign)
    }

    pub fn describe(&self) -> String {
        let fmt = |x: f64| {
            if x == f64::INFINITY {
                "inf".to_string()
            } else if x == f64::NEG_INFINITY {
                "-inf".to_string()
            } else {
                format!("{x}")
            }
        };
        self.components.iter().map(|c| format!("({}, {})", fmt(c.lo), fmt(c.hi))).collect::<Vec<_>>().join(" U ")
    }
}

/// `f(z) = z - √(1 + a z + z²)`; its range over `z ≥ 0` is what `p` must avoid.
pub fn shift_bound_fn(a: f64, z: f64) -> f64 {
    // z - √(...) = -(1 + a z) / (z + √(...)), stable for large z.
    let root = (1.0 + a * z + z * z).sqrt();
    -(1.0 + a * z) / (z + root)
}

pub fn admissible_p(a: f64) -> Result<PRange> {
    if !(a > -2.0) || a == 2.0 || !a.is_finite() {
        return Err(Error::BadParams(format!("admissible p is defined for a > -2, a != 2 (got a = {a})")));
    }
    let (low, high) = if a > 2.0 { (-0.5 * a, -1.0) } else { (-1.0, -0.5 * a) };
    Ok(PRange {
        a,
        components: vec![
            PComponent { lo: f64::NEG_INFINITY, hi: low, sign: -1.0 },
            PComponent { lo: high, hi: f64::INFINITY, sign: 1.0 },
        ],
    })
}

/// The shifted family. Globally, `p` must be admissible and the lower
/// component is stored as `-H_p`.
pub fn build_shifted(a: f64, b: f64, p: f64, scope: Scope) -> Result<ChartedSystem> {
    if !(a.is_finite() && b.is_finite() && p.is_finite()) {
        return Err(Error::BadParams("a, b and p must be finite".into()));
    }
    match scope {
        Scope::Global => {
            if b != 1.0 {
                return Err(Error::BadParams(format!("a sphere construction needs b = 1 (got b = {b})")));
            }
            let range = admissible_p(a)?;
            let sign = range.sign_for(p).ok_or_else(|| Error::InadmissibleP { a, p, admissible: range.describe() })?;
            let params = SystemParams { kind: SystemKind::Shifted, p: Some(p), sign, ..base_params(a, b, true) };
            Ok(quartic_system(params, Some(global_pole(a, b)?)))
        }
        Scope::Local => {
            let params = SystemParams { kind: SystemKind::Shifted, p: Some(p), ..base_params(a, b, false) };
            Ok(quartic_system(params, None))
        }
    }
}

/// Constants of the general local systems; `c` is recorded but does not enter `H`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneralConstants {
    pub d: f64,
    pub c: f64,
    pub d1: f64,
    /// Shift used when `d ≠ 0`.
    pub p: f64,
}

/// Single-chart `(φ, y)` system:
/// `E = k/u'²`, `V = -[(u'' - u) u'² cos φ + d1 u] / k`, `k = 1` (d = 0) or `u'² - u² + p`.
pub fn build_general(usol: Arc<USolution>, consts: GeneralConstants) -> Result<ChartedSystem> {
    let fp = *usol.params();
    let params = SystemParams {
        kind: SystemKind::General,
        a: fp.a,
        b: fp.b,
        p: if consts.d != 0.0 { Some(consts.p) } else { None },
        d: consts.d,
        c: consts.c,
        d1: consts.d1,
        sign: 1.0,
        global: false,
    };
    Ok(ChartedSystem::from_parts(
        params,
        Model::General { usol },
        vec![Chart::new("general", ["phi", "y"], ChartKind::General)],
    ))
}

/// The system written in the polar coordinates of both poles:
/// `ds² = Λ(r²)(dr² + r² dφ²)`, `V = ±m(r²) r cos φ`.
pub fn polar_presentation(pf: Arc<PoleFunctions>, p: Option<f64>) -> Result<ChartedSystem> {
    let a = pf.a();
    let (kind, sign) = match p {
        None => (SystemKind::Base, 1.0),
        Some(p) => {
            let range = admissible_p(a)?;
            let sign = range.sign_for(p).ok_or_else(|| Error::InadmissibleP { a, p, admissible: range.describe() })?;
            (SystemKind::Shifted, sign)
        }
    };
    let params = SystemParams { kind, p, sign, ..base_params(a, 1.0, true) };
    Ok(ChartedSystem::from_parts(
        params,
        Model::Quartic { pole: Some(pf) },
        vec![
            Chart::new("polar_north", ["r", "phi"], ChartKind::Polar { south: false }),
            Chart::new("polar_south", ["r", "phi"], ChartKind::Polar { south: true }),
        ],
    ))
}

/// Chart description stored in system files.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ChartRecord {
    pub name: String,
    pub coords: [String; 2],
    pub grid: ChartGrid,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ChartGrid {
    pub domain: String,
    pub pole_grid: Option<usize>,
    pub pole_tol: Option<f64>,
}

/// Everything needed to rebuild a system deterministically.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SystemRecord {
    pub schema: u32,
    pub kind: SystemKind,
    pub a: f64,
    pub b: f64,
    pub p: Option<f64>,
    pub sign: f64,
    pub global: bool,
    pub d: f64,
    pub c: f64,
    pub d1: f64,
    /// Initial value and interval of the local solution (general systems).
    pub u0: Option<f64>,
    pub y_range: Option<[f64; 2]>,
    pub tol: Option<f64>,
    pub charts: Vec<ChartRecord>,
}

fn chart_domain(kind: ChartKind) -> &'static str {
    match kind {
        ChartKind::Cylinder => "phi in [0, 2pi), u in R",
        ChartKind::Cap { .. } => "X^2 + Y^2 <= 1e6",
        ChartKind::Polar { .. } => "r > 0, phi in [0, 2pi)",
        ChartKind::General => "phi in [0, 2pi), y in solved range",
        ChartKind::KovU => "phi in [0, 2pi), u > 0",
        ChartKind::KovW => "phi in [0, 2pi), w in R",
        ChartKind::Flat { .. } | ChartKind::Harmonic { .. } => "R^2",
    }
}

impl ChartedSystem {
    pub fn to_record(&self) -> SystemRecord {
        let prm = &self.params;
        let pole = self.pole_functions();
        let usol = self.u_solution();
        SystemRecord {
            schema: SCHEMA_VERSION,
            kind: prm.kind,
            a: prm.a,
            b: prm.b,
            p: prm.p,
            sign: prm.sign,
            global: prm.global,
            d: prm.d,
            c: prm.c,
            d1: prm.d1,
            u0: usol.map(|u| u.u0()),
            y_range: usol.map(|u| {
                let (lo, hi) = u.range();
                [lo, hi]
            }),
            tol: usol.map(|u| u.to_record().tol),
            charts: self
                .charts()
                .iter()
                .map(|c| ChartRecord {
                    name: c.name.clone(),
                    coords: c.coords.clone(),
                    grid: ChartGrid {
                        domain: chart_domain(c.kind).into(),
                        pole_grid: matches!(c.kind, ChartKind::Cap { .. } | ChartKind::Polar { .. })
                            .then(|| pole.map(|p| p.n_grid()))
                            .flatten(),
                        pole_tol: matches!(c.kind, ChartKind::Cap { .. } | ChartKind::Polar { .. })
                            .then(|| pole.map(|p| p.tol()))
                            .flatten(),
                    },
                })
                .collect(),
        }
    }

    /// Rebuilds a system from its record by re-running the constructor.
    pub fn from_record(rec: &SystemRecord) -> Result<Self> {
        if rec.schema != SCHEMA_VERSION {
            return Err(Error::Format(format!("unsupported system schema {}", rec.schema)));
        }
        let scope = if rec.global { Scope::Global } else { Scope::Local };
        let polar = rec.charts.iter().any(|c| c.name.starts_with("polar"));
        match rec.kind {
            SystemKind::Base | SystemKind::Shifted if polar => {
                let pf = Arc::new(compute_pole_functions(rec.a, DEFAULT_POLE_GRID, DEFAULT_POLE_TOL)?);
                polar_presentation(pf, rec.p)
            }
            SystemKind::Base => build_base(rec.a, rec.b, scope),
            SystemKind::Shifted => {
                let p = rec.p.ok_or_else(|| Error::Format("shifted system without p".into()))?;
                let sys = build_shifted(rec.a, rec.b, p, scope)?;
                if scope == Scope::Local && rec.sign != 1.0 {
                    return Err(Error::Format("local shifted systems are stored with sign +1".into()));
                }
                Ok(sys)
            }
            SystemKind::General => {
                let (Some(u0), Some([lo, hi]), Some(tol)) = (rec.u0, rec.y_range, rec.tol) else {
                    return Err(Error::Format("general system needs u0, y_range and tol".into()));
                };
                let usol = solve_u(FamilyParams::new(rec.a, rec.b), u0, (lo, hi), tol)?;
                build_general(
                    Arc::new(usol),
                    GeneralConstants { d: rec.d, c: rec.c, d1: rec.d1, p: rec.p.unwrap_or(0.0) },
                )
            }
            SystemKind::Kovalevskaya => Ok(kovalevskaya::kov_chart_system()),
            SystemKind::Fixture => Err(Error::Format("fixtures are not serialized".into())),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_record())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_record(&serde_json::from_str(text)?)
    }
}

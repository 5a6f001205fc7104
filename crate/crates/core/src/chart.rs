//! Charted conservative systems `H = ½ Σ p_i² / E_i(q) + V(q)` with diagonal
//! metrics `ds² = E₁ dq₁² + E₂ dq₂²`.
//!
//! Every chart evaluates `(E₁, E₂, V)` through one generic routine so that
//! values, gradients and Hessians come from the same code path via dual numbers.
//! Transitions are cotangent lifts (`p_new = J⁻ᵀ p_old`), which keeps them canonical.

use crate::error::{Error, Result};
use crate::quartic_ode::{PoleFunctions, USolution};
use num_dual::{Dual2_64, DualNum, HyperDual64};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// A point of phase space in a named chart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub chart: usize,
    pub q: [f64; 2],
    pub p: [f64; 2],
}

impl PhaseState {
    pub fn new(chart: usize, q: [f64; 2], p: [f64; 2]) -> Self {
        Self { chart, q, p }
    }
}

/// Value, gradient and Hessian of a scalar field.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Jet2 {
    pub v: f64,
    pub g: [f64; 2],
    pub h: [[f64; 2]; 2],
}

/// Second-order jets of the metric coefficients and the potential.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalJets {
    pub e: [Jet2; 2],
    pub v: Jet2,
}

impl LocalJets {
    /// Jets of `G_i = 1/E_i`, the inverse-metric coefficients.
    pub fn inverse_metric(&self) -> [Jet2; 2] {
        self.e.map(|e| {
            let inv = 1.0 / e.v;
            let inv2 = inv * inv;
            let mut out = Jet2 { v: inv, ..Default::default() };
            for k in 0..2 {
                out.g[k] = -e.g[k] * inv2;
                for l in 0..2 {
                    out.h[k][l] = 2.0 * e.g[k] * e.g[l] * inv2 * inv - e.h[k][l] * inv2;
                }
            }
            out
        })
    }
}

/// How a chart computes its metric and potential.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChartKind {
    /// `(φ, u)` with `u` the ODE solution value; the presentation used for the families.
    Cylinder,
    /// Cartesian `(X, Y) = r (cos φ, sin φ)` around a pole; `south` uses `r̃ = 1/r`, `φ̃ = -φ`.
    Cap { south: bool },
    /// Polar `(r, φ)` around a pole, same conventions as [`ChartKind::Cap`].
    Polar { south: bool },
    /// `(φ, y)` for a locally solved `u(y)`.
    General,
    /// `(φ, u)`, `u > 0`, for the Kovalevskaya member; degenerate at the equator `u = 0`.
    KovU,
    /// `(φ, w)`, `u = w²`; regular across the equator, `w`'s sign selects the hemisphere.
    KovW,
    /// Euclidean test fixture, optionally with `φ = q₁` treated as an angle.
    Flat { angular: bool },
    /// `E = 1`, `V = ½ k |q|²`.
    Harmonic { k: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chart {
    pub name: String,
    pub coords: [String; 2],
    pub kind: ChartKind,
}

impl Chart {
    pub fn new(name: &str, coords: [&str; 2], kind: ChartKind) -> Self {
        Self { name: name.into(), coords: coords.map(String::from), kind }
    }

    /// Index of the coordinate that is an angle, if any.
    pub fn angular_coord(&self) -> Option<usize> {
        match self.kind {
            ChartKind::Cylinder | ChartKind::General | ChartKind::KovU | ChartKind::KovW => Some(0),
            ChartKind::Polar { .. } => Some(1),
            ChartKind::Flat { angular: true } => Some(0),
            _ => None,
        }
    }

    /// Distance from the chart's pole (caps and polar charts only).
    pub fn pole_radius(&self, q: [f64; 2]) -> Option<f64> {
        match self.kind {
            ChartKind::Cap { .. } => Some(q[0].hypot(q[1])),
            ChartKind::Polar { .. } => Some(q[0]),
            _ => None,
        }
    }
}

/// Which family a system belongs to, with every constant it was built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    Base,
    Shifted,
    General,
    Kovalevskaya,
    Fixture,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub kind: SystemKind,
    pub a: f64,
    pub b: f64,
    pub p: Option<f64>,
    pub d: f64,
    pub c: f64,
    pub d1: f64,
    /// `-1` when the stored Hamiltonian is `-H_p`.
    pub sign: f64,
    /// `true` when the system is a smooth system on the whole sphere.
    pub global: bool,
}

impl SystemParams {
    pub fn fixture() -> Self {
        Self { kind: SystemKind::Fixture, a: 0.0, b: 0.0, p: None, d: 0.0, c: 0.0, d1: 0.0, sign: 1.0, global: false }
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Model {
    Quartic { pole: Option<Arc<PoleFunctions>> },
    General { usol: Arc<USolution> },
    Kovalevskaya,
    Fixture,
}

/// A conservative system given on one or more charts.
#[derive(Debug, Clone)]
pub struct ChartedSystem {
    pub params: SystemParams,
    pub(crate) model: Model,
    charts: Vec<Chart>,
}

/// Upper bound on `X² + Y²` accepted by the cap charts.
const CAP_S_MAX: f64 = 1e6;

impl ChartedSystem {
    pub(crate) fn from_parts(params: SystemParams, model: Model, charts: Vec<Chart>) -> Self {
        Self { params, model, charts }
    }

    /// Flat plane (or flat cylinder when `angular`); a fixture for tests.
    pub fn fixture_flat(angular: bool) -> Self {
        let coords = if angular { ["phi", "y"] } else { ["x", "y"] };
        Self::from_parts(
            SystemParams::fixture(),
            Model::Fixture,
            vec![Chart::new("flat", coords, ChartKind::Flat { angular })],
        )
    }

    /// Isotropic harmonic oscillator `½|p|² + ½k|q|²`; a fixture for tests.
    pub fn fixture_harmonic(k: f64) -> Self {
        Self::from_parts(
            SystemParams::fixture(),
            Model::Fixture,
            vec![Chart::new("harmonic", ["x", "y"], ChartKind::Harmonic { k })],
        )
    }

    pub fn charts(&self) -> &[Chart] {
        &self.charts
    }

    pub fn chart(&self, i: usize) -> Result<&Chart> {
        self.charts.get(i).ok_or_else(|| Error::BadParams(format!("no chart with index {i}")))
    }

    pub fn chart_index(&self, name: &str) -> Result<usize> {
        self.charts
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| Error::BadParams(format!("no chart named {name:?}")))
    }

    pub fn pole_functions(&self) -> Option<&PoleFunctions> {
        match &self.model {
            Model::Quartic { pole } => pole.as_deref(),
            _ => None,
        }
    }

    pub fn u_solution(&self) -> Option<&USolution> {
        match &self.model {
            Model::General { usol } => Some(usol),
            _ => None,
        }
    }

    fn out_of_chart(&self, chart: usize, q: [f64; 2]) -> Error {
        let name = self.charts.get(chart).map(|c| c.name.clone()).unwrap_or_default();
        Error::OutOfChart { chart: name, q }
    }

    fn need_pole(&self) -> Result<&PoleFunctions> {
        self.pole_functions()
            .ok_or_else(|| Error::BadParams("system has no pole functions (local construction)".into()))
    }

    /// `(E₁, E₂, V)` at `q`, generic over the number type.
    pub fn local<D: DualNum<f64> + Copy>(&self, chart: usize, q: [D; 2]) -> Result<[D; 3]> {
        let kind = self.chart(chart)?.kind;
        let qre = [q[0].re(), q[1].re()];
        if !(qre[0].is_finite() && qre[1].is_finite()) {
            return Err(self.out_of_chart(chart, qre));
        }
        let prm = &self.params;
        match kind {
            ChartKind::Cylinder => {
                let (phi, u) = (q[0], q[1]);
                let u2 = u * u;
                let big_a = u2 * u2 + u2 * prm.a + prm.b;
                if !(big_a.re() > 0.0) {
                    return Err(Error::NonPositiveA { u: u.re(), value: big_a.re() });
                }
                let root = big_a.sqrt();
                // a + 2u² - 2√A written without cancellation.
                let gap = D::from(prm.a * prm.a - 4.0 * prm.b) / (root * 2.0 + u2 * 2.0 + prm.a);
                let mut e1 = root.recip();
                let mut e2 = big_a.recip();
                let mut v = -u * gap * phi.cos() * 0.5;
                if let Some(p) = prm.p {
                    // √A - u² + p, again without cancellation.
                    let shift = (u2 * prm.a + prm.b) / (root + u2) + p;
                    // The shift factor multiplies dφ² + A^{-1/2} du², not the base metric.
                    let factor = shift * prm.sign;
                    e1 = factor / root;
                    e2 = factor / big_a;
                    v = v / shift * prm.sign;
                }
                Ok([e1, e2, v])
            }
            ChartKind::Cap { south } => {
                let pf = self.need_pole()?;
                let s = q[0] * q[0] + q[1] * q[1];
                if !(s.re() <= CAP_S_MAX) {
                    return Err(self.out_of_chart(chart, qre));
                }
                let (lam, m) = self.radial_profile(pf, s);
                let orient = if south { -1.0 } else { 1.0 };
                Ok([lam, lam, m * q[0] * orient])
            }
            ChartKind::Polar { south } => {
                let pf = self.need_pole()?;
                let (r, phi) = (q[0], q[1]);
                if !(r.re() > 0.0 && r.re() * r.re() <= CAP_S_MAX) {
                    return Err(self.out_of_chart(chart, qre));
                }
                let (lam, m) = self.radial_profile(pf, r * r);
                let orient = if south { -1.0 } else { 1.0 };
                Ok([lam, lam * r * r, m * r * phi.cos() * orient])
            }
            ChartKind::General => {
                let Model::General { usol } = &self.model else {
                    return Err(Error::BadParams("general chart without a u solution".into()));
                };
                let (phi, y) = (q[0], q[1]);
                let jet = usol.jet(y.re())?;
                let dy = y - y.re();
                let dy2 = dy * dy * 0.5;
                let u = dy2 * jet.u2 + dy * jet.u1 + jet.u;
                let u1 = dy2 * jet.u3 + dy * jet.u2 + jet.u1;
                let u2 = dy2 * jet.u4 + dy * jet.u3 + jet.u2;
                let w = u1 * u1;
                let k = if prm.d == 0.0 { D::from(1.0) } else { w - u * u + prm.p.unwrap_or(0.0) };
                let e = k / w;
                let v = -((u2 - u) * w * phi.cos() + u * prm.d1) / k;
                Ok([e, e, v])
            }
            ChartKind::KovU => {
                let (phi, u) = (q[0], q[1]);
                if !(u.re() > 0.0) {
                    return Err(Error::DegenerateCoordinate { u: u.re() });
                }
                let root = (u * u + 1.0).sqrt();
                let psi = (root + u).recip();
                let e1 = psi / root;
                Ok([e1, e1 / (u * root), psi * phi.cos() * 0.5])
            }
            ChartKind::KovW => {
                let (phi, w) = (q[0], q[1]);
                let u = w * w;
                let psi = ((u * u + 1.0).sqrt() + u).recip();
                let psi2 = psi * psi;
                let e1 = psi2 * 2.0 / (psi2 + 1.0);
                let e2 = e1 * 4.0 / (u * u + 1.0).sqrt();
                Ok([e1, e2, psi * phi.cos() * 0.5])
            }
            ChartKind::Flat { .. } => Ok([D::from(1.0), D::from(1.0), D::from(0.0)]),
            ChartKind::Harmonic { k } => Ok([D::from(1.0), D::from(1.0), (q[0] * q[0] + q[1] * q[1]) * (0.5 * k)]),
        }
    }

    /// Conformal factor `Λ(s)` and potential amplitude `m(s)` of the pole charts:
    /// `ds² = Λ (dX² + dY²)`, `V = ±m X`.
    fn radial_profile<D: DualNum<f64> + Copy>(&self, pf: &PoleFunctions, s: D) -> (D, D) {
        let nu = pf.nu_generic(s);
        let mu = pf.mu_generic(s);
        let sign = self.params.sign;
        match self.params.p {
            None => ((nu * nu).recip() * sign, mu * sign),
            Some(p) => {
                let k = pf.xi_generic(s) + 1.0 + p;
                (k / (nu * nu) * sign, mu / k * sign)
            }
        }
    }

    pub fn metric_and_potential(&self, chart: usize, q: [f64; 2]) -> Result<[f64; 3]> {
        self.local(chart, q)
    }

    /// Second-order jets of `E₁`, `E₂`, `V` at `q`.
    pub fn jets(&self, chart: usize, q: [f64; 2]) -> Result<LocalJets> {
        let hd = self.local(chart, [HyperDual64::new(q[0], 1.0, 0.0, 0.0), HyperDual64::new(q[1], 0.0, 1.0, 0.0)])?;
        let d1 = self.local(chart, [Dual2_64::new(q[0], 1.0, 0.0), Dual2_64::from_re(q[1])])?;
        let d2 = self.local(chart, [Dual2_64::from_re(q[0]), Dual2_64::new(q[1], 1.0, 0.0)])?;
        let jet = |i: usize| Jet2 {
            v: hd[i].re,
            g: [hd[i].eps1, hd[i].eps2],
            h: [[d1[i].v2, hd[i].eps1eps2], [hd[i].eps1eps2, d2[i].v2]],
        };
        Ok(LocalJets { e: [jet(0), jet(1)], v: jet(2) })
    }

    /// `H = ½ Σ p_i²/E_i + V`.
    pub fn hamiltonian(&self, s: &PhaseState) -> Result<f64> {
        let [e1, e2, v] = self.local(s.chart, s.q)?;
        Ok(0.5 * (s.p[0] * s.p[0] / e1 + s.p[1] * s.p[1] / e2) + v)
    }

    /// Gaussian curvature of the kinetic metric at `q`.
    pub fn gaussian_curvature(&self, chart: usize, q: [f64; 2]) -> Result<f64> {
        let j = self.jets(chart, q)?;
        Ok(curvature_from_jets(&j.e[0], &j.e[1]))
    }

    /// Re-expresses `s` in chart `target` (canonical cotangent lift).
    pub fn transition(&self, s: &PhaseState, target: usize) -> Result<PhaseState> {
        let tkind = self.chart(target)?.kind;
        let skind = self.chart(s.chart)?.kind;
        if s.chart == target {
            return Ok(*s);
        }
        match (&self.model, skind, tkind) {
            (Model::Quartic { .. }, _, _) => {
                let (qh, ph) = self.to_hub(s)?;
                let (q, p) = self.from_hub(target, qh, ph)?;
                Ok(PhaseState::new(target, q, p))
            }
            (Model::Kovalevskaya, ChartKind::KovU, ChartKind::KovW) => {
                let w = s.q[1].sqrt();
                Ok(PhaseState::new(target, [s.q[0], w], [s.p[0], s.p[1] * 2.0 * w]))
            }
            (Model::Kovalevskaya, ChartKind::KovW, ChartKind::KovU) => {
                let w = s.q[1];
                if !(w > 0.0) {
                    return Err(self.out_of_chart(target, s.q));
                }
                Ok(PhaseState::new(target, [s.q[0], w * w], [s.p[0], s.p[1] / (2.0 * w)]))
            }
            _ => Err(self.out_of_chart(target, s.q)),
        }
    }

    /// Maps a state of a sphere family to the north cap `(X, Y)`.
    fn to_hub(&self, s: &PhaseState) -> Result<([f64; 2], [f64; 2])> {
        let [q1, q2] = s.q;
        let [p1, p2] = s.p;
        match self.chart(s.chart)?.kind {
            ChartKind::Cap { south: false } => Ok((s.q, s.p)),
            ChartKind::Cap { south: true } => {
                let qh = inversion(s.q);
                Ok((qh, inversion_pullback(qh, s.p)))
            }
            ChartKind::Polar { south } => {
                let (r, phi) = (q1, q2);
                if !(r > 0.0) {
                    return Err(self.out_of_chart(s.chart, s.q));
                }
                let (sn, cs) = phi.sin_cos();
                let qc = [r * cs, r * sn];
                let pc = [p1 * cs - p2 * sn / r, p1 * sn + p2 * cs / r];
                if south {
                    let qh = inversion(qc);
                    Ok((qh, inversion_pullback(qh, pc)))
                } else {
                    Ok((qc, pc))
                }
            }
            ChartKind::Cylinder => {
                let pf = self.need_pole()?;
                let (phi, u) = (q1, q2);
                let y = pf.y_of_u(u);
                let r = y.exp();
                let (sn, cs) = phi.sin_cos();
                let (x, yy) = (r * cs, r * sn);
                let up = self.u_slope(u)?;
                let r2 = r * r;
                Ok(([x, yy], [(-yy * p1 + up * x * p2) / r2, (x * p1 + up * yy * p2) / r2]))
            }
            _ => Err(self.out_of_chart(s.chart, s.q)),
        }
    }

    fn from_hub(&self, target: usize, qh: [f64; 2], ph: [f64; 2]) -> Result<([f64; 2], [f64; 2])> {
        let r = qh[0].hypot(qh[1]);
        match self.chart(target)?.kind {
            ChartKind::Cap { south: false } => Ok((qh, ph)),
            ChartKind::Cap { south: true } => {
                if r == 0.0 {
                    return Err(self.out_of_chart(target, qh));
                }
                let qs = inversion(qh);
                Ok((qs, inversion_pullback(qs, ph)))
            }
            ChartKind::Polar { south } => {
                let (qc, pc) = if south {
                    if r == 0.0 {
                        return Err(self.out_of_chart(target, qh));
                    }
                    let qs = inversion(qh);
                    (qs, inversion_pullback(qs, ph))
                } else {
                    (qh, ph)
                };
                let rr = qc[0].hypot(qc[1]);
                if rr == 0.0 {
                    return Err(self.out_of_chart(target, qc));
                }
                let phi = qc[1].atan2(qc[0]);
                let (sn, cs) = phi.sin_cos();
                Ok(([rr, phi], [pc[0] * cs + pc[1] * sn, rr * (pc[1] * cs - pc[0] * sn)]))
            }
            ChartKind::Cylinder => {
                let pf = self.need_pole()?;
                if r == 0.0 || !r.is_finite() {
                    return Err(self.out_of_chart(target, qh));
                }
                let phi = qh[1].atan2(qh[0]);
                let u = pf.u(r.ln());
                let up = self.u_slope(u)?;
                Ok(([phi, u], [-qh[1] * ph[0] + qh[0] * ph[1], (qh[0] * ph[0] + qh[1] * ph[1]) / up]))
            }
            _ => Err(self.out_of_chart(target, qh)),
        }
    }

    /// `du/dy = A(u)^{1/4}` for the sphere families.
    fn u_slope(&self, u: f64) -> Result<f64> {
        let a_val = self.params.b + self.params.a * u * u + u.powi(4);
        if a_val > 0.0 {
            Ok(a_val.sqrt().sqrt())
        } else {
            Err(Error::NonPositiveA { u, value: a_val })
        }
    }

    /// Chart to continue integrating in once `q` has left the hysteresis band,
    /// or `None` to stay.
    pub fn switch_target(&self, chart: usize, q: [f64; 2], r_high: f64) -> Option<usize> {
        let c = self.charts.get(chart)?;
        let radius = c.pole_radius(q)?;
        if radius <= r_high {
            return None;
        }
        let want = match c.kind {
            ChartKind::Cap { south } => ChartKind::Cap { south: !south },
            ChartKind::Polar { south } => ChartKind::Polar { south: !south },
            _ => return None,
        };
        self.charts.iter().position(|c| c.kind == want)
    }

    /// Moves a state into a chart suited for long integrations (the pole caps
    /// for sphere families, the regular chart for the Kovalevskaya member).
    pub fn integration_state(&self, s: &PhaseState) -> Result<PhaseState> {
        let kind = self.chart(s.chart)?.kind;
        match kind {
            ChartKind::Cylinder if self.pole_functions().is_some() => {
                let south = s.q[1] > 0.0;
                let target = self
                    .charts
                    .iter()
                    .position(|c| c.kind == ChartKind::Cap { south })
                    .ok_or_else(|| self.out_of_chart(s.chart, s.q))?;
                self.transition(s, target)
            }
            ChartKind::KovU => {
                let target = self.chart_index("kov_w")?;
                self.transition(s, target)
            }
            _ => Ok(*s),
        }
    }
}

/// `T(X, Y) = (X, -Y) / (X² + Y²)`: `r ↦ 1/r`, `φ ↦ -φ`. An involution.
pub fn inversion(q: [f64; 2]) -> [f64; 2] {
    let s = q[0] * q[0] + q[1] * q[1];
    [q[0] / s, -q[1] / s]
}

/// Momentum in the chart at `q_new` from momentum `p_old` at `T(q_new)`.
fn inversion_pullback(q_new: [f64; 2], p_old: [f64; 2]) -> [f64; 2] {
    let [x, y] = q_new;
    let s = x * x + y * y;
    let s2 = s * s;
    // Jacobian of T at q_new, rows = components of T.
    let j = [[(y * y - x * x) / s2, -2.0 * x * y / s2], [2.0 * x * y / s2, (y * y - x * x) / s2]];
    [j[0][0] * p_old[0] + j[1][0] * p_old[1], j[0][1] * p_old[0] + j[1][1] * p_old[1]]
}

/// Gaussian curvature of `E₁ dq₁² + E₂ dq₂²` from second-order jets.
pub fn curvature_from_jets(e1: &Jet2, e2: &Jet2) -> f64 {
    let w = (e1.v * e2.v).sqrt();
    let w_d = |k: usize| (e1.g[k] * e2.v + e1.v * e2.g[k]) / (2.0 * w);
    // ∂₁(∂₁E₂ / W) + ∂₂(∂₂E₁ / W)
    let t1 = e2.h[0][0] / w - e2.g[0] * w_d(0) / (w * w);
    let t2 = e1.h[1][1] / w - e1.g[1] * w_d(1) / (w * w);
    -(t1 + t2) / (2.0 * w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inversion_is_an_involution() {
        let q = [0.3, -1.7];
        let back = inversion(inversion(q));
        assert!((back[0] - q[0]).abs() < 1e-15 && (back[1] - q[1]).abs() < 1e-15);
        let p = [0.2, 0.9];
        let qn = inversion(q);
        let pn = inversion_pullback(qn, p);
        let pb = inversion_pullback(q, pn);
        assert!((pb[0] - p[0]).abs() < 1e-14 && (pb[1] - p[1]).abs() < 1e-14);
    }

    #[test]
    fn flat_fixture_has_zero_curvature() {
        let sys = ChartedSystem::fixture_flat(false);
        assert_eq!(sys.gaussian_curvature(0, [0.3, 0.1]).unwrap(), 0.0);
        let s = PhaseState::new(0, [1.0, 2.0], [3.0, 4.0]);
        assert_eq!(sys.hamiltonian(&s).unwrap(), 12.5);
    }

    #[test]
    fn curvature_of_round_sphere_in_polar_form() {
        // dθ² + sin²θ dφ²
        let e1 = Jet2 { v: 1.0, ..Default::default() };
        let th: f64 = 0.7;
        let e2 = Jet2 {
            v: th.sin().powi(2),
            g: [2.0 * th.sin() * th.cos(), 0.0],
            h: [[2.0 * (2.0 * th).cos(), 0.0], [0.0, 0.0]],
        };
        assert!((curvature_from_jets(&e1, &e2) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn inverse_metric_jets_match_direct_differentiation() {
        let sys = ChartedSystem::fixture_harmonic(2.0);
        let j = sys.jets(0, [0.5, -0.25]).unwrap();
        assert_eq!(j.v.v, 0.3125);
        assert_eq!(j.v.g, [1.0, -0.5]);
        assert_eq!(j.v.h, [[2.0, 0.0], [0.0, 2.0]]);
        assert_eq!(j.inverse_metric()[0].v, 1.0);
    }
}

//! The Kovalevskaya and Goryachev systems on the embedded sphere, and the map
//! taking the `b = 0`, `a = 1`, `p = 0` member of the shifted family onto them.
//!
//! The shifted member in `(φ, u)`, `u > 0`, reads
//! `H = Ψ/√(1+u²) (dφ² + du²/(u√(1+u²))) + ½ Ψ cos φ` with `Ψ = √(1+u²) - u`,
//! and `x = Ψ cos φ`, `y = Ψ sin φ`, `z = ±√(1-Ψ²)` embeds it in the unit sphere.

use crate::chart::{Chart, ChartKind, ChartedSystem, Model, SystemKind, SystemParams};
use crate::error::{Error, Result};
use crate::family::{build_shifted, Scope};
use serde::{Deserialize, Serialize};

/// `Ψ(u) = √(1+u²) - u = 1/(√(1+u²) + u)`, evaluated without cancellation for `u ≥ 0`.
pub fn psi(u: f64) -> f64 {
    1.0 / ((1.0 + u * u).sqrt() + u)
}

/// `dΨ/du = -Ψ/√(1+u²)`.
pub fn psi_prime(u: f64) -> f64 {
    -psi(u) / (1.0 + u * u).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EmbeddedPotential {
    /// `-x`
    Kovalevskaya,
    /// `-2 B1 x y - B2 (x² - y²) - x`
    Goryachev { b1: f64, b2: f64 },
}

/// A system on `x² + y² + z² = 1` with kinetic form
/// `(w₁ẋ² + w₂ẏ² + w₃ż²)/(d₁x² + d₂y² + d₃z²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedSystem {
    pub numerator: [f64; 3],
    pub denominator: [f64; 3],
    pub potential: EmbeddedPotential,
}

impl EmbeddedSystem {
    pub fn kinetic(&self, x: [f64; 3], v: [f64; 3]) -> f64 {
        let num: f64 = (0..3).map(|i| self.numerator[i] * v[i] * v[i]).sum();
        num / self.denominator_at(x)
    }

    pub fn denominator_at(&self, x: [f64; 3]) -> f64 {
        (0..3).map(|i| self.denominator[i] * x[i] * x[i]).sum()
    }

    pub fn potential_at(&self, x: [f64; 3]) -> f64 {
        match self.potential {
            EmbeddedPotential::Kovalevskaya => -x[0],
            EmbeddedPotential::Goryachev { b1, b2 } => {
                -x[0] - 2.0 * b1 * x[0] * x[1] - b2 * (x[0] * x[0] - x[1] * x[1])
            }
        }
    }
}

pub fn kovalevskaya_reference() -> EmbeddedSystem {
    EmbeddedSystem {
        numerator: [1.0, 1.0, 2.0],
        denominator: [2.0, 2.0, 1.0],
        potential: EmbeddedPotential::Kovalevskaya,
    }
}

pub fn goryachev_reference(b1: f64, b2: f64) -> EmbeddedSystem {
    EmbeddedSystem { potential: EmbeddedPotential::Goryachev { b1, b2 }, ..kovalevskaya_reference() }
}

/// The shifted member `b = 0, a = 1, p = 0` on two charts: the literal `(φ, u)`
/// form (upper hemisphere, `u > 0`) and the regular `(φ, w)`, `u = w²`, form.
pub fn kov_chart_system() -> ChartedSystem {
    let params = SystemParams {
        kind: SystemKind::Kovalevskaya,
        a: 1.0,
        b: 0.0,
        p: Some(0.0),
        d: 0.0,
        c: 0.0,
        d1: 0.0,
        sign: 1.0,
        global: false,
    };
    ChartedSystem::from_parts(
        params,
        Model::Kovalevskaya,
        vec![Chart::new("kov_u", ["phi", "u"], ChartKind::KovU), Chart::new("kov_w", ["phi", "w"], ChartKind::KovW)],
    )
}

/// Point on the unit sphere for chart coordinates `(u, φ)`; `hemisphere` is the sign of `z`.
pub fn chart_to_sphere(u: f64, phi: f64, hemisphere: f64) -> [f64; 3] {
    let ps = psi(u);
    let (s, c) = phi.sin_cos();
    // 1 - Ψ² = 2uΨ
    [ps * c, ps * s, hemisphere.signum() * (2.0 * u * ps).sqrt()]
}

/// Inverse of [`chart_to_sphere`] away from the poles: returns `(u, φ, hemisphere)`.
pub fn sphere_to_chart(x: [f64; 3]) -> Result<(f64, f64, f64)> {
    let ps = x[0].hypot(x[1]);
    if !(ps > 0.0 && ps <= 1.0 + 1e-12) {
        return Err(Error::OutOfChart { chart: "kov_u".into(), q: [x[0], x[1]] });
    }
    let ps = ps.min(1.0);
    Ok((0.5 * (1.0 / ps - ps), x[1].atan2(x[0]), if x[2] < 0.0 { -1.0 } else { 1.0 }))
}

/// Jacobian `∂(x, y, z)/∂(u, φ)` of [`chart_to_sphere`], rows = (x, y, z).
fn sphere_jacobian(u: f64, phi: f64, hemisphere: f64) -> Result<[[f64; 2]; 3]> {
    if !(u > 0.0) {
        return Err(Error::DegenerateCoordinate { u });
    }
    let ps = psi(u);
    let dps = psi_prime(u);
    let root = (1.0 + u * u).sqrt();
    let (s, c) = phi.sin_cos();
    let dz = hemisphere.signum() * ps * ps / (root * (2.0 * u * ps).sqrt());
    Ok([[dps * c, -ps * s], [dps * s, ps * c], [dz, 0.0]])
}

/// Pullback of `Σ wᵢ dxᵢ²` to `(du, dφ)`.
fn pullback(weights: [f64; 3], jac: &[[f64; 2]; 3]) -> [[f64; 2]; 2] {
    let mut g = [[0.0; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            g[a][b] = (0..3).map(|i| weights[i] * jac[i][a] * jac[i][b]).sum();
        }
    }
    g
}

/// Largest entry of `|pullback(dx² + dy² + 2dz²) - Ψ² diag(1/(u√(1+u²)), 1)|` in `(du, dφ)`.
pub fn verify_metric_identity(u: f64, phi: f64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for h in [1.0, -1.0] {
        let g = pullback([1.0, 1.0, 2.0], &sphere_jacobian(u, phi, h)?);
        let ps = psi(u);
        let target = [[ps * ps / (u * (1.0 + u * u).sqrt()), 0.0], [0.0, ps * ps]];
        for a in 0..2 {
            for b in 0..2 {
                worst = worst.max((g[a][b] - target[a][b]).abs());
            }
        }
    }
    Ok(worst)
}

/// Outcome of comparing the chart system with the reference top.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KovalevskayaMatch {
    /// Fitted ratio of metric forms (chart / reference).
    pub kappa: f64,
    /// Fitted ratio of potentials (chart / reference).
    pub kappa_tilde: f64,
    /// Max over the grid of `|G_chart - 2 G_ref|`, relative to the largest entry of `G_chart` at the point.
    pub metric_mismatch: f64,
    /// Max over the grid of `|V_chart + ½ V_ref|`, relative to the largest `|V_chart|` on the grid.
    pub potential_mismatch: f64,
    /// Max of [`verify_metric_identity`] over the grid.
    pub identity_residual: f64,
    pub points: usize,
}

/// Geometric grid in `u` and uniform grid in `φ`, both hemispheres.
pub fn kov_grid(n_u: usize, n_phi: usize, u_lo: f64, u_hi: f64) -> Vec<(f64, f64)> {
    let mut pts = Vec::with_capacity(n_u * n_phi);
    for i in 0..n_u {
        let t = if n_u > 1 { i as f64 / (n_u - 1) as f64 } else { 0.0 };
        let u = u_lo * (u_hi / u_lo).powf(t);
        for j in 0..n_phi {
            pts.push((u, std::f64::consts::TAU * j as f64 / n_phi as f64));
        }
    }
    pts
}

/// Pulls the chart system back through the sphere map and compares it with
/// the reference, fitting both scale constants by least squares.
pub fn match_kovalevskaya(grid: &[(f64, f64)]) -> Result<KovalevskayaMatch> {
    let sys = kov_chart_system();
    let reference = kovalevskaya_reference();
    let chart = sys.chart_index("kov_u")?;
    let mut samples = Vec::with_capacity(2 * grid.len());
    for &(u, phi) in grid {
        for h in [1.0, -1.0] {
            let x = chart_to_sphere(u, phi, h);
            let jac = sphere_jacobian(u, phi, h)?;
            let den = reference.denominator_at(x);
            let g_ref = pullback(reference.numerator, &jac).map(|row| row.map(|v| v / den));
            let [e1, e2, v] = sys.metric_and_potential(chart, [phi, u])?;
            // chart form in (du, dφ) order
            let g_kov = [[e2, 0.0], [0.0, e1]];
            samples.push((g_kov, g_ref, v, reference.potential_at(x), verify_metric_identity(u, phi)?));
        }
    }
    let (mut num_k, mut den_k, mut num_v, mut den_v) = (0.0, 0.0, 0.0, 0.0);
    let mut v_scale: f64 = 0.0;
    for (gk, gr, vk, vr, _) in &samples {
        for a in 0..2 {
            for b in 0..2 {
                num_k += gk[a][b] * gr[a][b];
                den_k += gr[a][b] * gr[a][b];
            }
        }
        num_v += vk * vr;
        den_v += vr * vr;
        v_scale = v_scale.max(vk.abs());
    }
    let (kappa, kappa_tilde) = (num_k / den_k, num_v / den_v);
    let mut out = KovalevskayaMatch {
        kappa,
        kappa_tilde,
        metric_mismatch: 0.0,
        potential_mismatch: 0.0,
        identity_residual: 0.0,
        points: samples.len(),
    };
    for (gk, gr, vk, vr, id) in &samples {
        let scale = gk.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        for a in 0..2 {
            for b in 0..2 {
                out.metric_mismatch = out.metric_mismatch.max((gk[a][b] - 2.0 * gr[a][b]).abs() / scale);
            }
        }
        out.potential_mismatch = out.potential_mismatch.max((vk + 0.5 * vr).abs() / v_scale);
        out.identity_residual = out.identity_residual.max(*id);
    }
    Ok(out)
}

/// Comparison of the literal chart form with the shifted family at `b = 0, a = 1, p = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftedFormComparison {
    /// Max relative difference of `(E₁, E₂)`.
    pub metric: f64,
    /// Max difference of potentials at the same `(φ, u)`, relative to `max |V|`.
    pub potential_same_phi: f64,
    /// Same, with the chart potential evaluated at `φ + π`.
    pub potential_rotated: f64,
}

/// Evaluates the shifted-family formula at `b = 0, a = 1, p = 0` against the
/// chart system on `u ∈ [u_lo, u_hi]`.
///
/// The family formula's potential is `-½Ψ cos φ` while the chart system carries
/// `+½Ψ cos φ`; the two agree after the rotation `φ ↦ φ + π`, which is reported
/// separately.
pub fn compare_with_shifted_family(n_u: usize, n_phi: usize, u_lo: f64, u_hi: f64) -> Result<ShiftedFormComparison> {
    let fam = build_shifted(1.0, 0.0, 0.0, Scope::Local)?;
    let kov = kov_chart_system();
    let kc = kov.chart_index("kov_u")?;
    let mut out = ShiftedFormComparison { metric: 0.0, potential_same_phi: 0.0, potential_rotated: 0.0 };
    let mut v_scale: f64 = 0.0;
    let mut diffs = Vec::new();
    for i in 0..n_u {
        let u = u_lo + (u_hi - u_lo) * i as f64 / (n_u.max(2) - 1) as f64;
        for j in 0..n_phi {
            let phi = std::f64::consts::TAU * j as f64 / n_phi as f64;
            let [f1, f2, fv] = fam.metric_and_potential(0, [phi, u])?;
            let [k1, k2, kv] = kov.metric_and_potential(kc, [phi, u])?;
            let kv_rot = kov.metric_and_potential(kc, [phi + std::f64::consts::PI, u])?[2];
            out.metric = out.metric.max(((f1 - k1) / k1).abs()).max(((f2 - k2) / k2).abs());
            v_scale = v_scale.max(kv.abs());
            diffs.push(((fv - kv).abs(), (fv - kv_rot).abs()));
        }
    }
    for (same, rot) in diffs {
        out.potential_same_phi = out.potential_same_phi.max(same / v_scale);
        out.potential_rotated = out.potential_rotated.max(rot / v_scale);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        let k = kovalevskaya_reference();
        assert_eq!(k.kinetic([0.0, 0.0, 1.0], [1.0, 0.0, 0.0]), 1.0);
        assert_eq!(k.potential_at([1.0, 0.0, 0.0]), -1.0);
        let g = goryachev_reference(1.0, 0.0);
        let h = 0.5f64.sqrt();
        assert!((g.potential_at([h, h, 0.0]) - (-1.0 - h)).abs() < 1e-15);
        assert_eq!(goryachev_reference(0.0, 1.0).potential_at([0.0, 1.0, 0.0]), 1.0);
    }

    #[test]
    fn psi_algebra() {
        for &u in &[0.0, 1e-3, 0.5, 1.0, 7.0, 1e3] {
            let p = psi(u);
            assert!((p * p + 2.0 * u * p - 1.0).abs() < 1e-14);
            assert!(((1.0 + u * u).sqrt() - 0.5 * (p + 1.0 / p)).abs() < 1e-13 * (1.0 + u));
        }
        assert_eq!(chart_to_sphere(0.0, 0.0, 1.0), [1.0, 0.0, 0.0]);
    }

    #[test]
    fn chart_values() {
        let sys = kov_chart_system();
        let [e1, _, v] = sys.metric_and_potential(0, [0.0, 1.0]).unwrap();
        let r2 = 2f64.sqrt();
        assert!((e1 - 1.0 / (r2 * (r2 + 1.0))).abs() < 1e-15);
        assert!((v - 1.0 / (2.0 * (r2 + 1.0))).abs() < 1e-15);
        assert!(matches!(sys.metric_and_potential(0, [0.0, 0.0]), Err(Error::DegenerateCoordinate { .. })));
    }

    #[test]
    fn metric_identity_examples() {
        assert!(verify_metric_identity(1.0, 0.3).unwrap() < 1e-12);
        assert!(verify_metric_identity(0.01, 0.0).unwrap() < 1e-10);
        let a = verify_metric_identity(2.0, 0.1).unwrap();
        let b = verify_metric_identity(2.0, 2.9).unwrap();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn w_chart_agrees_with_u_chart() {
        let sys = kov_chart_system();
        let s = crate::chart::PhaseState::new(0, [0.7, 0.4], [0.3, -0.2]);
        let w = sys.transition(&s, 1).unwrap();
        assert!((sys.hamiltonian(&s).unwrap() - sys.hamiltonian(&w).unwrap()).abs() < 1e-14);
    }
}

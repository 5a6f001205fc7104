//! The first-order quartic ODE `u'^4 = b + b1 u + a u^2 + u^4` and its
//! third-order companion `2u''^2 - 3u^2 + u'u''' = a/2`.
//!
//! Every jet produced here is closed under the ODE: `u'` comes from the quartic
//! root, and `u''`, `u'''`, `u''''` follow by differentiation, so the jets are
//! exact up to roundoff once `u` is known. [`solve_u`] integrates the ODE
//! adaptively; [`compute_pole_functions`] builds the smooth functions that
//! describe the solution near the two poles `y -> ±∞` of the sphere.

use crate::cheb::{extrema_nodes, ChebSeries};
use crate::error::{Error, Result};
use crate::ode::Dopri5;
use num_dual::{Dual2_64, DualNum};
use serde::{Deserialize, Serialize};

/// Version tag written into every JSON artifact of this module.
pub const SCHEMA_VERSION: u32 = 1;

/// Sign of `u'`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Increasing,
    Decreasing,
}

impl Branch {
    pub fn sign(self) -> f64 {
        match self {
            Branch::Increasing => 1.0,
            Branch::Decreasing => -1.0,
        }
    }
}

/// Constants of `u'^4 = b + b1 u + a u^2 + u^4`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilyParams {
    pub a: f64,
    pub b: f64,
    pub b1: f64,
    pub branch: Branch,
}

impl FamilyParams {
    pub fn new(a: f64, b: f64) -> Self {
        Self { a, b, b1: 0.0, branch: Branch::Increasing }
    }

    /// `b = 1`, `b1 = 0`: the normalization used for the global sphere families.
    pub fn global(a: f64) -> Self {
        Self::new(a, 1.0)
    }

    pub fn with_b1(mut self, b1: f64) -> Self {
        self.b1 = b1;
        self
    }

    pub fn with_branch(mut self, branch: Branch) -> Self {
        self.branch = branch;
        self
    }

    /// Whether every solution exists on the whole line (`b = 1`, `b1 = 0`, `a > -2`).
    pub fn is_global(&self) -> bool {
        self.b == 1.0 && self.b1 == 0.0 && self.a > -2.0
    }
}

/// `A(u) = b + b1 u + a u^2 + u^4`.
pub fn quartic_rhs(u: f64, params: &FamilyParams) -> f64 {
    let u2 = u * u;
    params.b + params.b1 * u + params.a * u2 + u2 * u2
}

/// `A'(u)`.
fn quartic_rhs_prime(u: f64, params: &FamilyParams) -> f64 {
    params.b1 + 2.0 * params.a * u + 4.0 * u * u * u
}

/// Value of `u` and its first four `y`-derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UJet {
    pub u: f64,
    pub u1: f64,
    pub u2: f64,
    pub u3: f64,
    pub u4: f64,
}

/// Closes the jet at `u` using the ODE and its derivatives.
pub fn jet_from_u(u: f64, params: &FamilyParams) -> Result<UJet> {
    let a_val = quartic_rhs(u, params);
    if !(a_val > 0.0) {
        return Err(Error::NonPositiveA { u, value: a_val });
    }
    let u1 = params.branch.sign() * a_val.sqrt().sqrt();
    let u2 = quartic_rhs_prime(u, params) / (4.0 * u1 * u1);
    let u3 = (0.5 * params.a + 3.0 * u * u - 2.0 * u2 * u2) / u1;
    let u4 = (6.0 * u * u1 - 5.0 * u2 * u3) / u1;
    Ok(UJet { u, u1, u2, u3, u4 })
}

/// `2u''^2 - 3u^2 + u'u''' - a/2`; zero along any solution.
pub fn third_order_residual(jet: &UJet, a: f64) -> f64 {
    2.0 * jet.u2 * jet.u2 - 3.0 * jet.u * jet.u + jet.u1 * jet.u3 - 0.5 * a
}

/// A numerically solved `u(y)` with `u(0) = u0`, evaluable anywhere in its interval.
#[derive(Debug, Clone)]
pub struct USolution {
    params: FamilyParams,
    u0: f64,
    tol: f64,
    ys: Vec<f64>,
    us: Vec<f64>,
    jets: Vec<UJet>,
}

/// Serialized form of a [`USolution`].
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct USolutionRecord {
    pub schema: u32,
    pub kind: String,
    pub a: f64,
    pub b: f64,
    pub b1: f64,
    pub branch: Branch,
    pub u0: f64,
    pub tol: f64,
    pub grid: Vec<f64>,
    pub u: Vec<f64>,
}

/// Largest step allowed so that quintic Hermite dense output stays near roundoff.
const DENSE_STEP_MAX: f64 = 0.05;

/// Integrates `u' = ±A(u)^{1/4}` from `u(0) = u0` over `y_range` (which must contain 0).
pub fn solve_u(params: FamilyParams, u0: f64, y_range: (f64, f64), tol: f64) -> Result<USolution> {
    let (lo, hi) = y_range;
    if !(lo <= 0.0 && 0.0 <= hi) || !(tol > 0.0) {
        return Err(Error::BadParams(format!("y range [{lo}, {hi}] must contain 0 and tol must be positive")));
    }
    let a0 = quartic_rhs(u0, &params);
    if !(a0 > 0.0) {
        return Err(Error::SingularA { y: 0.0, value: a0 });
    }
    let sign = params.branch.sign();
    let rhs = |y: f64, u: f64| {
        let v = quartic_rhs(u, &params);
        if v > 0.0 {
            Ok(sign * v.sqrt().sqrt())
        } else {
            Err(Error::SingularA { y, value: v })
        }
    };
    let solver = Dopri5::new(tol).h_max(DENSE_STEP_MAX);
    let forward = if hi > 0.0 { solver.integrate(rhs, 0.0, u0, &[hi])? } else { vec![(0.0, u0)] };
    let backward = if lo < 0.0 { solver.integrate(rhs, 0.0, u0, &[lo])? } else { vec![(0.0, u0)] };

    let mut ys = Vec::with_capacity(forward.len() + backward.len());
    let mut us = Vec::with_capacity(ys.capacity());
    for &(y, u) in backward.iter().skip(1).rev().chain(forward.iter()) {
        ys.push(y);
        us.push(u);
    }
    USolution::from_nodes(params, u0, tol, ys, us)
}

impl USolution {
    fn from_nodes(params: FamilyParams, u0: f64, tol: f64, ys: Vec<f64>, us: Vec<f64>) -> Result<Self> {
        let jets = ys
            .iter()
            .zip(&us)
            .map(|(&y, &u)| jet_from_u(u, &params).map_err(|_| Error::SingularA { y, value: quartic_rhs(u, &params) }))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { params, u0, tol, ys, us, jets })
    }

    pub fn params(&self) -> &FamilyParams {
        &self.params
    }

    pub fn u0(&self) -> f64 {
        self.u0
    }

    pub fn range(&self) -> (f64, f64) {
        (self.ys[0], *self.ys.last().unwrap())
    }

    /// Accepted integration nodes `(y, u)`.
    pub fn nodes(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.ys.iter().copied().zip(self.us.iter().copied())
    }

    /// `u(y)` by quintic Hermite interpolation between integration nodes.
    pub fn u(&self, y: f64) -> Result<f64> {
        let (lo, hi) = self.range();
        if !(lo <= y && y <= hi) {
            return Err(Error::OutOfRange { y, lo, hi });
        }
        let i = match self.ys.binary_search_by(|v| v.partial_cmp(&y).unwrap()) {
            Ok(i) => return Ok(self.us[i]),
            Err(i) => i - 1,
        };
        let h = self.ys[i + 1] - self.ys[i];
        let t = (y - self.ys[i]) / h;
        let (t2, t3) = (t * t, t * t * t);
        let (t4, t5) = (t3 * t, t3 * t2);
        let l = &self.jets[i];
        let r = &self.jets[i + 1];
        let h0 = 1.0 - 10.0 * t3 + 15.0 * t4 - 6.0 * t5;
        let h1 = t - 6.0 * t3 + 8.0 * t4 - 3.0 * t5;
        let h2 = 0.5 * (t2 - 3.0 * t3 + 3.0 * t4 - t5);
        let h3 = 10.0 * t3 - 15.0 * t4 + 6.0 * t5;
        let h4 = -4.0 * t3 + 7.0 * t4 - 3.0 * t5;
        let h5 = 0.5 * (t3 - 2.0 * t4 + t5);
        Ok(l.u * h0 + h * l.u1 * h1 + h * h * l.u2 * h2 + r.u * h3 + h * r.u1 * h4 + h * h * r.u2 * h5)
    }

    /// Closed jet at `y`.
    pub fn jet(&self, y: f64) -> Result<UJet> {
        let u = self.u(y)?;
        jet_from_u(u, &self.params).map_err(|_| Error::SingularA { y, value: quartic_rhs(u, &self.params) })
    }

    pub fn to_record(&self) -> USolutionRecord {
        USolutionRecord {
            schema: SCHEMA_VERSION,
            kind: "u_solution".into(),
            a: self.params.a,
            b: self.params.b,
            b1: self.params.b1,
            branch: self.params.branch,
            u0: self.u0,
            tol: self.tol,
            grid: self.ys.clone(),
            u: self.us.clone(),
        }
    }

    pub fn from_record(rec: &USolutionRecord) -> Result<Self> {
        if rec.schema != SCHEMA_VERSION || rec.kind != "u_solution" {
            return Err(Error::Format(format!("unsupported u_solution record (schema {})", rec.schema)));
        }
        if rec.grid.len() != rec.u.len() || rec.grid.is_empty() {
            return Err(Error::Format("grid and u arrays differ in length".into()));
        }
        let params = FamilyParams { a: rec.a, b: rec.b, b1: rec.b1, branch: rec.branch };
        Self::from_nodes(params, rec.u0, rec.tol, rec.grid.clone(), rec.u.clone())
    }
}

/// Smooth functions of `s = e^{∓2y}` describing the `b = 1`, `b1 = 0` solution
/// with `u(0) = 0` near the poles:
///
/// * `u(y) = e^y g(e^{-2y})`,
/// * `u'(y) = e^y ν(e^{-2y})`,
/// * `u'^2 (u'' - u) = e^{-y} μ(e^{-2y})`,
/// * `ξ(t) = ∫_t^1 μ/ν`, so that `u'^2 - u^2 = 1 + ξ(e^{±2y})`.
///
/// The functions are stored on `[0, 1]`; for `s > 1` they are continued through
/// the reflections `g(s) = -s g(1/s)`, `ν(s) = s ν(1/s)`, `μ(s) = -μ(1/s)/s`,
/// `ξ(s) = ξ(1/s)`, which express the oddness of `u`.
#[derive(Debug, Clone)]
pub struct PoleFunctions {
    a: f64,
    n_grid: usize,
    tol: f64,
    /// `g(s) / (1 - s)` on `[0, 1]`, so that `g(1) = 0` holds exactly.
    g_over_gap: ChebSeries,
    /// Antiderivative of `μ/ν` on `[0, 1]`.
    xi_antiderivative: ChebSeries,
    xi_anchor: f64,
    node_s: Vec<f64>,
    node_g: Vec<f64>,
}

/// Serialized form of [`PoleFunctions`]: nodal samples plus metadata.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PoleFunctionsRecord {
    pub schema: u32,
    pub kind: String,
    pub a: f64,
    pub b: f64,
    pub b1: f64,
    pub u0: f64,
    pub tol: f64,
    pub grid: Vec<f64>,
    pub g: Vec<f64>,
    pub nu: Vec<f64>,
    pub mu: Vec<f64>,
    pub xi: Vec<f64>,
}

/// Right side of the `g` equation: `g' = (g - R^{1/4}) / (2s)` with
/// `R = s² + a s g² + g⁴`, written without the removable `1/s` when `g ≥ 0`.
fn g_slope(a: f64, s: f64, g: f64) -> f64 {
    let r = s * s + a * s * g * g + g.powi(4);
    let r4 = r.sqrt().sqrt();
    if g >= 0.0 {
        -(s + a * g * g) / (2.0 * (r4 + g) * (r.sqrt() + g * g))
    } else {
        (g - r4) / (2.0 * s)
    }
}

/// Tail tolerance for accepting the Chebyshev representation of `g`.
const POLE_TAIL_TOL: f64 = 1e-11;

/// Builds the pole functions for `b = 1`, `b1 = 0` and a given `a > -2`.
pub fn compute_pole_functions(a: f64, n_grid: usize, tol: f64) -> Result<PoleFunctions> {
    if !(a > -2.0) {
        return Err(Error::BadParams(format!("pole functions need a > -2, got a = {a}")));
    }
    if n_grid < 8 || !(tol > 0.0) {
        return Err(Error::BadParams("n_grid must be at least 8 and tol positive".into()));
    }
    let nodes = extrema_nodes(n_grid, 0.0, 1.0);
    let path = Dopri5::new(tol).h_max(0.02).integrate(
        |s, g| {
            let v = g_slope(a, s, g);
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::IntegrationFailure(format!("g equation singular at s = {s}")))
            }
        },
        1.0,
        0.0,
        &nodes[1..],
    )?;
    // Pick the node values back out of the step list (targets land exactly).
    let mut node_g = Vec::with_capacity(n_grid);
    let mut it = path.iter();
    for &s in &nodes {
        let (_, g) = it
            .find(|(t, _)| *t == s)
            .copied()
            .ok_or_else(|| Error::IntegrationFailure(format!("integration did not reach node s = {s}")))?;
        node_g.push(g);
    }
    PoleFunctions::from_nodal(a, tol, nodes, node_g)
}

impl PoleFunctions {
    fn from_nodal(a: f64, tol: f64, node_s: Vec<f64>, node_g: Vec<f64>) -> Result<Self> {
        let n_grid = node_s.len();
        let ratio: Vec<f64> = node_s
            .iter()
            .zip(&node_g)
            .map(|(&s, &g)| if s == 1.0 { -g_slope(a, 1.0, 0.0) } else { g / (1.0 - s) })
            .collect();
        let g_over_gap = ChebSeries::from_nodal(&ratio, 0.0, 1.0);
        let tail = g_over_gap.relative_tail(3);
        if tail > POLE_TAIL_TOL {
            return Err(Error::IntegrationFailure(format!(
                "g not resolved by {n_grid} Chebyshev nodes (tail {tail:e}); increase n_grid"
            )));
        }
        let mut pf = Self {
            a,
            n_grid,
            tol,
            g_over_gap,
            xi_antiderivative: ChebSeries { coeffs: vec![0.0], lo: 0.0, hi: 1.0 },
            xi_anchor: 0.0,
            node_s,
            node_g,
        };
        let q: Vec<f64> = pf.node_s.iter().map(|&s| pf.inner_mu(s) / pf.inner_nu(s)).collect();
        pf.xi_antiderivative = ChebSeries::from_nodal(&q, 0.0, 1.0).antiderivative();
        pf.xi_anchor = pf.xi_antiderivative.eval(1.0);
        Ok(pf)
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn n_grid(&self) -> usize {
        self.n_grid
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    fn inner_g<D: DualNum<f64> + Copy>(&self, s: D) -> D {
        (D::from(1.0) - s) * self.g_over_gap.eval_generic(s)
    }

    fn inner_radicand<D: DualNum<f64> + Copy>(&self, s: D, g: D) -> D {
        let g2 = g * g;
        s * s + s * g2 * self.a + g2 * g2
    }

    fn inner_nu<D: DualNum<f64> + Copy>(&self, s: D) -> D {
        let g = self.inner_g(s);
        self.inner_radicand(s, g).sqrt().sqrt()
    }

    /// `μ = g (a(s + a g²)/(g² + √R) - 2) / (2 (g² + √R))`, free of the `0/0` at `s = 0`.
    fn inner_mu<D: DualNum<f64> + Copy>(&self, s: D) -> D {
        let g = self.inner_g(s);
        let g2 = g * g;
        let root = self.inner_radicand(s, g).sqrt();
        let denom = g2 + root;
        g * ((s + g2 * self.a) * self.a / denom - 2.0) / (denom * 2.0)
    }

    fn inner_xi<D: DualNum<f64> + Copy>(&self, s: D) -> D {
        D::from(self.xi_anchor) - self.xi_antiderivative.eval_generic(s)
    }

    fn check_domain(s: f64) {
        assert!(s >= 0.0 && s.is_finite(), "pole functions are defined for s >= 0, got {s}");
    }

    /// `g` with first and second derivatives.
    pub fn g_jet(&self, s: f64) -> Dual2_64 {
        self.g_generic(Dual2_64::new(s, 1.0, 0.0))
    }

    pub fn nu_jet(&self, s: f64) -> Dual2_64 {
        self.nu_generic(Dual2_64::new(s, 1.0, 0.0))
    }

    pub fn mu_jet(&self, s: f64) -> Dual2_64 {
        self.mu_generic(Dual2_64::new(s, 1.0, 0.0))
    }

    pub fn xi_jet(&self, s: f64) -> Dual2_64 {
        self.xi_generic(Dual2_64::new(s, 1.0, 0.0))
    }

    pub fn g_generic<D: DualNum<f64> + Copy>(&self, s: D) -> D {
        Self::check_domain(s.re());
        if s.re() <= 1.0 {
            self.inner_g(s)
        } else {
            -s * self.inner_g(s.recip())
        }
    }

    pub fn nu_generic<D: DualNum<f64> + Copy>(&self, s: D) -> D {
        Self::check_domain(s.re());
        if s.re() <= 1.0 {
            self.inner_nu(s)
        } else {
            s * self.inner_nu(s.recip())
        }
    }

    pub fn mu_generic<D: DualNum<f64> + Copy>(&self, s: D) -> D {
        Self::check_domain(s.re());
        if s.re() <= 1.0 {
            self.inner_mu(s)
        } else {
            -self.inner_mu(s.recip()) / s
        }
    }

    pub fn xi_generic<D: DualNum<f64> + Copy>(&self, s: D) -> D {
        Self::check_domain(s.re());
        if s.re() <= 1.0 {
            self.inner_xi(s)
        } else {
            self.inner_xi(s.recip())
        }
    }

    pub fn g(&self, s: f64) -> f64 {
        self.g_generic(s)
    }

    pub fn nu(&self, s: f64) -> f64 {
        self.nu_generic(s)
    }

    pub fn mu(&self, s: f64) -> f64 {
        self.mu_generic(s)
    }

    pub fn xi(&self, s: f64) -> f64 {
        self.xi_generic(s)
    }

    /// `u(y)` of the odd solution, reconstructed from `g`.
    pub fn u(&self, y: f64) -> f64 {
        if y >= 0.0 {
            y.exp() * self.g((-2.0 * y).exp())
        } else {
            -(-y).exp() * self.g((2.0 * y).exp())
        }
    }

    /// `u'(y)` of the odd solution, reconstructed from `ν`.
    pub fn u_prime(&self, y: f64) -> f64 {
        if y >= 0.0 {
            y.exp() * self.nu((-2.0 * y).exp())
        } else {
            (-y).exp() * self.nu((2.0 * y).exp())
        }
    }

    /// Inverse of [`PoleFunctions::u`] (safeguarded Newton; `u` is increasing).
    pub fn y_of_u(&self, u: f64) -> f64 {
        if u == 0.0 {
            return 0.0;
        }
        // u is odd; work with |u| and restore the sign.
        let target = u.abs();
        let mut lo = 0.0;
        let mut hi = 1.0;
        while self.u(hi) < target {
            lo = hi;
            hi *= 2.0;
        }
        let mut y = target.asinh().clamp(lo, hi);
        for _ in 0..100 {
            let f = self.u(y) - target;
            if f > 0.0 {
                hi = y;
            } else {
                lo = y;
            }
            let mut next = y - f / self.u_prime(y);
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - y).abs() <= 4.0 * f64::EPSILON * y.abs().max(1.0) {
                y = next;
                break;
            }
            y = next;
        }
        y.copysign(u)
    }

    pub fn to_record(&self) -> PoleFunctionsRecord {
        PoleFunctionsRecord {
            schema: SCHEMA_VERSION,
            kind: "pole_functions".into(),
            a: self.a,
            b: 1.0,
            b1: 0.0,
            u0: 0.0,
            tol: self.tol,
            grid: self.node_s.clone(),
            g: self.node_g.clone(),
            nu: self.node_s.iter().map(|&s| self.nu(s)).collect(),
            mu: self.node_s.iter().map(|&s| self.mu(s)).collect(),
            xi: self.node_s.iter().map(|&s| self.xi(s)).collect(),
        }
    }

    /// Rebuilds the functions from the nodal `g` samples of a record.
    pub fn from_record(rec: &PoleFunctionsRecord) -> Result<Self> {
        if rec.schema != SCHEMA_VERSION || rec.kind != "pole_functions" {
            return Err(Error::Format(format!("unsupported pole_functions record (schema {})", rec.schema)));
        }
        if rec.grid.len() != rec.g.len() || rec.grid.len() < 8 {
            return Err(Error::Format("grid and g arrays differ in length".into()));
        }
        let expected = extrema_nodes(rec.grid.len(), 0.0, 1.0);
        if expected.iter().zip(&rec.grid).any(|(x, y)| (x - y).abs() > 1e-15) {
            return Err(Error::Format("pole-function grid is not the Chebyshev extrema grid".into()));
        }
        Self::from_nodal(rec.a, rec.tol, expected, rec.g.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quartic_rhs_examples() {
        assert_eq!(quartic_rhs(0.0, &FamilyParams::new(5.0, 1.0)), 1.0);
        assert_eq!(quartic_rhs(1.0, &FamilyParams::new(2.0, 1.0)), 4.0);
        assert_eq!(quartic_rhs(1.0, &FamilyParams::new(0.0, 0.0).with_b1(4.0)), 5.0);
    }

    #[test]
    fn jet_examples() {
        let j = jet_from_u(0.0, &FamilyParams::new(0.0, 1.0)).unwrap();
        assert_eq!((j.u, j.u1, j.u2, j.u3, j.u4), (0.0, 1.0, 0.0, 0.0, 0.0));
        // u = sinh y at y = 0.
        let j = jet_from_u(0.0, &FamilyParams::new(2.0, 1.0)).unwrap();
        assert_eq!((j.u1, j.u2, j.u3), (1.0, 0.0, 1.0));
        assert!(matches!(jet_from_u(0.0, &FamilyParams::new(0.0, -1.0)), Err(Error::NonPositiveA { .. })));
        assert!(matches!(jet_from_u(0.0, &FamilyParams::new(1.0, 0.0)), Err(Error::NonPositiveA { .. })));
    }

    #[test]
    fn decreasing_branch_flips_odd_derivatives() {
        let p = FamilyParams::new(1.0, 1.0);
        let up = jet_from_u(0.7, &p).unwrap();
        let down = jet_from_u(0.7, &p.with_branch(Branch::Decreasing)).unwrap();
        assert_eq!(down.u1, -up.u1);
        assert_eq!(down.u2, up.u2);
        assert_eq!(down.u3, -up.u3);
        assert!(third_order_residual(&down, 1.0).abs() < 1e-12);
    }

    #[test]
    fn residual_examples() {
        let j = UJet { u: 0.0, u1: 1.0, u2: 0.0, u3: 0.0, u4: 0.0 };
        assert_eq!(third_order_residual(&j, 0.0), 0.0);
        let j = UJet { u: 1.0, u1: 1.0, u2: 1.0, u3: 1.0, u4: 0.0 };
        assert_eq!(third_order_residual(&j, 0.0), 0.0);
    }

    #[test]
    fn sinh_closed_form() {
        let sol = solve_u(FamilyParams::new(2.0, 1.0), 0.0, (-3.0, 3.0), 1e-12).unwrap();
        for i in 0..=600 {
            let y = -3.0 + 0.01 * i as f64;
            let j = sol.jet(y).unwrap();
            assert!((j.u - y.sinh()).abs() < 1e-8, "y={y}");
            assert!((j.u2 - j.u).abs() < 1e-10);
        }
    }

    #[test]
    fn negative_b_is_singular() {
        let err = solve_u(FamilyParams::new(0.0, -1.0), 0.0, (-1.0, 1.0), 1e-10).unwrap_err();
        assert!(matches!(err, Error::SingularA { .. }));
        let err = solve_u(FamilyParams::new(1.0, 0.0), 0.0, (-1.0, 1.0), 1e-10).unwrap_err();
        assert!(matches!(err, Error::SingularA { .. }));
    }

    #[test]
    fn out_of_range_evaluation() {
        let sol = solve_u(FamilyParams::new(0.0, 1.0), 0.0, (-1.0, 1.0), 1e-10).unwrap();
        assert!(matches!(sol.u(1.5), Err(Error::OutOfRange { .. })));
        assert_eq!(sol.u(0.0).unwrap(), 0.0);
    }

    #[test]
    fn record_round_trip_preserves_evaluation() {
        let sol = solve_u(FamilyParams::new(1.0, 1.0), 0.2, (-2.0, 2.0), 1e-11).unwrap();
        let json = serde_json::to_string(&sol.to_record()).unwrap();
        let back = USolution::from_record(&serde_json::from_str(&json).unwrap()).unwrap();
        for &y in &[-1.7, 0.0, 0.3, 1.99] {
            assert_eq!(sol.u(y).unwrap(), back.u(y).unwrap());
        }
        let pf = compute_pole_functions(1.0, 48, 1e-13).unwrap();
        let json = serde_json::to_string(&pf.to_record()).unwrap();
        let back = PoleFunctions::from_record(&serde_json::from_str(&json).unwrap()).unwrap();
        for &s in &[0.0, 0.3, 1.0, 2.5] {
            assert_eq!(pf.mu(s), back.mu(s));
        }
    }

    #[test]
    fn pole_functions_reject_small_a() {
        assert!(matches!(compute_pole_functions(-2.0, 48, 1e-12), Err(Error::BadParams(_))));
    }

    #[test]
    fn pole_functions_for_round_sphere() {
        // a = 2: u = sinh y, g = (1 - s)/2, ν = (1 + s)/2, μ = 0, ξ = 0.
        let pf = compute_pole_functions(2.0, 32, 1e-13).unwrap();
        for &s in &[0.0, 0.1, 0.5, 0.9, 1.0, 3.0] {
            assert!((pf.g(s) - 0.5 * (1.0 - s)).abs() < 1e-12, "s={s}");
            assert!((pf.nu(s) - 0.5 * (1.0 + s)).abs() < 1e-12);
            assert!(pf.mu(s).abs() < 1e-12);
            assert!(pf.xi(s).abs() < 1e-12);
        }
    }

    #[test]
    fn pole_function_exact_anchors() {
        for &a in &[-1.5, -1.0, 0.0, 1.0, 3.0] {
            let pf = compute_pole_functions(a, 64, 1e-13).unwrap();
            assert_eq!(pf.g(1.0), 0.0);
            assert_eq!(pf.xi(1.0), 0.0);
            assert!(pf.g(0.0) > 0.0 && pf.g(0.0).is_finite());
            assert!((0..=200).all(|i| pf.nu(i as f64 / 200.0) > 0.0));
        }
    }
}

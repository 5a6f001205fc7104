//! Symplectic time stepping on charted systems, chart switching and Poincaré sections.

use crate::chart::{ChartedSystem, PhaseState};
use crate::error::{Error, Result};
use faer::linalg::solvers::Solve;
use faer::Mat;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Second order.
    ImplicitMidpoint,
    /// Symmetric triple-jump composition of the midpoint rule; fourth order.
    TripleJump,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub scheme: Scheme,
    pub newton_tol: f64,
    pub max_newton_iters: usize,
    /// `(r_low, r_high)`: a pole chart is left once its radius exceeds `r_high`;
    /// the new chart then starts at radius `1/r_high`, inside `r_low`.
    pub switch_band: (f64, f64),
    /// Move into the sphere atlas before integrating and switch charts on the way.
    pub use_atlas: bool,
    /// Record every n-th step.
    pub sample_every: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            scheme: Scheme::TripleJump,
            newton_tol: 1e-14,
            max_newton_iters: 30,
            switch_band: (0.5, 2.0),
            use_atlas: true,
            sample_every: 1,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.switch_band;
        if !(self.dt.is_finite() && self.dt != 0.0) {
            return Err(Error::BadParams(format!("dt must be finite and nonzero, got {}", self.dt)));
        }
        if !(self.newton_tol > 0.0) || self.max_newton_iters == 0 || self.sample_every == 0 {
            return Err(Error::BadParams("newton_tol, max_newton_iters and sample_every must be positive".into()));
        }
        if !(0.0 < lo && lo < 1.0 && 1.0 < hi && lo * hi <= 1.0) {
            return Err(Error::BadParams(format!(
                "switch band ({lo}, {hi}) must satisfy 0 < r_low < 1 < r_high <= 1/r_low"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub state: PhaseState,
    pub h: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchEvent {
    pub t: f64,
    pub from: usize,
    pub to: usize,
    pub h_before: f64,
    pub h_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub switches: Vec<SwitchEvent>,
    pub config: IntegratorConfig,
}

impl Trajectory {
    /// `max |H(t) - H(0)| / |H(0)|` (absolute when `H(0) = 0`).
    pub fn relative_energy_drift(&self) -> f64 {
        let Some(first) = self.samples.first() else { return 0.0 };
        let scale = if first.h == 0.0 { 1.0 } else { first.h.abs() };
        self.samples.iter().fold(0.0, |m: f64, s| m.max((s.h - first.h).abs() / scale))
    }

    pub fn last(&self) -> Option<&Sample> {
        self.samples.last()
    }
}

pub fn eval_h(sys: &ChartedSystem, s: &PhaseState) -> Result<f64> {
    sys.hamiltonian(s)
}

/// `(∂H/∂q, ∂H/∂p)` and the Hessian, ordered `(q₁, q₂, p₁, p₂)`.
fn gradient_hessian(sys: &ChartedSystem, chart: usize, z: [f64; 4]) -> Result<([f64; 4], [[f64; 4]; 4])> {
    let jets = sys.jets(chart, [z[0], z[1]])?;
    let g = jets.inverse_metric();
    let p = [z[2], z[3]];
    let mut grad = [0.0; 4];
    let mut hess = [[0.0; 4]; 4];
    for k in 0..2 {
        grad[k] = jets.v.g[k] + 0.5 * (g[0].g[k] * p[0] * p[0] + g[1].g[k] * p[1] * p[1]);
        grad[2 + k] = g[k].v * p[k];
        for l in 0..2 {
            hess[k][l] = jets.v.h[k][l] + 0.5 * (g[0].h[k][l] * p[0] * p[0] + g[1].h[k][l] * p[1] * p[1]);
            hess[k][2 + l] = g[l].g[k] * p[l];
            hess[2 + l][k] = hess[k][2 + l];
        }
        hess[2 + k][2 + k] = g[k].v;
    }
    Ok((grad, hess))
}

/// `J ∇H`: `(∂H/∂p, -∂H/∂q)`.
fn symplectic(v: [f64; 4]) -> [f64; 4] {
    [v[2], v[3], -v[0], -v[1]]
}

fn midpoint_step(sys: &ChartedSystem, s: &PhaseState, h: f64, cfg: &IntegratorConfig, t: f64) -> Result<PhaseState> {
    let z0 = [s.q[0], s.q[1], s.p[0], s.p[1]];
    let (grad, _) = gradient_hessian(sys, s.chart, z0)?;
    // Explicit Euler half step as the initial midpoint guess.
    let f0 = symplectic(grad);
    let mut m: [f64; 4] = std::array::from_fn(|i| z0[i] + 0.5 * h * f0[i]);
    let mut last = f64::INFINITY;
    for _ in 0..cfg.max_newton_iters {
        let (grad, hess) = match gradient_hessian(sys, s.chart, m) {
            Ok(v) => v,
            Err(Error::OutOfChart { .. })
            | Err(Error::NonPositiveA { .. })
            | Err(Error::DegenerateCoordinate { .. }) => {
                return Err(Error::NewtonDivergence { t, residual: f64::INFINITY });
            }
            Err(e) => return Err(e),
        };
        let f = symplectic(grad);
        let res: [f64; 4] = std::array::from_fn(|i| m[i] - z0[i] - 0.5 * h * f[i]);
        // Jacobian I - (h/2) J Hess.
        let jac = Mat::from_fn(4, 4, |i, j| {
            let js = match i {
                0 => hess[2][j],
                1 => hess[3][j],
                2 => -hess[0][j],
                _ => -hess[1][j],
            };
            f64::from(i == j) - 0.5 * h * js
        });
        let rhs = Mat::from_fn(4, 1, |i, _| res[i]);
        let delta = jac.partial_piv_lu().solve(&rhs);
        let mut step = 0.0f64;
        let mut scale = 1.0f64;
        for i in 0..4 {
            m[i] -= delta[(i, 0)];
            step = step.max(delta[(i, 0)].abs());
            scale = scale.max(m[i].abs());
        }
        last = step / scale;
        if !last.is_finite() {
            break;
        }
        if last <= cfg.newton_tol {
            let z1: [f64; 4] = std::array::from_fn(|i| 2.0 * m[i] - z0[i]);
            return Ok(PhaseState::new(s.chart, [z1[0], z1[1]], [z1[2], z1[3]]));
        }
    }
    Err(Error::NewtonDivergence { t, residual: last })
}

/// One step of the configured scheme, staying in the state's chart.
pub fn step(sys: &ChartedSystem, s: &PhaseState, cfg: &IntegratorConfig) -> Result<PhaseState> {
    step_at(sys, s, cfg.dt, cfg, 0.0)
}

fn step_at(sys: &ChartedSystem, s: &PhaseState, dt: f64, cfg: &IntegratorConfig, t: f64) -> Result<PhaseState> {
    match cfg.scheme {
        Scheme::ImplicitMidpoint => midpoint_step(sys, s, dt, cfg, t),
        Scheme::TripleJump => {
            let c = 2f64.cbrt();
            let g1 = 1.0 / (2.0 - c);
            let g2 = -c / (2.0 - c);
            let s1 = midpoint_step(sys, s, g1 * dt, cfg, t)?;
            let s2 = midpoint_step(sys, &s1, g2 * dt, cfg, t)?;
            midpoint_step(sys, &s2, g1 * dt, cfg, t)
        }
    }
}

/// Integrates up to time `t_end` (or down to it for negative `dt`). On failure the
/// trajectory computed so far is returned along with the error.
pub fn integrate_partial(
    sys: &ChartedSystem,
    s0: &PhaseState,
    t_end: f64,
    cfg: &IntegratorConfig,
) -> (Trajectory, Option<Error>) {
    let mut traj = Trajectory { samples: Vec::new(), switches: Vec::new(), config: *cfg };
    if let Err(e) = cfg.validate() {
        return (traj, Some(e));
    }
    let mut s = *s0;
    if cfg.use_atlas {
        match sys.integration_state(s0) {
            Ok(moved) => {
                if moved.chart != s0.chart {
                    let h_before = sys.hamiltonian(s0).unwrap_or(f64::NAN);
                    let h_after = sys.hamiltonian(&moved).unwrap_or(f64::NAN);
                    traj.switches.push(SwitchEvent { t: 0.0, from: s0.chart, to: moved.chart, h_before, h_after });
                }
                s = moved;
            }
            Err(e) => return (traj, Some(e)),
        }
    }
    let h0 = match sys.hamiltonian(&s) {
        Ok(h) => h,
        Err(e) => return (traj, Some(e)),
    };
    traj.samples.push(Sample { t: 0.0, state: s, h: h0 });
    let n_steps = (t_end / cfg.dt).round();
    if !(n_steps >= 0.0) || !n_steps.is_finite() {
        return (traj, Some(Error::BadParams(format!("t_end {t_end} and dt {} have opposite signs", cfg.dt))));
    }
    let n_steps = n_steps as u64;
    for n in 1..=n_steps {
        let t_prev = (n - 1) as f64 * cfg.dt;
        s = match step_at(sys, &s, cfg.dt, cfg, t_prev) {
            Ok(next) => next,
            Err(e) => return (traj, Some(e)),
        };
        let t = n as f64 * cfg.dt;
        if cfg.use_atlas {
            if let Some(target) = sys.switch_target(s.chart, s.q, cfg.switch_band.1) {
                let moved = match sys.transition(&s, target) {
                    Ok(m) => m,
                    Err(e) => return (traj, Some(e)),
                };
                let h_before = sys.hamiltonian(&s).unwrap_or(f64::NAN);
                let h_after = sys.hamiltonian(&moved).unwrap_or(f64::NAN);
                traj.switches.push(SwitchEvent { t, from: s.chart, to: target, h_before, h_after });
                s = moved;
            }
        }
        if n % cfg.sample_every as u64 == 0 || n == n_steps {
            match sys.hamiltonian(&s) {
                Ok(h) => traj.samples.push(Sample { t, state: s, h }),
                Err(e) => return (traj, Some(e)),
            }
        }
    }
    (traj, None)
}

pub fn integrate(sys: &ChartedSystem, s0: &PhaseState, t_end: f64, cfg: &IntegratorConfig) -> Result<Trajectory> {
    match integrate_partial(sys, s0, t_end, cfg) {
        (traj, None) => Ok(traj),
        (_, Some(e)) => Err(e),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Increasing,
    Decreasing,
    Both,
}

/// The hypersurface `q[coord] = value` of chart `chart`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub chart: usize,
    pub coord: usize,
    pub value: f64,
    pub direction: Direction,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub t: f64,
    pub state: PhaseState,
}

/// Signed distance to the section, taken modulo 2π for angular coordinates.
fn section_offset(sys: &ChartedSystem, sec: &Section, q: [f64; 2]) -> f64 {
    let x = q[sec.coord] - sec.value;
    let angular = sys.charts().get(sec.chart).and_then(|c| c.angular_coord()) == Some(sec.coord);
    if angular {
        x - TAU * (x / TAU).round()
    } else {
        x
    }
}

/// Crossings of `sec` along `traj`. Samples are mapped into the section's chart
/// (samples that do not map are skipped); each crossing is located by linear
/// interpolation and refined with one Newton step in time.
pub fn poincare(
    sys: &ChartedSystem,
    traj: &Trajectory,
    sec: &Section,
    cfg: &IntegratorConfig,
) -> Result<Vec<Crossing>> {
    sys.chart(sec.chart)?;
    if sec.coord > 1 {
        return Err(Error::BadParams(format!("section coordinate index {} out of range", sec.coord)));
    }
    let mapped: Vec<Option<(f64, PhaseState)>> =
        traj.samples.iter().map(|s| sys.transition(&s.state, sec.chart).ok().map(|m| (s.t, m))).collect();
    let angular = sys.chart(sec.chart)?.angular_coord();
    let mut out = Vec::new();
    for w in mapped.windows(2) {
        let (Some((t0, a)), Some((t1, b))) = (w[0], w[1]) else { continue };
        let fa = section_offset(sys, sec, a.q);
        let fb = section_offset(sys, sec, b.q);
        // A jump of the wrapped offset by ~2π is a wrap, not a crossing.
        if (fb - fa).abs() > 0.5 * TAU {
            continue;
        }
        let up = fa < 0.0 && fb >= 0.0;
        let down = fa > 0.0 && fb <= 0.0;
        let wanted = match sec.direction {
            Direction::Increasing => up,
            Direction::Decreasing => down,
            Direction::Both => up || down,
        };
        if !wanted {
            continue;
        }
        let theta = fa / (fa - fb);
        let lin = |x: f64, y: f64| x + theta * (y - x);
        // Interpolate angles along the short arc.
        let mut bq = b.q;
        if let Some(k) = angular {
            let d = bq[k] - a.q[k];
            bq[k] = a.q[k] + d - TAU * (d / TAU).round();
        }
        let guess = PhaseState::new(
            sec.chart,
            [lin(a.q[0], bq[0]), lin(a.q[1], bq[1])],
            [lin(a.p[0], b.p[0]), lin(a.p[1], b.p[1])],
        );
        let t_guess = lin(t0, t1);
        let z = [guess.q[0], guess.q[1], guess.p[0], guess.p[1]];
        let refined = gradient_hessian(sys, sec.chart, z).ok().and_then(|(grad, _)| {
            let rate = symplectic(grad)[sec.coord];
            if rate == 0.0 {
                return None;
            }
            let dt = -section_offset(sys, sec, guess.q) / rate;
            if dt.abs() > (t1 - t0).abs() {
                return None;
            }
            let sub = IntegratorConfig { scheme: Scheme::ImplicitMidpoint, ..*cfg };
            midpoint_step(sys, &guess, dt, &sub, t_guess).ok().map(|s| (t_guess + dt, s))
        });
        let (t, state) = refined.unwrap_or((t_guess, guess));
        out.push(Crossing { t, state });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_energy_is_conserved_to_roundoff() {
        let sys = ChartedSystem::fixture_harmonic(1.0);
        let s0 = PhaseState::new(0, [1.0, 0.0], [0.0, 0.5]);
        let cfg = IntegratorConfig { dt: 0.1, ..Default::default() };
        let traj = integrate(&sys, &s0, 100.0, &cfg).unwrap();
        assert!(traj.relative_energy_drift() < 1e-13, "{}", traj.relative_energy_drift());
    }

    #[test]
    fn midpoint_is_reversible() {
        let sys = ChartedSystem::fixture_harmonic(2.0);
        let s0 = PhaseState::new(0, [0.3, -0.2], [0.1, 0.4]);
        let cfg = IntegratorConfig { dt: 0.05, scheme: Scheme::ImplicitMidpoint, ..Default::default() };
        let s1 = step(&sys, &s0, &cfg).unwrap();
        let back = step(&sys, &PhaseState::new(0, s1.q, [-s1.p[0], -s1.p[1]]), &cfg).unwrap();
        for i in 0..2 {
            assert!((back.q[i] - s0.q[i]).abs() < 1e-13);
            assert!((back.p[i] + s0.p[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn midpoint_order_two_and_triple_jump_order_four() {
        let sys = ChartedSystem::fixture_harmonic(1.0);
        let s0 = PhaseState::new(0, [1.0, 0.0], [0.0, 0.0]);
        let err = |scheme: Scheme, dt: f64| {
            let cfg = IntegratorConfig { dt, scheme, ..Default::default() };
            let end = integrate(&sys, &s0, 1.0, &cfg).unwrap();
            (end.last().unwrap().state.q[0] - 1f64.cos()).abs()
        };
        let r2 = err(Scheme::ImplicitMidpoint, 0.02) / err(Scheme::ImplicitMidpoint, 0.01);
        assert!((r2 - 4.0).abs() < 0.1, "{r2}");
        let r4 = err(Scheme::TripleJump, 0.1) / err(Scheme::TripleJump, 0.05);
        assert!((r4 - 16.0).abs() < 1.0, "{r4}");
    }

    #[test]
    fn circle_flow_sections_are_equally_spaced() {
        let sys = ChartedSystem::fixture_flat(true);
        let s0 = PhaseState::new(0, [0.1, 0.0], [1.0, 0.0]);
        let cfg = IntegratorConfig { dt: 0.01, sample_every: 7, ..Default::default() };
        let traj = integrate(&sys, &s0, 30.0, &cfg).unwrap();
        let sec = Section { chart: 0, coord: 0, value: 0.0, direction: Direction::Increasing };
        let xs = poincare(&sys, &traj, &sec, &cfg).unwrap();
        assert_eq!(xs.len(), 4);
        for w in xs.windows(2) {
            assert!((w[1].t - w[0].t - TAU).abs() < 1e-6);
        }
        let empty = Trajectory { samples: vec![], switches: vec![], config: cfg };
        assert!(poincare(&sys, &empty, &sec, &cfg).unwrap().is_empty());
    }

    #[test]
    fn bad_configs_are_rejected() {
        let sys = ChartedSystem::fixture_flat(false);
        let s0 = PhaseState::new(0, [0.0, 0.0], [1.0, 0.0]);
        for cfg in [
            IntegratorConfig { dt: 0.0, ..Default::default() },
            IntegratorConfig { switch_band: (0.5, 0.9), ..Default::default() },
            IntegratorConfig { newton_tol: -1.0, ..Default::default() },
        ] {
            assert!(matches!(integrate(&sys, &s0, 1.0, &cfg), Err(Error::BadParams(_))));
        }
    }
}

#![allow(dead_code)]

use qf_core::chart::{ChartedSystem, PhaseState};
use qf_core::dynamics::{integrate, IntegratorConfig, Trajectory};
use qf_core::family::{build_base, build_shifted, Scope};
use qf_core::kovalevskaya::kov_chart_system;
use qf_core::quartic_ode::{compute_pole_functions, PoleFunctions};

pub const POLE_GRID: usize = 64;
pub const POLE_TOL: f64 = 1e-13;

pub fn base(a: f64) -> ChartedSystem {
    build_base(a, 1.0, Scope::Global).unwrap()
}

pub fn shifted(a: f64, p: f64) -> ChartedSystem {
    build_shifted(a, 1.0, p, Scope::Global).unwrap()
}

pub fn kov() -> ChartedSystem {
    kov_chart_system()
}

pub fn pole(a: f64) -> PoleFunctions {
    compute_pole_functions(a, POLE_GRID, POLE_TOL).unwrap()
}

/// Integrates forward for `t`, flips the momenta, integrates back and returns the
/// largest coordinate mismatch with the start (compared in the start's chart).
pub fn reversibility(sys: &ChartedSystem, s0: &PhaseState, t: f64, cfg: &IntegratorConfig) -> (Trajectory, f64) {
    let fwd = integrate(sys, s0, t, cfg).unwrap();
    let end = fwd.last().unwrap().state;
    let flipped = PhaseState::new(end.chart, end.q, [-end.p[0], -end.p[1]]);
    let back = integrate(sys, &flipped, t, cfg).unwrap();
    let fin = back.last().unwrap().state;
    let start = sys.integration_state(s0).unwrap();
    let fin = sys.transition(&fin, start.chart).unwrap();
    let mut err: f64 = 0.0;
    for i in 0..2 {
        err = err.max((fin.q[i] - start.q[i]).abs()).max((fin.p[i] + start.p[i]).abs());
    }
    (fwd, err)
}

/// Minimum of the potential on the cylinder over `|u| ≤ w`, as `(V, φ, u)`.
pub fn potential_minimum(sys: &ChartedSystem, w: f64) -> (f64, f64, f64) {
    let c = sys.chart_index("cylinder").unwrap();
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for i in 0..180 {
        for j in 0..=100 {
            let phi = i as f64 * std::f64::consts::TAU / 180.0;
            let u = -w + 2.0 * w * j as f64 / 100.0;
            let v = sys.metric_and_potential(c, [phi, u]).unwrap()[2];
            if v < best.0 {
                best = (v, phi, u);
            }
        }
    }
    best
}

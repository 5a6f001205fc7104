mod common;

use proptest::prelude::*;
use qf_core::chart::{ChartedSystem, PhaseState};
use qf_core::dynamics::*;
use std::f64::consts::{PI, TAU};

fn cyl_state(sys: &ChartedSystem, q: [f64; 2], p: [f64; 2]) -> PhaseState {
    PhaseState::new(sys.chart_index("cylinder").unwrap(), q, p)
}

fn angle_diff(a: f64, b: f64) -> f64 {
    (a - b + PI).rem_euclid(TAU) - PI
}

#[test]
fn base_energy_drift_over_long_run() {
    let sys = common::base(0.0);
    let s0 = cyl_state(&sys, [0.0, 0.0], [1.0, 0.0]);
    let cfg = IntegratorConfig { sample_every: 100, ..Default::default() };
    let traj = integrate(&sys, &s0, 100.0, &cfg).unwrap();
    assert!(traj.relative_energy_drift() < 1e-8, "{:e}", traj.relative_energy_drift());
    assert!(traj.samples.windows(2).all(|w| w[1].t > w[0].t));
    assert!((traj.last().unwrap().t - 100.0).abs() < 1e-9);
}

#[test]
fn round_sphere_conserves_angular_momentum() {
    let sys = common::base(2.0);
    let s0 = cyl_state(&sys, [0.3, 0.2], [0.8, 0.4]);
    let cfg = IntegratorConfig { use_atlas: false, sample_every: 10, ..Default::default() };
    let traj = integrate(&sys, &s0, 10.0, &cfg).unwrap();
    for s in &traj.samples {
        assert!((s.state.p[0] - 0.8).abs() < 1e-10, "{}", s.state.p[0]);
    }
    // V vanishes, so H is kinetic only.
    let h = sys.hamiltonian(&s0).unwrap();
    let [e1, e2, _] = sys.metric_and_potential(0, s0.q).unwrap();
    assert!((h - 0.5 * (0.64 / e1 + 0.16 / e2)).abs() < 1e-15);
}

#[test]
fn crossing_the_band_switches_once_with_continuous_energy() {
    let sys = common::base(1.0);
    let north = sys.chart_index("north").unwrap();
    let s0 = PhaseState::new(north, [1.8, 0.1], [0.6, 0.05]);
    let cfg = IntegratorConfig::default();
    let traj = integrate(&sys, &s0, 1.0, &cfg).unwrap();
    assert_eq!(traj.switches.len(), 1, "{:?}", traj.switches);
    let ev = traj.switches[0];
    assert_eq!(ev.from, north);
    assert_eq!(ev.to, sys.chart_index("south").unwrap());
    assert!((ev.h_before - ev.h_after).abs() < 1e-10 * ev.h_before.abs().max(1.0));
    let after = traj.samples.iter().find(|s| s.t >= ev.t).unwrap();
    let r = after.state.q[0].hypot(after.state.q[1]);
    assert!((r - 0.5).abs() < 1e-2, "landed at {r}");
    assert!(traj.relative_energy_drift() < 1e-10);
}

#[test]
fn forward_then_backward_returns_to_start() {
    for sys in [common::base(0.0), common::base(1.0), common::shifted(1.0, 1.0)] {
        let s0 = cyl_state(&sys, [0.0, 0.0], [0.3, 1.0]);
        let cfg = IntegratorConfig { sample_every: 1000, ..Default::default() };
        let (fwd, err) = common::reversibility(&sys, &s0, 20.0, &cfg);
        assert!(!fwd.switches.is_empty());
        assert!(err < 1e-6, "{:?}: {err:e}", sys.params.kind);
    }
}

#[test]
fn trajectories_do_not_depend_on_the_chart() {
    let sys = common::base(0.0);
    let s0 = cyl_state(&sys, [0.4, 0.3], [0.2, 0.3]);
    let atlas = integrate(&sys, &s0, 1.0, &IntegratorConfig::default()).unwrap();
    let plain = integrate(&sys, &s0, 1.0, &IntegratorConfig { use_atlas: false, ..Default::default() }).unwrap();
    assert_eq!(atlas.samples.len(), 1001);
    let a = sys.transition(&atlas.last().unwrap().state, s0.chart).unwrap();
    let b = plain.last().unwrap().state;
    assert_eq!(b.chart, s0.chart);
    assert!(angle_diff(a.q[0], b.q[0]).abs() < 1e-6);
    for k in 0..2 {
        assert!((a.p[k] - b.p[k]).abs() < 1e-6);
    }
    assert!((a.q[1] - b.q[1]).abs() < 1e-6);
}

#[test]
fn midpoint_scheme_is_second_order_on_a_sphere_family() {
    let sys = common::base(1.0);
    let s0 = cyl_state(&sys, [0.0, -0.88], [0.1, 0.1]);
    let run = |dt: f64, scheme: Scheme| {
        let cfg = IntegratorConfig { dt, scheme, sample_every: 1_000_000, ..Default::default() };
        integrate(&sys, &s0, 0.5, &cfg).unwrap().last().unwrap().state
    };
    let reference = run(1e-3, Scheme::TripleJump);
    let err = |s: PhaseState| (s.q[0] - reference.q[0]).abs() + (s.q[1] - reference.q[1]).abs();
    let e1 = err(run(0.02, Scheme::ImplicitMidpoint));
    let e2 = err(run(0.01, Scheme::ImplicitMidpoint));
    let ratio = e1 / e2;
    assert!((3.0..5.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn poincare_crossings_lie_on_the_section() {
    let sys = common::base(1.0);
    let s0 = cyl_state(&sys, [0.0, -0.88], [0.1, 0.1]);
    let cfg = IntegratorConfig { sample_every: 10, ..Default::default() };
    let traj = integrate(&sys, &s0, 60.0, &cfg).unwrap();
    let cyl = sys.chart_index("cylinder").unwrap();
    let sec = Section { chart: cyl, coord: 0, value: 0.0, direction: Direction::Increasing };
    let hits = poincare(&sys, &traj, &sec, &cfg).unwrap();
    assert!(hits.len() >= 3, "{} crossings", hits.len());
    let h0 = traj.samples[0].h;
    for c in &hits {
        assert!(angle_diff(c.state.q[0], 0.0).abs() < 1e-6);
        assert!((sys.hamiltonian(&c.state).unwrap() - h0).abs() < 1e-6 * h0.abs().max(1.0));
    }
    let empty = Trajectory { samples: vec![], switches: vec![], config: cfg };
    assert!(poincare(&sys, &empty, &sec, &cfg).unwrap().is_empty());
}

#[test]
fn failing_runs_keep_the_partial_trajectory() {
    let sys = common::base(0.0);
    // Without the atlas the cylinder chart is left as u runs off to infinity.
    let s0 = cyl_state(&sys, [0.0, 0.0], [0.0, 5.0]);
    let cfg = IntegratorConfig { use_atlas: false, dt: 1e-2, ..Default::default() };
    let (traj, err) = integrate_partial(&sys, &s0, 50.0, &cfg);
    if let Some(e) = err {
        assert!(!traj.samples.is_empty());
        assert!(matches!(e.exit_code(), 3 | 4 | 5 | 1), "{e:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn short_runs_are_reversible_and_conservative(phi in 0.0f64..TAU, u in -1.0f64..1.0, pp in -0.5f64..0.5, pu in -0.5f64..0.5) {
        let sys = common::base(0.0);
        let s0 = cyl_state(&sys, [phi, u], [pp, pu]);
        let cfg = IntegratorConfig { dt: 1e-2, ..Default::default() };
        let (fwd, err) = common::reversibility(&sys, &s0, 1.0, &cfg);
        prop_assert!(err < 1e-6, "{}", err);
        let h0 = fwd.samples[0].h;
        let drift = fwd.samples.iter().fold(0.0f64, |m, s| m.max((s.h - h0).abs()));
        prop_assert!(drift < 1e-8 * h0.abs().max(1.0), "{}", drift);
    }
}

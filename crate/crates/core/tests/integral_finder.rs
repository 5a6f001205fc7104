mod common;

use proptest::prelude::*;
use qf_core::chart::PhaseState;
use qf_core::dynamics::{integrate, IntegratorConfig};
use qf_core::integral_finder::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[test]
fn degree_zero_finds_only_constants() {
    let sys = common::base(1.0);
    let spec = AnsatzSpec::for_system(&sys, 0, 4, 24).unwrap();
    let op = bracket_operator(&sys, &spec).unwrap();
    let rep = find_integrals(&op, &[], 1e-8).unwrap();
    assert_eq!(rep.raw_dim, 1);
    let triv = trivial_integrals(&sys, &spec).unwrap();
    let rep = find_integrals(&op, &triv, 1e-8).unwrap();
    assert_eq!((rep.raw_dim, rep.trivial_rank, rep.deflated_dim), (1, 1, 0));
}

#[test]
fn round_sphere_rotation_generator_is_annihilated() {
    let sys = common::base(2.0);
    let spec = AnsatzSpec::for_system(&sys, 1, 4, 32).unwrap();
    let op = bracket_operator(&sys, &spec).unwrap();
    let p_phi = QuarticAnsatz::sample(&spec, |j, k, _, _| f64::from(j == 1 && k == 0));
    let out = op.apply(&p_phi.coeffs).unwrap();
    assert!(norm(&out) / norm(&p_phi.coeffs) < 1e-10);
    let triv = trivial_integrals(&sys, &spec).unwrap();
    let rep = find_integrals(&op, &triv, 1e-8).unwrap();
    assert_eq!(rep.raw_dim, 4);
    assert_eq!(rep.deflated_dim, 3);
}

#[test]
fn no_quadratic_integrals_for_base_members() {
    for a in [0.0, 1.0] {
        let sys = common::base(a);
        let spec = AnsatzSpec::for_system(&sys, 2, 6, 48).unwrap();
        let op = bracket_operator(&sys, &spec).unwrap();
        let triv = trivial_integrals(&sys, &spec).unwrap();
        let rep = find_integrals(&op, &triv, 1e-8).unwrap();
        assert_eq!(rep.deflated_dim, 0, "a={a}");
        assert_eq!(rep.raw_dim, rep.trivial_rank);
        let gap = rep.gap_ratio.unwrap();
        assert!(gap >= 1e3, "a={a}: gap {gap:e}");
        assert!(rep.singular_values.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn certifying_the_hamiltonian_reproduces_energy_drift() {
    let sys = common::base(1.0);
    let spec = AnsatzSpec::for_system(&sys, 2, 6, 48).unwrap();
    let h = QuarticAnsatz { spec: spec.clone(), coeffs: trivial_integrals(&sys, &spec).unwrap()[1].clone() };
    let chart = sys.chart_index(&spec.chart).unwrap();
    let s0 = PhaseState::new(chart, [0.0, -0.88], [0.1, 0.1]);
    let cfg = IntegratorConfig { sample_every: 50, ..Default::default() };
    let traj = integrate(&sys, &s0, 20.0, &cfg).unwrap();
    let cert = certify(&h, &sys, &traj, 3).unwrap();
    let h0 = traj.samples[0].h;
    let abs_drift = traj.samples.iter().fold(0.0f64, |m, s| m.max((s.h - h0).abs()));
    assert!((cert.f0 - h0).abs() < 1e-9);
    assert!((cert.drift * cert.scale - abs_drift).abs() < 1e-9, "{} vs {abs_drift}", cert.drift * cert.scale);
    assert!(cert.drift < 1e-8);
}

#[test]
fn random_functions_are_not_conserved() {
    let sys = common::base(1.0);
    let spec = AnsatzSpec::for_system(&sys, 4, 6, 48).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let f = QuarticAnsatz {
        spec: spec.clone(),
        coeffs: (0..spec.basis_size()).map(|_| rng.gen_range(-0.5..0.5)).collect(),
    };
    let chart = sys.chart_index(&spec.chart).unwrap();
    let s0 = PhaseState::new(chart, [0.0, -0.88], [0.1, 0.1]);
    let traj = integrate(&sys, &s0, 20.0, &IntegratorConfig { sample_every: 50, ..Default::default() }).unwrap();
    let cert = certify(&f, &sys, &traj, 3).unwrap();
    assert!(cert.drift > 1e-2, "{}", cert.drift);
}

#[test]
fn leaving_the_window_is_reported() {
    let sys = common::base(0.0);
    let spec = AnsatzSpec { window: (-0.5, 0.5), ..AnsatzSpec::for_system(&sys, 2, 2, 8).unwrap() };
    let f = QuarticAnsatz::sample(&spec, |j, k, _, _| f64::from(j + k == 0));
    let chart = sys.chart_index(&spec.chart).unwrap();
    let traj =
        integrate(&sys, &PhaseState::new(chart, [0.0, 0.0], [0.0, 2.0]), 2.0, &IntegratorConfig::default()).unwrap();
    assert!(matches!(certify(&f, &sys, &traj, 0), Err(qf_core::Error::WindowExit { .. })));
    assert!(find_integrals(&bracket_operator(&sys, &spec).unwrap(), &[], 0.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn bracket_operator_is_linear(seed in any::<u64>(), alpha in -3.0f64..3.0) {
        let sys = common::shifted(1.0, 1.0);
        let spec = AnsatzSpec::for_system(&sys, 2, 3, 12).unwrap();
        let op = bracket_operator(&sys, &spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..spec.basis_size()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..spec.basis_size()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let comb: Vec<f64> = x.iter().zip(&y).map(|(a, b)| alpha * a + b).collect();
        let (ax, ay, ac) = (op.apply(&x).unwrap(), op.apply(&y).unwrap(), op.apply(&comb).unwrap());
        let err = ac.iter().zip(ax.iter().zip(&ay)).map(|(c, (a, b))| (c - alpha * a - b).abs()).fold(0.0, f64::max);
        prop_assert!(err < 1e-10 * (1.0 + norm(&ac)));
        prop_assert_eq!(ac.len(), op.output_size());
    }
}

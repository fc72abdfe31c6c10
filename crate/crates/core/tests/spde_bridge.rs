use bdsde_lab::bridge::{
    default_test_family, extract_field, gradient_representation_check, interpolated_snapshots, weak_residual,
    TestFunction,
};
use bdsde_lab::finite::{picard_solve, Horizon, ModeIncrements, PicardSettings};
use bdsde_lab::forward::euler_maruyama;
use bdsde_lab::noise::{sample_backward, ForwardDriver, PathGrid};
use bdsde_lab::runner::lookup;
use bdsde_lab::weighted_space::{sample_reference_cloud, WeightedSpace};
use proptest::prelude::*;

fn space() -> WeightedSpace {
    WeightedSpace::new(1, 4.0, 2.5).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bumps_vanish_outside_their_support(c in -3.0f64..3.0, r in 0.1f64..4.0, x in -10.0f64..10.0) {
        let phi = TestFunction::bump("b", vec![c], r).unwrap();
        if (x - c).abs() >= r {
            prop_assert_eq!(phi.value(&[x]), 0.0);
            prop_assert_eq!(phi.gradient(&[x]), vec![0.0]);
        } else {
            prop_assert!(phi.value(&[x]) > 0.0 && phi.value(&[x]) <= 1.0);
        }
        prop_assert_eq!(phi.boundary_probe(8), 0.0);
    }
}

#[test]
fn field_extraction_reads_the_start_node() {
    let p = lookup("monotone_ode").unwrap().spec.build(1, None, Horizon::Finite { t: 1.0 }).unwrap();
    let s = space();
    let cloud = sample_reference_cloud(10, &s, 1).unwrap();
    let e = euler_maruyama(0.5, &cloud, &p.diffusion, &ForwardDriver::new(1, 0, 1), 0.05, 10).unwrap();
    let (sol, _) = picard_solve(&p.with_horizon(Horizon::Finite { t: 1.0 }), &e, &ModeIncrements::zeros(1, 10), &s, &PicardSettings::default()).unwrap();
    let f = extract_field(&sol, 0.5).unwrap();
    assert_eq!(f.u, sol.y[0]);
    assert!(extract_field(&sol, 0.0).is_err());
}

#[test]
fn ou_field_is_constant_in_space() {
    let p = lookup("ou_additive").unwrap().spec.build(1, None, Horizon::Finite { t: 2.0 }).unwrap();
    let s = space();
    let cloud = sample_reference_cloud(50, &s, 2).unwrap();
    let e = euler_maruyama(0.0, &cloud, &p.diffusion, &ForwardDriver::new(2, 0, 1), 0.05, 40).unwrap();
    let path = sample_backward(&p.noise, PathGrid::new(0.05, 0, 40).unwrap(), 2, 0).unwrap();
    let noise = ModeIncrements::from_path(&path, &p.noise, e.grid()).unwrap();
    let (sol, _) = picard_solve(&p, &e, &noise, &s, &PicardSettings::default()).unwrap();
    for row in &sol.y {
        let spread = row.iter().fold(0.0f64, |a, v| a.max((v - row[0]).abs()));
        assert!(spread < 1e-10, "{spread}");
    }
    // only the time quadrature remains for a field constant in space
    let snaps = interpolated_snapshots(&sol, &cloud);
    for phi in default_test_family(1) {
        let r = weak_residual(&snaps, &p, &phi, &noise, &cloud, &s, None).unwrap();
        assert!(r.residual < 0.05, "{}: {}", phi.id, r.residual);
    }
}

#[test]
fn heat_residual_shrinks_under_refinement() {
    let p = lookup("heat_bump").unwrap().spec.build(1, None, Horizon::Finite { t: 1.0 }).unwrap();
    let s = space();
    let basis = bdsde_lab::finite::Basis::MappedChebyshev { degree: 6, scale: 1.0 };
    let level = |dt: f64, m: usize| {
        let steps = (1.0 / dt).round() as usize;
        let cloud = sample_reference_cloud(m, &s, 7).unwrap();
        let e = euler_maruyama(0.0, &cloud, &p.diffusion, &ForwardDriver::new(7, 0, 1), dt, steps).unwrap();
        let noise = ModeIncrements::zeros(1, steps);
        let (sol, _) = picard_solve(&p, &e, &noise, &s, &PicardSettings { basis, ..Default::default() }).unwrap();
        let snaps = interpolated_snapshots(&sol, &cloud);
        let fam = default_test_family(1);
        fam.iter().map(|phi| weak_residual(&snaps, &p, phi, &noise, &cloud, &s, None).unwrap().residual).sum::<f64>()
            / fam.len() as f64
    };
    let (a, b) = (level(0.05, 400), level(0.0125, 6400));
    assert!(b < a / 2.0, "{a} -> {b}");
}

#[test]
fn linear_terminal_gradient_matches_z() {
    let p = lookup("linear_terminal").unwrap().spec.build(1, None, Horizon::Finite { t: 1.0 }).unwrap();
    let s = space();
    let cloud = sample_reference_cloud(3000, &s, 8).unwrap();
    let e = euler_maruyama(0.0, &cloud, &p.diffusion, &ForwardDriver::new(8, 0, 1), 0.05, 20).unwrap();
    let (sol, _) = picard_solve(&p, &e, &ModeIncrements::zeros(1, 20), &s, &PicardSettings::default()).unwrap();
    let g = gradient_representation_check(&sol, &e, &p.diffusion, &cloud, &s).unwrap();
    assert!(g.relative() < 0.1, "{}", g.relative());
}

use bdsde_lab::finite::{picard_solve, BdsdeProblem, Horizon, ModeIncrements, PicardSettings};
use bdsde_lab::forward::{euler_maruyama, TimeGrid};
use bdsde_lab::infinite::{default_discount, pth_moment_profile, solve_horizon_ladder, LadderSettings};
use bdsde_lab::noise::{sample_backward, ForwardDriver, PathGrid};
use bdsde_lab::runner::lookup;
use bdsde_lab::stats::{mean, std_error};
use bdsde_lab::weighted_space::{sample_reference_cloud, ReferenceCloud, WeightedSpace};

fn space() -> WeightedSpace {
    WeightedSpace::new(1, 4.0, 2.5).unwrap()
}

fn problem(id: &str) -> BdsdeProblem {
    lookup(id).unwrap().spec.build(1, None, Horizon::Infinite).unwrap()
}

fn ladder_at(p: &BdsdeProblem, cloud: &ReferenceCloud, dt: f64, n_max: usize, seed: u64, id: u64) -> (f64, bool) {
    let steps = (n_max as f64 / dt).round() as usize;
    let grid = TimeGrid::new(0.0, dt, steps).unwrap();
    let e = euler_maruyama(0.0, cloud, &p.diffusion, &ForwardDriver::new(seed, id, 1), dt, steps).unwrap();
    let path = sample_backward(&p.noise, PathGrid::new(dt, 0, steps as i64).unwrap(), seed, id).unwrap();
    let noise = ModeIncrements::from_path(&path, &p.noise, grid).unwrap();
    let settings = LadderSettings { n_max, ..Default::default() };
    let (sol, d) = solve_horizon_ladder(p, &e, &noise, cloud, &space(), &settings).unwrap();
    (sol.y[0][0], d.converged)
}

#[test]
fn default_discount_for_the_ou_problem() {
    let k = default_discount(&problem("ou_additive"), 2.5).unwrap();
    assert!((k - 0.72).abs() < 1e-12, "{k}");
}

#[test]
fn monotone_ode_ladder_reaches_the_fixed_point() {
    let cloud = sample_reference_cloud(8, &space(), 1).unwrap();
    let (y, conv) = ladder_at(&problem("monotone_ode"), &cloud, 0.02, 12, 1, 0);
    assert!(conv);
    assert!((y - 1.0).abs() < 1e-3, "{y}");
}

#[test]
fn ou_ladder_mean_is_c_over_mu() {
    let p = problem("ou_additive");
    let cloud = sample_reference_cloud(4, &space(), 2).unwrap();
    let v: Vec<f64> = (0..200).map(|id| ladder_at(&p, &cloud, 0.05, 10, 3, id).0).collect();
    let (m, se) = (mean(&v), std_error(&v));
    assert!((m - 1.0).abs() <= 3.5 * se, "mean {m} se {se}");
}

#[test]
fn doubling_the_ladder_changes_little() {
    let p = problem("ou_additive");
    let cloud = sample_reference_cloud(4, &space(), 4).unwrap();
    for id in 0..5 {
        let (a, _) = ladder_at(&p, &cloud, 0.05, 8, 5, id);
        let (b, _) = ladder_at(&p, &cloud, 0.05, 16, 5, id);
        assert!((a - b).abs() < 5e-3, "{a} vs {b}");
    }
}

#[test]
fn zero_extension_keeps_values_and_pads_with_zero() {
    let p = lookup("monotone_ode").unwrap().spec.build(1, None, Horizon::Finite { t: 1.0 }).unwrap();
    let s = space();
    let cloud = sample_reference_cloud(8, &s, 6).unwrap();
    let e = euler_maruyama(0.0, &cloud, &p.diffusion, &ForwardDriver::new(6, 0, 1), 0.1, 10).unwrap();
    let (sol, _) = picard_solve(&p, &e, &ModeIncrements::zeros(1, 10), &s, &PicardSettings::default()).unwrap();
    let ext = sol.zero_extended(25);
    assert_eq!(ext.nodes(), 26);
    assert_eq!(&ext.y[..11], &sol.y[..]);
    assert!(ext.y[11..].iter().flatten().all(|v| *v == 0.0));
    assert_eq!(ext.u_interpolant(20, &[0.3]), 0.0);
    let prof = pth_moment_profile(&ext, 2.5, 0.5, &cloud, &s).unwrap();
    assert!(prof[11..].iter().all(|v| *v == 0.0));
    assert!(prof[0] > 0.0);
}

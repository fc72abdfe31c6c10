//! Infinite-horizon BDSDE by a horizon ladder.
//!
//! Rung `r` solves the finite problem on `[t_0, t_0 + r]` with zero terminal
//! data and is extended by `(Y, Z) = (0, 0)` afterwards. All rungs share one
//! particle ensemble and one set of backward increments, so consecutive rungs
//! differ only through the horizon.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::finite::conditions::{coefficient_margin, monotonicity_margin};
use crate::finite::solver::{picard_solve, BackwardSolution, ModeIncrements, PicardSettings};
use crate::finite::{BdsdeProblem, Horizon, TerminalFn};
use crate::forward::ParticleEnsemble;
use crate::noise::grid_index;
use crate::stats::geometric_base;
use crate::weighted_space::{discounted_l2_process_norm, DiscountedNormSpec, ReferenceCloud, WeightedSpace};

/// Default discount: 10% below the largest `K` passing the monotonicity
/// margin, provided the coefficient margin leaves room.
pub fn default_discount(problem: &BdsdeProblem, p: f64) -> Result<f64> {
    // both margins are affine in K
    let upper = monotonicity_margin(problem, p, 0.0) / p;
    let lower = -coefficient_margin(problem, p, 0.0);
    if !(upper > lower) || upper <= 0.0 {
        return Err(LabError::Conditions(format!(
            "no discount satisfies both margins: need K > {lower:.6} and K < {upper:.6}"
        )));
    }
    Ok(upper - 0.1 * (upper - lower.max(0.0)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderSettings {
    /// Largest rung horizon (time units past the start node).
    pub n_max: usize,
    pub cauchy_tol: f64,
    pub discount: Option<f64>,
    /// Length of the initial window on which the stopping norm is taken.
    pub window: f64,
    /// Solve every rung up to `n_max` even after the stopping rule fires.
    pub run_all_rungs: bool,
    pub picard: PicardSettings,
}

impl Default for LadderSettings {
    fn default() -> Self {
        Self { n_max: 12, cauchy_tol: 1e-3, discount: None, window: 1.0, run_all_rungs: false, picard: PicardSettings::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderDiagnostics {
    pub discount: f64,
    /// Horizons `t_0 + r` of the solved rungs.
    pub horizons: Vec<f64>,
    /// Discounted difference of rung `r+1` and `r` on the initial window.
    pub window_differences: Vec<f64>,
    /// The same difference over the whole ladder grid.
    pub full_differences: Vec<f64>,
    pub picard_iterations: Vec<usize>,
    /// Geometric base fitted to the window differences from the second on.
    pub decay_base: Option<f64>,
    /// Rung returned as the infinite-horizon surrogate.
    pub stopped_at: usize,
    pub converged: bool,
}

/// `sqrt` of the discounted combined norm of `a − b` over the first `nodes`
/// nodes, with the discount measured from the start node.
fn discounted_difference(
    a: &BackwardSolution,
    b: &BackwardSolution,
    nodes: usize,
    discount: f64,
    cloud: &ReferenceCloud,
    space: &WeightedSpace,
) -> Result<f64> {
    let dy: Vec<Vec<f64>> =
        (0..nodes).map(|k| a.y[k].iter().zip(&b.y[k]).map(|(p, q)| p - q).collect()).collect();
    let dz: Vec<Vec<f64>> =
        (0..nodes).map(|k| a.z[k].iter().zip(&b.z[k]).map(|(p, q)| p - q).collect()).collect();
    let spec = DiscountedNormSpec::uniform(discount, 0.0, a.grid.dt, nodes - 1)?;
    let v = discounted_l2_process_norm(&dy, &spec, cloud, space)? + discounted_l2_process_norm(&dz, &spec, cloud, space)?;
    Ok(v.sqrt())
}

/// Solves rungs `1, 2, …` until the window difference drops below
/// `cauchy_tol`. The ensemble must span at least `n_max` time units and be
/// launched from `cloud`.
pub fn solve_horizon_ladder(
    problem: &BdsdeProblem,
    ensemble: &ParticleEnsemble,
    noise: &ModeIncrements,
    cloud: &ReferenceCloud,
    space: &WeightedSpace,
    settings: &LadderSettings,
) -> Result<(BackwardSolution, LadderDiagnostics)> {
    let grid = ensemble.grid();
    if cloud.len() != ensemble.particles() {
        return Err(LabError::Argument("cloud and ensemble sizes differ".into()));
    }
    let unit = grid_index(1.0, grid.dt)? as usize;
    let total = settings.n_max * unit;
    if settings.n_max == 0 || total > grid.steps {
        return Err(LabError::Range(format!(
            "ladder needs {total} steps, ensemble has {}",
            grid.steps
        )));
    }
    let window = (grid_index(settings.window, grid.dt)? as usize).clamp(1, total);
    let discount = match settings.discount {
        Some(k) => k,
        None => default_discount(problem, space.p())?,
    };
    let zero: TerminalFn = Arc::new(|_| 0.0);
    let base = problem.with_terminal(zero);

    let mut diag = LadderDiagnostics {
        discount,
        horizons: Vec::new(),
        window_differences: Vec::new(),
        full_differences: Vec::new(),
        picard_iterations: Vec::new(),
        decay_base: None,
        stopped_at: 0,
        converged: false,
    };
    let mut prev: Option<BackwardSolution> = None;
    let mut result: Option<BackwardSolution> = None;
    for r in 1..=settings.n_max {
        let steps = r * unit;
        let rung = base.with_horizon(Horizon::Finite { t: grid.time(steps) });
        let (sol, pd) = picard_solve(&rung, &ensemble.truncated(steps)?, &noise.prefix(steps), space, &settings.picard)?;
        let sol = sol.zero_extended(total);
        diag.horizons.push(grid.time(steps));
        diag.picard_iterations.push(pd.iterations);
        if let Some(p) = &prev {
            let w = discounted_difference(&sol, p, window + 1, discount, cloud, space)?;
            let f = discounted_difference(&sol, p, total + 1, discount, cloud, space)?;
            diag.window_differences.push(w);
            diag.full_differences.push(f);
            log::debug!("rung {r}: window difference {w:.3e}, full {f:.3e}");
            let d = &diag.window_differences;
            let n = d.len();
            // three consecutive non-decreasing steps that also undo all progress
            if n >= 4 && d[n - 4..].windows(2).all(|w| w[1] >= w[0]) && d[n - 1] >= d[0] && d[n - 1] > 0.0 {
                return Err(LabError::LadderDiverged { rung: r, differences: d.clone() });
            }
            if !diag.converged && w <= settings.cauchy_tol {
                diag.converged = true;
                diag.stopped_at = r;
                result = Some(sol.clone());
                if !settings.run_all_rungs {
                    break;
                }
            }
        }
        prev = Some(sol);
    }
    let d = &diag.window_differences;
    if d.len() >= 3 {
        diag.decay_base = geometric_base(&d[1..]);
    }
    let sol = match result {
        Some(s) => s,
        None => {
            diag.stopped_at = settings.n_max;
            prev.expect("at least one rung")
        }
    };
    if !diag.converged {
        log::warn!("horizon ladder reached n_max = {} without meeting the Cauchy tolerance", settings.n_max);
    }
    Ok((sol, diag))
}

/// Root mean square over replicas of the window differences, truncated to
/// the shortest ladder: the sample version of the discounted norm, which
/// takes an expectation over the noise.
pub fn replica_rms_differences(diags: &[LadderDiagnostics]) -> Vec<f64> {
    let len = diags.iter().map(|d| d.window_differences.len()).min().unwrap_or(0);
    (0..len)
        .map(|r| (diags.iter().map(|d| d.window_differences[r].powi(2)).sum::<f64>() / diags.len() as f64).sqrt())
        .collect()
}

/// `s ↦ e^{-pKs} Z_ρ Σ_i w_i |Y_s^i|^p` on the nodes of one solution, `s`
/// measured from the start node.
pub fn pth_moment_profile(
    solution: &BackwardSolution,
    p: f64,
    discount: f64,
    cloud: &ReferenceCloud,
    space: &WeightedSpace,
) -> Result<Vec<f64>> {
    if solution.particles != cloud.len() {
        return Err(LabError::Argument("solution and cloud sizes differ".into()));
    }
    (0..solution.nodes())
        .map(|k| {
            let s = k as f64 * solution.grid.dt;
            let v = (-p * discount * s).exp() * cloud.integrate_weighted(space, |i, _| solution.y[k][i].abs().powf(p));
            if v.is_finite() {
                Ok(v)
            } else {
                Err(LabError::MomentBlowUp(format!("non-finite p-th moment at node {k}")))
            }
        })
        .collect()
}

/// Supremum over nodes of the replica-averaged [`pth_moment_profile`].
pub fn pth_moment_diagnostic(
    solutions: &[&BackwardSolution],
    p: f64,
    discount: f64,
    cloud: &ReferenceCloud,
    space: &WeightedSpace,
) -> Result<f64> {
    let Some(first) = solutions.first() else {
        return Err(LabError::Argument("no solutions".into()));
    };
    let mut acc = vec![0.0; first.nodes()];
    for s in solutions {
        let prof = pth_moment_profile(s, p, discount, cloud, space)?;
        if prof.len() != acc.len() {
            return Err(LabError::Argument("solutions have different grids".into()));
        }
        acc.iter_mut().zip(prof).for_each(|(a, v)| *a += v);
    }
    let n = solutions.len() as f64;
    let sup = acc.iter().map(|v| v / n).fold(0.0, f64::max);
    if sup.is_finite() {
        Ok(sup)
    } else {
        Err(LabError::MomentBlowUp("non-finite supremum".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::finite::{CoefficientFn, StructuralConstants};
    use crate::forward::{euler_maruyama, DiffusionConfig};
    use crate::noise::{ForwardDriver, NoiseModel};
    use crate::weighted_space::sample_reference_cloud;

    fn ode(mu: f64, c: f64, beta: f64) -> BdsdeProblem {
        let f: CoefficientFn = Arc::new(move |_, _, y, _| -mu * y + c);
        let g: CoefficientFn = Arc::new(move |_, _, _, _| beta);
        let h: TerminalFn = Arc::new(|_| 0.0);
        BdsdeProblem::new(
            "ode",
            DiffusionConfig::zero(1),
            NoiseModel::new(vec![1.0], 1).unwrap(),
            h,
            f,
            vec![g],
            StructuralConstants {
                mu: -mu,
                c: 0.0,
                c_j: vec![0.0],
                alpha_j: vec![0.0],
                m_j: vec![beta * beta],
                m: c * c,
                m0: 1.0 + c.abs() + mu,
                lipschitz: 0.0,
            },
            Horizon::Infinite,
        )
        .unwrap()
    }

    fn setup(m: usize, dt: f64, span: usize) -> (WeightedSpace, ReferenceCloud, ParticleEnsemble) {
        let s = WeightedSpace::new(1, 4.0, 2.5).unwrap();
        let c = sample_reference_cloud(m, &s, 3).unwrap();
        let steps = grid_index(span as f64, dt).unwrap() as usize;
        let e = euler_maruyama(0.0, &c, &DiffusionConfig::zero(1), &ForwardDriver::new(3, 0, 1), dt, steps).unwrap();
        (s, c, e)
    }

    #[test]
    fn default_discount_closed_form() {
        let k = default_discount(&ode(1.0, 1.0, 0.5), 2.5).unwrap();
        assert!((k - 0.72).abs() < 1e-12);
        assert!(default_discount(&ode(0.1, 1.0, 0.0), 3.0).is_ok());
        assert!(matches!(default_discount(&ode(-1.0, 1.0, 0.0), 2.5), Err(LabError::Conditions(_))));
    }

    #[test]
    fn zero_problem_gives_zero_rungs() {
        let (s, c, e) = setup(50, 0.1, 4);
        let p = ode(1.0, 0.0, 0.0);
        let settings = LadderSettings { n_max: 4, run_all_rungs: true, ..Default::default() };
        let (sol, d) = solve_horizon_ladder(&p, &e, &ModeIncrements::zeros(1, 40), &c, &s, &settings).unwrap();
        assert!(sol.y.iter().flatten().all(|v| *v == 0.0));
        assert!(d.window_differences.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn ode_ladder_converges_to_stationary_value() {
        let dt = 0.01;
        let (s, c, e) = setup(40, dt, 12);
        let p = ode(1.0, 1.0, 0.0);
        let settings = LadderSettings { n_max: 12, ..Default::default() };
        let (sol, d) = solve_horizon_ladder(&p, &e, &ModeIncrements::zeros(1, 1200), &c, &s, &settings).unwrap();
        assert!(d.converged);
        for k in 0..=100 {
            assert!(sol.y[k].iter().all(|v| (v - 1.0).abs() <= 5.0 * dt + 2.0 * (-(d.stopped_at as f64 - 1.0)).exp()));
        }
        let b = d.decay_base.unwrap();
        assert!((b - (-1.0f64).exp()).abs() < 0.05, "base {b}");
        // zero extension beyond the returned rung
        let last = d.stopped_at * 100;
        assert!(sol.y[last + 1..].iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn pth_moment_of_constant_field() {
        let (s, c, e) = setup(200, 0.1, 2);
        let mut sol = BackwardSolution::zeros(e.grid(), 1, 200, Default::default());
        assert_eq!(pth_moment_diagnostic(&[&sol], 2.5, 0.5, &c, &s).unwrap(), 0.0);
        for row in &mut sol.y {
            row.iter_mut().for_each(|v| *v = 1.3);
        }
        let m = pth_moment_diagnostic(&[&sol], 2.5, 0.5, &c, &s).unwrap();
        let want = 1.3f64.powf(2.5) * s.normalizer();
        assert!((m - want).abs() < 1e-9 * want);
        sol.y[3][7] = f64::NAN;
        assert!(matches!(pth_moment_diagnostic(&[&sol], 2.5, 0.5, &c, &s), Err(LabError::MomentBlowUp(_))));
    }
}

//! Stationary solutions `v_t = Y_{T′−t}^{T′−t,·}` of the forward SPDE, built
//! from the horizon ladder on the time reversal of a two-sided path at `T′`.
//!
//! The forward Brownian motion is reversed about the same anchor, so every
//! random input of `v_t` is read in physical time. Changing `T′` or shifting
//! both paths therefore reproduces the same draws, and the pathwise checks
//! below hold up to roundoff rather than up to truncation.

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::bridge::{extract_field, FieldSnapshot};
use crate::error::{LabError, Result};
use crate::finite::solver::{ModeIncrements, NodeRecord};
use crate::finite::BdsdeProblem;
use crate::forward::{euler_maruyama, TimeGrid};
use crate::infinite::{solve_horizon_ladder, LadderDiagnostics, LadderSettings};
use crate::noise::{grid_index, shift, time_reverse, ForwardDriver, ShiftOp, TwoSidedPath};
use crate::stats::{ks_two_sample, KsResult};
use crate::weighted_space::{weighted_l2_norm, ReferenceCloud, WeightedSpace};

/// The driving noise of one replica: the two-sided `B` and the forward
/// driver of `W`, both in physical time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseReplica {
    pub path: TwoSidedPath,
    pub driver: ForwardDriver,
}

impl NoiseReplica {
    /// `θ_r ω`: both paths shifted by `r` grid steps.
    pub fn shifted(&self, r_steps: i64) -> Result<Self> {
        Ok(Self { path: shift(&self.path, ShiftOp::from_steps(r_steps))?, driver: self.driver.shift(r_steps) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryRun {
    pub tprime: f64,
    pub times: Vec<f64>,
    pub fields: Vec<FieldSnapshot>,
    /// Start-node regression record of each ladder, the interpolant of `v_t`.
    pub interpolants: Vec<NodeRecord>,
    pub ladders: Vec<LadderDiagnostics>,
}

impl StationaryRun {
    pub fn field_at(&self, t: f64) -> Option<&FieldSnapshot> {
        self.times.iter().position(|s| (s - t).abs() < 1e-12).map(|i| &self.fields[i])
    }
}

/// `v_t` on the cloud for one anchor and one time.
pub fn stationary_field(
    problem: &BdsdeProblem,
    noise: &NoiseReplica,
    tprime: f64,
    t: f64,
    cloud: &ReferenceCloud,
    space: &WeightedSpace,
    settings: &LadderSettings,
) -> Result<(FieldSnapshot, NodeRecord, LadderDiagnostics)> {
    if !(0.0..=tprime).contains(&t) {
        return Err(LabError::Argument(format!("need 0 ≤ t ≤ T′, got t = {t}, T′ = {tprime}")));
    }
    let dt = noise.path.dt();
    let anchor = grid_index(tprime, dt)?;
    let start = grid_index(tprime - t, dt)?;
    let unit = grid_index(1.0, dt)? as usize;
    let grid = TimeGrid::new(start as f64 * dt, dt, settings.n_max * unit)?;
    let bhat = time_reverse(&noise.path, tprime)?;
    let beta = ModeIncrements::from_path(&bhat, &problem.noise, grid)?;
    let ens = euler_maruyama(grid.t0, cloud, &problem.diffusion, &noise.driver.reverse_about(anchor), dt, grid.steps)?;
    let (sol, diag) = solve_horizon_ladder(problem, &ens, &beta, cloud, space, settings)?;
    let mut field = extract_field(&sol, grid.t0)?;
    field.t = t;
    Ok((field, sol.records[0].clone(), diag))
}

/// `v_t` for every `t` in `times` on one replica.
pub fn build_stationary_solution(
    problem: &BdsdeProblem,
    noise: &NoiseReplica,
    tprime: f64,
    times: &[f64],
    cloud: &ReferenceCloud,
    space: &WeightedSpace,
    settings: &LadderSettings,
) -> Result<StationaryRun> {
    if let Some(t) = times.iter().find(|t| !(**t >= 0.0 && **t <= tprime)) {
        return Err(LabError::Argument(format!("sampled time {t} outside [0, T′ = {tprime}]")));
    }
    let mut run = StationaryRun {
        tprime,
        times: times.to_vec(),
        fields: Vec::new(),
        interpolants: Vec::new(),
        ladders: Vec::new(),
    };
    for &t in times {
        let (f, rec, d) = stationary_field(problem, noise, tprime, t, cloud, space, settings)?;
        run.fields.push(f);
        run.interpolants.push(rec);
        run.ladders.push(d);
    }
    Ok(run)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    pub r_steps: i64,
    /// `‖v_{t+r}(ω) − v_t(θ_r ω)‖_{L²_ρ}` per pathwise replica.
    pub pathwise: Vec<f64>,
    pub max_pathwise: f64,
    /// Two-sample test of `v_{t+r}` on one replica set against `v_t∘θ_r` on
    /// an independent set, at the probe particles.
    pub ks: KsResult,
}

/// Shift identity `v_{t+r}(ω) = v_t(θ_r ω)`: pathwise on `set_a`, in law
/// between `set_a` and `set_b`.
#[allow(clippy::too_many_arguments)]
pub fn check_shift_stationarity(
    problem: &BdsdeProblem,
    set_a: &[NoiseReplica],
    set_b: &[NoiseReplica],
    tprime: f64,
    t: f64,
    r_steps: i64,
    pathwise_replicas: usize,
    probes: &[usize],
    cloud: &ReferenceCloud,
    space: &WeightedSpace,
    settings: &LadderSettings,
) -> Result<ShiftReport> {
    if set_a.is_empty() || set_b.is_empty() || probes.is_empty() {
        return Err(LabError::Argument("shift check needs replicas and probe particles".into()));
    }
    if let Some(p) = probes.iter().find(|p| **p >= cloud.len()) {
        return Err(LabError::Argument(format!("probe particle {p} outside the cloud")));
    }
    let r = r_steps as f64 * set_a[0].path.dt();
    let field = |n: &NoiseReplica, s: f64| stationary_field(problem, n, tprime, s, cloud, space, settings).map(|v| v.0.u);
    let direct: Vec<Vec<f64>> = set_a.par_iter().map(|n| field(n, t + r)).collect::<Result<_>>()?;
    let shifted_b: Vec<Vec<f64>> =
        set_b.par_iter().map(|n| field(&n.shifted(r_steps)?, t)).collect::<Result<_>>()?;
    let pathwise: Vec<f64> = set_a
        .par_iter()
        .zip(&direct)
        .take(pathwise_replicas)
        .map(|(n, d)| {
            let s = field(&n.shifted(r_steps)?, t)?;
            let diff: Vec<f64> = d.iter().zip(&s).map(|(a, b)| a - b).collect();
            weighted_l2_norm(&diff, cloud, space)
        })
        .collect::<Result<_>>()?;
    let sample = |fields: &[Vec<f64>]| -> Vec<f64> { fields.iter().flat_map(|f| probes.iter().map(|&p| f[p])).collect() };
    let ks = ks_two_sample(&sample(&direct), &sample(&shifted_b));
    let max_pathwise = pathwise.iter().fold(0.0f64, |a, v| a.max(*v));
    Ok(ShiftReport { r_steps, pathwise, max_pathwise, ks })
}

/// `‖v_t^{(1)} − v_t^{(2)}‖ / max(‖v_t^{(1)}‖, ε)` for anchors `tp1`, `tp2` on
/// the same noise.
#[allow(clippy::too_many_arguments)]
pub fn check_tprime_independence(
    problem: &BdsdeProblem,
    noise: &NoiseReplica,
    t: f64,
    tp1: f64,
    tp2: f64,
    cloud: &ReferenceCloud,
    space: &WeightedSpace,
    settings: &LadderSettings,
) -> Result<f64> {
    if t > tp1.min(tp2) {
        return Err(LabError::Argument(format!("t = {t} exceeds min(T′) = {}", tp1.min(tp2))));
    }
    let a = stationary_field(problem, noise, tp1, t, cloud, space, settings)?.0;
    let b = stationary_field(problem, noise, tp2, t, cloud, space, settings)?.0;
    let diff: Vec<f64> = a.u.iter().zip(&b.u).map(|(x, y)| x - y).collect();
    let norm = weighted_l2_norm(&a.u, cloud, space)?;
    Ok(weighted_l2_norm(&diff, cloud, space)? / norm.max(1e-300))
}

/// Forward evolution of `dv = [ℒv + f]dt + Σ_j g_j dβ_j` used to test
/// `v_t = v(t, v_0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ForwardStepper {
    /// Explicit Euler per cloud point; valid when `b = 0` and `σ = 0`.
    Pointwise,
    /// Periodic Fourier step of `½Δ` on `[-half_width, half_width)` with
    /// explicit `f` and `g`; valid for `b = 0`, `σ = I` in one dimension.
    SpectralHeat { half_width: f64, points: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionReport {
    pub deviation: f64,
    pub reference: f64,
    /// Cloud points used in the comparison.
    pub compared: usize,
}

impl EvolutionReport {
    pub fn relative(&self) -> f64 {
        if self.reference > 0.0 {
            self.deviation / self.reference
        } else {
            self.deviation
        }
    }
}

fn unit_increments(problem: &BdsdeProblem, path: &TwoSidedPath, k: i64) -> Result<Vec<f64>> {
    (0..problem.modes()).map(|j| Ok(path.increment(j, k)? * problem.noise.unit_scale(j))).collect()
}

/// Evolves `v_{from}` of `run` to `to` with `noise.path` and compares with
/// `v_to` in `L²_ρ`.
#[allow(clippy::too_many_arguments)]
pub fn fixed_point_evolution_check(
    run: &StationaryRun,
    problem: &BdsdeProblem,
    stepper: ForwardStepper,
    noise: &NoiseReplica,
    from: f64,
    to: f64,
    cloud: &ReferenceCloud,
    space: &WeightedSpace,
) -> Result<EvolutionReport> {
    let idx = |t: f64| {
        run.times
            .iter()
            .position(|s| (s - t).abs() < 1e-12)
            .ok_or_else(|| LabError::Usage(format!("time {t} not sampled in the run")))
    };
    let (i0, i1) = (idx(from)?, idx(to)?);
    let dt = noise.path.dt();
    let (k0, k1) = (grid_index(from, dt)?, grid_index(to, dt)?);
    if k1 < k0 {
        return Err(LabError::Argument("evolution runs forward in time".into()));
    }
    let target = &run.fields[i1].u;
    let d = problem.dim();
    match stepper {
        ForwardStepper::Pointwise => {
            let mut v = run.fields[i0].u.clone();
            let zero = vec![0.0; d];
            for k in k0..k1 {
                let db = unit_increments(problem, &noise.path, k)?;
                let t = k as f64 * dt;
                for (i, vi) in v.iter_mut().enumerate() {
                    let x = cloud.point(i);
                    let mut next = *vi + dt * problem.f(t, x, *vi, &zero);
                    for (j, b) in db.iter().enumerate() {
                        next += problem.g(j, t, x, *vi, &zero) * b;
                    }
                    *vi = next;
                }
            }
            let diff: Vec<f64> = v.iter().zip(target).map(|(a, b)| a - b).collect();
            Ok(EvolutionReport {
                deviation: weighted_l2_norm(&diff, cloud, space)?,
                reference: weighted_l2_norm(target, cloud, space)?,
                compared: cloud.len(),
            })
        }
        ForwardStepper::SpectralHeat { half_width, points } => {
            if d != 1 || points < 4 || !(half_width > 0.0) {
                return Err(LabError::Argument("spectral stepper needs d = 1, points ≥ 4, half_width > 0".into()));
            }
            let h = 2.0 * half_width / points as f64;
            let xs: Vec<f64> = (0..points).map(|i| -half_width + i as f64 * h).collect();
            let rec = &run.interpolants[i0];
            let mut v: Vec<f64> = xs.iter().map(|x| rec.basis.evaluate(&rec.y_coeffs, &[*x])).collect();
            let wave: Vec<f64> = (0..points)
                .map(|i| {
                    let m = if i <= points / 2 { i as f64 } else { i as f64 - points as f64 };
                    std::f64::consts::PI * m / half_width
                })
                .collect();
            let mut planner = FftPlanner::new();
            let fwd = planner.plan_fft_forward(points);
            let inv = planner.plan_fft_inverse(points);
            let mut buf: Vec<Complex<f64>> = vec![Complex::new(0.0, 0.0); points];
            let mut grad_buf = buf.clone();
            let scale = 1.0 / points as f64;
            for k in k0..k1 {
                let t = k as f64 * dt;
                let db = unit_increments(problem, &noise.path, k)?;
                buf.iter_mut().zip(&v).for_each(|(b, x)| *b = Complex::new(*x, 0.0));
                fwd.process(&mut buf);
                grad_buf.iter_mut().zip(&buf).zip(&wave).for_each(|((g, b), w)| *g = b * Complex::new(0.0, *w));
                inv.process(&mut grad_buf);
                let mut next: Vec<f64> = Vec::with_capacity(points);
                for (i, x) in xs.iter().enumerate() {
                    let z = [grad_buf[i].re * scale];
                    let mut val = v[i] + dt * problem.f(t, &[*x], v[i], &z);
                    for (j, b) in db.iter().enumerate() {
                        val += problem.g(j, t, &[*x], v[i], &z) * b;
                    }
                    next.push(val);
                }
                buf.iter_mut().zip(&next).for_each(|(b, x)| *b = Complex::new(*x, 0.0));
                fwd.process(&mut buf);
                buf.iter_mut().zip(&wave).for_each(|(b, w)| *b *= (-0.5 * w * w * dt).exp());
                inv.process(&mut buf);
                v.iter_mut().zip(&buf).for_each(|(x, b)| *x = b.re * scale);
            }
            // linear interpolation at the cloud points inside the box
            let (mut dev, mut refn, mut used) = (0.0, 0.0, 0usize);
            for i in 0..cloud.len() {
                let x = cloud.point(i)[0];
                if x < -half_width || x >= half_width - h {
                    continue;
                }
                let s = (x + half_width) / h;
                let j = s.floor() as usize;
                let a = s - j as f64;
                let val = (1.0 - a) * v[j] + a * v[j + 1];
                let w = cloud.weights()[i];
                dev += w * (val - target[i]).powi(2);
                refn += w * target[i].powi(2);
                used += 1;
            }
            Ok(EvolutionReport {
                deviation: (space.normalizer() * dev).sqrt(),
                reference: (space.normalizer() * refn).sqrt(),
                compared: used,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::finite::{CoefficientFn, Horizon, StructuralConstants, TerminalFn};
    use crate::forward::DiffusionConfig;
    use crate::noise::{sample_backward, NoiseModel, PathGrid};
    use crate::weighted_space::sample_reference_cloud;
    use std::sync::Arc;

    fn ou(beta: f64, cfg: DiffusionConfig) -> BdsdeProblem {
        let f: CoefficientFn = Arc::new(|_, _, y, _| -y + 1.0);
        let g: CoefficientFn = Arc::new(move |_, _, _, _| beta);
        let h: TerminalFn = Arc::new(|_| 0.0);
        BdsdeProblem::new(
            "ou",
            cfg,
            NoiseModel::new(vec![1.0], 1).unwrap(),
            h,
            f,
            vec![g],
            StructuralConstants {
                mu: -1.0,
                c: 0.0,
                c_j: vec![0.0],
                alpha_j: vec![0.0],
                m_j: vec![beta * beta],
                m: 1.0,
                m0: 2.0,
                lipschitz: 0.0,
            },
            Horizon::Infinite,
        )
        .unwrap()
    }

    fn replica(p: &BdsdeProblem, dt: f64, id: u64) -> NoiseReplica {
        let path = sample_backward(&p.noise, PathGrid::symmetric(dt, 30.0).unwrap(), 11, id).unwrap();
        NoiseReplica { path, driver: ForwardDriver::new(11, id, 1) }
    }

    fn fixture() -> (WeightedSpace, ReferenceCloud, LadderSettings) {
        let s = WeightedSpace::new(1, 4.0, 2.5).unwrap();
        let c = sample_reference_cloud(16, &s, 1).unwrap();
        (s, c, LadderSettings { n_max: 10, ..Default::default() })
    }

    #[test]
    fn zero_problem_is_zero() {
        let (s, c, st) = fixture();
        let p = ou(0.0, DiffusionConfig::zero(1)).with_terminal(Arc::new(|_| 0.0));
        let f: CoefficientFn = Arc::new(|_, _, _, _| 0.0);
        let zero = BdsdeProblem { generator: f.clone(), noise_coeffs: vec![f], ..p };
        let n = replica(&zero, 0.05, 0);
        let st = LadderSettings { discount: Some(0.5), ..st };
        let run = build_stationary_solution(&zero, &n, 5.0, &[0.0, 1.0, 2.0], &c, &s, &st).unwrap();
        assert!(run.fields.iter().all(|f| f.u.iter().all(|v| *v == 0.0)));
        assert!(build_stationary_solution(&zero, &n, 1.0, &[2.0], &c, &s, &st).is_err());
    }

    #[test]
    fn anchor_and_shift_are_exact() {
        let (s, c, st) = fixture();
        let p = ou(0.5, DiffusionConfig::zero(1));
        let n = replica(&p, 0.05, 3);
        assert_eq!(check_tprime_independence(&p, &n, 1.0, 5.0, 8.0, &c, &s, &st).unwrap(), 0.0);
        let a = stationary_field(&p, &n, 6.0, 2.0, &c, &s, &st).unwrap().0;
        let b = stationary_field(&p, &n.shifted(20).unwrap(), 6.0, 1.0, &c, &s, &st).unwrap().0;
        assert_eq!(a.u, b.u);
    }

    #[test]
    fn pointwise_evolution_tracks_the_stationary_field() {
        let (s, c, st) = fixture();
        let p = ou(0.5, DiffusionConfig::zero(1));
        let n = replica(&p, 0.01, 4);
        let run = build_stationary_solution(&p, &n, 4.0, &[0.0, 1.0], &c, &s, &st).unwrap();
        let rep = fixed_point_evolution_check(&run, &p, ForwardStepper::Pointwise, &n, 0.0, 1.0, &c, &s).unwrap();
        assert!(rep.relative() < 0.03, "{rep:?}");
    }
}

//! From BDSDE solutions to the SPDE: `u(t, x) = Y_t^{t,x}`, the weak-form
//! residual against bump test functions and the check `Z_s = (σ*∇u)(s, X_s)`.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::finite::solver::{BackwardSolution, ModeIncrements};
use crate::finite::BdsdeProblem;
use crate::forward::{fd_step, DiffusionConfig, ParticleEnsemble};
use crate::weighted_space::{euclid, ReferenceCloud, WeightedSpace};

/// Field values on the reference cloud at one time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSnapshot {
    pub t: f64,
    pub u: Vec<f64>,
    /// `σ*∇u`, particle-major.
    pub grad: Option<Vec<f64>>,
}

/// `u(t, ·)` and `σ*∇u(t, ·)` read off the start node of a solution whose
/// ensemble was launched at `t` from the cloud.
pub fn extract_field(solution: &BackwardSolution, t: f64) -> Result<FieldSnapshot> {
    let t0 = solution.grid.t0;
    if (t - t0).abs() > 1e-9 * solution.grid.dt {
        return Err(LabError::Usage(format!("t = {t} is not the start node {t0} of this solution")));
    }
    Ok(FieldSnapshot { t, u: solution.y[0].clone(), grad: Some(solution.z[0].clone()) })
}

/// Regression interpolants of `u` and `σ*∇u` evaluated on the cloud at every
/// node of the solution.
pub fn interpolated_snapshots(solution: &BackwardSolution, cloud: &ReferenceCloud) -> Vec<FieldSnapshot> {
    (0..solution.nodes())
        .map(|k| {
            let mut u = Vec::with_capacity(cloud.len());
            let mut grad = Vec::with_capacity(cloud.len() * solution.dim);
            for i in 0..cloud.len() {
                let x = cloud.point(i);
                u.push(solution.u_interpolant(k, x));
                grad.extend(solution.z_interpolant(k, x));
            }
            FieldSnapshot { t: solution.grid.time(k), u, grad: Some(grad) }
        })
        .collect()
}

/// Normalised mollifier `exp(1 − 1/(1 − |x−c|²/R²))` supported in the ball
/// of radius `R` about `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub id: String,
    pub center: Vec<f64>,
    pub radius: f64,
}

impl TestFunction {
    pub fn bump(id: &str, center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || center.is_empty() {
            return Err(LabError::Argument("bump needs a positive radius and a center".into()));
        }
        Ok(Self { id: id.into(), center, radius })
    }

    fn s(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.center).map(|(a, c)| (a - c).powi(2)).sum::<f64>() / (self.radius * self.radius)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let s = self.s(x);
        if s >= 1.0 {
            0.0
        } else {
            (1.0 - 1.0 / (1.0 - s)).exp()
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let s = self.s(x);
        if s >= 1.0 {
            return vec![0.0; x.len()];
        }
        let f = -self.value(x) * 2.0 / (self.radius * self.radius * (1.0 - s).powi(2));
        x.iter().zip(&self.center).map(|(a, c)| f * (a - c)).collect()
    }

    /// Largest `|φ|` over `n` points on and just outside the support sphere.
    pub fn boundary_probe(&self, n: usize) -> f64 {
        let d = self.center.len();
        let mut worst = 0.0f64;
        for k in 0..n {
            let a = std::f64::consts::TAU * k as f64 / n as f64;
            let dir: Vec<f64> = match d {
                1 => vec![if k % 2 == 0 { 1.0 } else { -1.0 }],
                _ => {
                    let mut v = vec![0.0; d];
                    v[0] = a.cos();
                    v[1] = a.sin();
                    v
                }
            };
            for scale in [1.0, 1.0 + 1e-9, 1.5] {
                let x: Vec<f64> = self.center.iter().zip(&dir).map(|(c, u)| c + scale * self.radius * u).collect();
                worst = worst.max(self.value(&x).abs());
            }
        }
        worst
    }
}

/// Bumps at three centers on the first axis with two radii.
pub fn default_test_family(dim: usize) -> Vec<TestFunction> {
    let mut out = Vec::new();
    for (ci, c) in [-1.0, 0.0, 1.0].into_iter().enumerate() {
        for (ri, r) in [1.0, 2.0].into_iter().enumerate() {
            let mut center = vec![0.0; dim];
            center[0] = c;
            out.push(TestFunction::bump(&format!("bump_c{ci}_r{ri}"), center, r).expect("valid bump"));
        }
    }
    out
}

/// The six terms of the weak form and the normalised residual
/// `|T1 − T2 + T3 + T4 − T5 + T6| / max|T_i|` with
/// `T1 = ∫u(t)φ`, `T2 = ∫u(T)φ`, `T3 = ½∫∫σ*∇u·σ*∇φ`, `T4 = ∫∫u div((b−Ã)φ)`,
/// `T5 = ∫∫fφ` and `T6 = Σ_j∫∫g_jφ d†β̂_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakResidual {
    pub phi_id: String,
    pub terms: [f64; 6],
    pub residual: f64,
    pub normalizer: f64,
}

/// `div((b − Ã)φ) = φ div(b − Ã) + (b − Ã)·∇φ`, the divergence by central
/// differences.
fn transport_divergence(cfg: &DiffusionConfig, phi: &TestFunction, x: &[f64]) -> f64 {
    let v = phi.value(x);
    if v == 0.0 {
        return 0.0;
    }
    let d = x.len();
    let field = |y: &[f64]| -> Vec<f64> {
        let mut b = vec![0.0; d];
        cfg.drift(y, &mut b);
        let at = cfg.a_tilde(y);
        b.iter().zip(at).map(|(p, q)| p - q).collect()
    };
    let h = fd_step(x);
    let mut div = 0.0;
    let mut y = x.to_vec();
    for i in 0..d {
        y[i] = x[i] + h;
        let up = field(&y)[i];
        y[i] = x[i] - h;
        let dn = field(&y)[i];
        y[i] = x[i];
        div += (up - dn) / (2.0 * h);
    }
    let w = field(x);
    let g = phi.gradient(x);
    v * div + w.iter().zip(g).map(|(a, b)| a * b).sum::<f64>()
}

/// Weak-form residual over `[snapshots[0].t, snapshots.last().t]`. Time
/// integrals use the trapezoid rule; the backward term uses right endpoints
/// and the unit-variance increments `noise` of the same grid. With `radius`
/// the spatial integrals are restricted to `|x − c| ≤ radius`.
pub fn weak_residual(
    snapshots: &[FieldSnapshot],
    problem: &BdsdeProblem,
    phi: &TestFunction,
    noise: &ModeIncrements,
    cloud: &ReferenceCloud,
    space: &WeightedSpace,
    radius: Option<f64>,
) -> Result<WeakResidual> {
    let n = snapshots.len();
    if n < 2 {
        return Err(LabError::Argument("weak residual needs at least two snapshots".into()));
    }
    if noise.modes() != problem.modes() || noise.beta.iter().any(|b| b.len() < n - 1) {
        return Err(LabError::Argument("increments do not cover the snapshot grid".into()));
    }
    let d = problem.dim();
    let cfg = &problem.diffusion;
    let m = cloud.len();
    for s in snapshots {
        if s.u.len() != m || s.grad.as_ref().is_some_and(|g| g.len() != m * d) {
            return Err(LabError::Argument(format!("snapshot at t = {} is not cloud-aligned", s.t)));
        }
    }
    let inside = |x: &[f64]| match radius {
        Some(r) => euclid(&x.iter().zip(&phi.center).map(|(a, c)| a - c).collect::<Vec<_>>()) <= r,
        None => true,
    };

    // per-particle static factors
    let mut phi_v = vec![0.0; m];
    let mut sphi = vec![0.0; m * d];
    let mut trans = vec![0.0; m];
    let mut sig = vec![0.0; d * d];
    for i in 0..m {
        let x = cloud.point(i);
        if !inside(x) {
            continue;
        }
        phi_v[i] = phi.value(x);
        trans[i] = transport_divergence(cfg, phi, x);
        let g = phi.gradient(x);
        cfg.sigma(x, &mut sig);
        for j in 0..d {
            sphi[i * d + j] = (0..d).map(|r| sig[r * d + j] * g[r]).sum();
        }
    }
    let zero_grad = vec![0.0; m * d];
    fn grad_of<'a>(s: &'a FieldSnapshot, zero: &'a [f64]) -> &'a [f64] {
        s.grad.as_deref().unwrap_or(zero)
    }
    let lebesgue = |f: &dyn Fn(usize) -> f64| cloud.integrate_lebesgue(space, |i, _| f(i));

    let t1 = lebesgue(&|i| snapshots[0].u[i] * phi_v[i]);
    let t2 = lebesgue(&|i| snapshots[n - 1].u[i] * phi_v[i]);
    let per_node = |s: &FieldSnapshot| -> (f64, f64, f64) {
        let g = grad_of(s, &zero_grad);
        let a = lebesgue(&|i| 0.5 * (0..d).map(|j| g[i * d + j] * sphi[i * d + j]).sum::<f64>());
        let b = lebesgue(&|i| s.u[i] * trans[i]);
        let c = lebesgue(&|i| {
            if phi_v[i] == 0.0 {
                0.0
            } else {
                problem.f(s.t, cloud.point(i), s.u[i], &g[i * d..(i + 1) * d]) * phi_v[i]
            }
        });
        (a, b, c)
    };
    let nodes: Vec<(f64, f64, f64)> = snapshots.iter().map(per_node).collect();
    let (mut t3, mut t4, mut t5) = (0.0, 0.0, 0.0);
    for k in 0..n - 1 {
        let h = snapshots[k + 1].t - snapshots[k].t;
        t3 += 0.5 * h * (nodes[k].0 + nodes[k + 1].0);
        t4 += 0.5 * h * (nodes[k].1 + nodes[k + 1].1);
        t5 += 0.5 * h * (nodes[k].2 + nodes[k + 1].2);
    }
    let mut t6 = 0.0;
    for k in 0..n - 1 {
        let s = &snapshots[k + 1];
        let g = grad_of(s, &zero_grad);
        for j in 0..problem.modes() {
            let db = noise.beta[j][k];
            if db == 0.0 {
                continue;
            }
            let v = lebesgue(&|i| {
                if phi_v[i] == 0.0 {
                    0.0
                } else {
                    problem.g(j, s.t, cloud.point(i), s.u[i], &g[i * d..(i + 1) * d]) * phi_v[i]
                }
            });
            t6 += v * db;
        }
    }
    let terms = [t1, t2, t3, t4, t5, t6];
    let normalizer = terms.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let raw = t1 - t2 + t3 + t4 - t5 + t6;
    let residual = if normalizer > 0.0 { raw.abs() / normalizer } else { raw.abs() };
    Ok(WeakResidual { phi_id: phi.id.clone(), terms, residual, normalizer })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    /// `L²_ρ` discrepancy of `Z` and `σ*∇u` averaged over the nodes.
    pub discrepancy: f64,
    /// The same average of `‖σ*∇u‖`.
    pub reference: f64,
}

impl GradientCheck {
    pub fn relative(&self) -> f64 {
        if self.reference > 0.0 {
            self.discrepancy / self.reference
        } else {
            self.discrepancy
        }
    }
}

/// Compares `Z_s` with `σ*(X_s)` times the finite-difference gradient of the
/// `u` interpolant at `X_s`, over the non-terminal nodes. Particle `i` is
/// weighted by the cloud weight of its start point.
pub fn gradient_representation_check(
    solution: &BackwardSolution,
    ensemble: &ParticleEnsemble,
    config: &DiffusionConfig,
    cloud: &ReferenceCloud,
    space: &WeightedSpace,
) -> Result<GradientCheck> {
    let (m, d) = (ensemble.particles(), ensemble.dim());
    if solution.particles != m || cloud.len() != m || solution.nodes() != ensemble.nodes() {
        return Err(LabError::Argument("solution, ensemble and cloud are not aligned".into()));
    }
    let steps = solution.nodes() - 1;
    let mut sig = vec![0.0; d * d];
    let (mut disc, mut refn) = (0.0, 0.0);
    for k in 0..steps {
        let (mut a, mut b) = (0.0, 0.0);
        for i in 0..m {
            let x = ensemble.position(k, i);
            let h = fd_step(x);
            let mut y = x.to_vec();
            let mut grad = vec![0.0; d];
            for c in 0..d {
                y[c] = x[c] + h;
                let up = solution.u_interpolant(k, &y);
                y[c] = x[c] - h;
                let dn = solution.u_interpolant(k, &y);
                y[c] = x[c];
                grad[c] = (up - dn) / (2.0 * h);
            }
            config.sigma(x, &mut sig);
            let sg: Vec<f64> = (0..d).map(|j| (0..d).map(|r| sig[r * d + j] * grad[r]).sum()).collect();
            let w = cloud.weights()[i];
            let z = &solution.z[k][i * d..(i + 1) * d];
            a += w * z.iter().zip(&sg).map(|(p, q)| (p - q).powi(2)).sum::<f64>();
            b += w * sg.iter().map(|v| v * v).sum::<f64>();
        }
        disc += (space.normalizer() * a).sqrt();
        refn += (space.normalizer() * b).sqrt();
    }
    Ok(GradientCheck { discrepancy: disc / steps as f64, reference: refn / steps as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::finite::solver::{picard_solve, PicardSettings};
    use crate::finite::{CoefficientFn, Horizon, StructuralConstants, TerminalFn};
    use crate::forward::euler_maruyama;
    use crate::noise::{ForwardDriver, NoiseModel};
    use crate::weighted_space::sample_reference_cloud;
    use std::sync::Arc;

    fn problem(cfg: DiffusionConfig, h: TerminalFn, f: CoefficientFn, g: CoefficientFn) -> BdsdeProblem {
        BdsdeProblem::new(
            "b",
            cfg,
            NoiseModel::new(vec![1.0], 1).unwrap(),
            h,
            f,
            vec![g],
            StructuralConstants {
                mu: 0.0,
                c: 0.0,
                c_j: vec![0.0],
                alpha_j: vec![0.0],
                m_j: vec![0.0],
                m: 0.0,
                m0: 1.0,
                lipschitz: 1.0,
            },
            Horizon::Finite { t: 1.0 },
        )
        .unwrap()
    }

    #[test]
    fn bump_support_and_gradient() {
        let phi = TestFunction::bump("b", vec![0.5], 1.5).unwrap();
        assert_eq!(phi.value(&[0.5]), 1.0);
        assert_eq!(phi.boundary_probe(100), 0.0);
        for x in [-0.3, 0.1, 1.2, 1.9] {
            let h = 1e-6;
            let fd = (phi.value(&[x + h]) - phi.value(&[x - h])) / (2.0 * h);
            assert!((fd - phi.gradient(&[x])[0]).abs() < 1e-7);
        }
        assert_eq!(default_test_family(2).len(), 6);
    }

    #[test]
    fn extract_field_is_bookkeeping() {
        let s = WeightedSpace::new(1, 4.0, 2.5).unwrap();
        let c = sample_reference_cloud(100, &s, 2).unwrap();
        let cfg = DiffusionConfig::heat(1);
        let e = euler_maruyama(0.0, &c, &cfg, &ForwardDriver::new(1, 0, 1), 0.1, 10).unwrap();
        let zero: CoefficientFn = Arc::new(|_, _, _, _| 0.0);
        let p = problem(cfg, Arc::new(|x| x[0].tanh()), zero.clone(), zero);
        let (sol, _) = picard_solve(&p, &e, &ModeIncrements::zeros(1, 10), &s, &PicardSettings::default()).unwrap();
        let snap = extract_field(&sol, 0.0).unwrap();
        assert_eq!(snap.u, sol.y[0]);
        assert_eq!(snap.grad.as_ref().unwrap(), &sol.z[0]);
        assert!(matches!(extract_field(&sol, 0.3), Err(LabError::Usage(_))));
    }

    #[test]
    fn constant_field_with_zero_data_has_zero_residual() {
        let s = WeightedSpace::new(1, 4.0, 2.5).unwrap();
        let c = sample_reference_cloud(500, &s, 2).unwrap();
        let zero: CoefficientFn = Arc::new(|_, _, _, _| 0.0);
        let p = problem(DiffusionConfig::zero(1), Arc::new(|_| 2.0), zero.clone(), zero);
        let snaps: Vec<FieldSnapshot> = (0..=10)
            .map(|k| FieldSnapshot { t: 0.1 * k as f64, u: vec![2.0; 500], grad: Some(vec![0.0; 500]) })
            .collect();
        let noise = ModeIncrements::zeros(1, 10);
        for phi in default_test_family(1) {
            let r = weak_residual(&snaps, &p, &phi, &noise, &c, &s, None).unwrap();
            assert!(r.residual <= 1e-12, "{}: {}", phi.id, r.residual);
            let wide = weak_residual(&snaps, &p, &phi, &noise, &c, &s, Some(phi.radius * 3.0)).unwrap();
            assert!((wide.residual - r.residual).abs() <= 1e-12);
        }
    }

    #[test]
    fn linear_terminal_gradient_is_recovered() {
        let s = WeightedSpace::new(1, 4.0, 2.5).unwrap();
        let c = sample_reference_cloud(10_000, &s, 5).unwrap();
        let cfg = DiffusionConfig::heat(1);
        let e = euler_maruyama(0.0, &c, &cfg, &ForwardDriver::new(5, 0, 1), 0.05, 20).unwrap();
        let zero: CoefficientFn = Arc::new(|_, _, _, _| 0.0);
        let p = problem(cfg.clone(), Arc::new(|x| 0.8 * x[0]), zero.clone(), zero);
        let (sol, _) = picard_solve(&p, &e, &ModeIncrements::zeros(1, 20), &s, &PicardSettings::default()).unwrap();
        let chk = gradient_representation_check(&sol, &e, &cfg, &c, &s).unwrap();
        assert!(chk.relative() < 0.05, "{chk:?}");
    }
}

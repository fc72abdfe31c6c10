//! Regression backward recursion for the frozen-`g` equation and the outer
//! Picard iteration.
//!
//! On `[t_k, t_{k+1}]` the scheme reads
//! `Y_k = E_k[Y_{k+1} − Σ_j g_j(t_{k+1}, X_{k+1}, U_{k+1}, V_{k+1})Δβ̂_{j,k}] + Δt·f(t_k, X_k, Y_k, Z_k)`,
//! `Z_k = E_k[(Y_{k+1} − Σ_j g_jΔβ̂_{j,k} − E_k[·])ΔW_k]/Δt`,
//! with `E_k` the regression on the basis at `X_k` and `(U, V)` the frozen
//! iterate. Subtracting the fitted mean before multiplying by `ΔW_k` is a
//! control variate; it does not change the conditional expectation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::problem::BdsdeProblem;
use super::regression::{Basis, LeastSquares};
use crate::error::{LabError, Result};
use crate::forward::{ParticleEnsemble, TimeGrid};
use crate::noise::{NoiseModel, TwoSidedPath};
use crate::weighted_space::WeightedSpace;

/// Smallest particle chunk handed to a worker.
const PAR_MIN: usize = 1024;

/// Unit-variance backward increments `Δβ̂_{j,k}` on an ensemble grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeIncrements {
    /// `[mode][interval]`
    pub beta: Vec<Vec<f64>>,
}

impl ModeIncrements {
    pub fn zeros(modes: usize, steps: usize) -> Self {
        Self { beta: vec![vec![0.0; steps]; modes] }
    }

    /// Reads `ΔB̂_j/sqrt(λ_j)` for the grid intervals from a path indexed in
    /// the same clock as the grid.
    pub fn from_path(path: &TwoSidedPath, model: &NoiseModel, grid: TimeGrid) -> Result<Self> {
        if path.channels() != model.modes() {
            return Err(LabError::Argument("path channels differ from the mode count".into()));
        }
        if (path.dt() - grid.dt).abs() > 1e-12 * grid.dt {
            return Err(LabError::Argument("path and grid steps differ".into()));
        }
        let first = grid.start_node();
        let beta = (0..model.modes())
            .map(|j| {
                let s = model.unit_scale(j);
                Ok(path.increments_from(j, first, grid.steps)?.iter().map(|v| v * s).collect())
            })
            .collect::<Result<_>>()?;
        Ok(Self { beta })
    }

    pub fn modes(&self) -> usize {
        self.beta.len()
    }

    /// Increments of the first `steps` intervals.
    pub fn prefix(&self, steps: usize) -> Self {
        Self { beta: self.beta.iter().map(|b| b[..steps.min(b.len())].to_vec()).collect() }
    }
}

/// `g_j(t_k, X_k, U_k, V_k)`, stored `[node][mode][particle]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenG {
    pub values: Vec<Vec<Vec<f64>>>,
}

impl FrozenG {
    /// Freezes `g` along the iterate `(u, v)`; `None` means `(0, 0)`.
    pub fn evaluate(problem: &BdsdeProblem, ensemble: &ParticleEnsemble, iterate: Option<&BackwardSolution>) -> Self {
        let g = ensemble.grid();
        let (m, d) = (ensemble.particles(), ensemble.dim());
        let zero = vec![0.0; d];
        let values = (0..=g.steps)
            .map(|k| {
                let r = g.time(k);
                (0..problem.modes())
                    .map(|j| {
                        (0..m)
                            .into_par_iter()
                            .with_min_len(PAR_MIN)
                            .map(|i| {
                                let x = ensemble.position(k, i);
                                match iterate {
                                    Some(s) => problem.g(j, r, x, s.y[k][i], &s.z[k][i * d..(i + 1) * d]),
                                    None => problem.g(j, r, x, 0.0, &zero),
                                }
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Self { values }
    }
}

/// Regression record of one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub basis: Basis,
    pub reduced: bool,
    /// Projection of `Y_k` on the basis (the interpolant of `u(t_k, ·)`).
    pub y_coeffs: Vec<f64>,
    /// Projection of each `Z_k` component.
    pub z_coeffs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackwardSolution {
    pub grid: TimeGrid,
    pub dim: usize,
    pub particles: usize,
    /// `[node][particle]`
    pub y: Vec<Vec<f64>>,
    /// `[node][particle·d + component]`; the terminal node repeats the last recursion node.
    pub z: Vec<Vec<f64>>,
    pub records: Vec<NodeRecord>,
}

impl BackwardSolution {
    pub fn zeros(grid: TimeGrid, dim: usize, particles: usize, basis: Basis) -> Self {
        let p = basis.len(dim);
        Self {
            grid,
            dim,
            particles,
            y: vec![vec![0.0; particles]; grid.steps + 1],
            z: vec![vec![0.0; particles * dim]; grid.steps + 1],
            records: vec![
                NodeRecord { basis, reduced: false, y_coeffs: vec![0.0; p], z_coeffs: vec![vec![0.0; p]; dim] };
                grid.steps + 1
            ],
        }
    }

    pub fn nodes(&self) -> usize {
        self.y.len()
    }

    /// Regression interpolant of `Y` at node `k`.
    pub fn u_interpolant(&self, k: usize, x: &[f64]) -> f64 {
        let r = &self.records[k];
        r.basis.evaluate(&r.y_coeffs, x)
    }

    /// Regression interpolant of `Z` at node `k`.
    pub fn z_interpolant(&self, k: usize, x: &[f64]) -> Vec<f64> {
        let r = &self.records[k];
        r.z_coeffs.iter().map(|c| r.basis.evaluate(c, x)).collect()
    }

    /// Copy on a longer grid `[t_0, t_0 + steps·dt]` with `(Y, Z) = (0, 0)`
    /// after the current horizon.
    pub fn zero_extended(&self, steps: usize) -> Self {
        let mut out = self.clone();
        out.grid.steps = steps.max(self.grid.steps);
        let last = self.records.last().cloned().expect("nonempty solution");
        let zero_rec = NodeRecord {
            y_coeffs: vec![0.0; last.y_coeffs.len()],
            z_coeffs: vec![vec![0.0; last.y_coeffs.len()]; self.dim],
            ..last
        };
        while out.y.len() < out.grid.steps + 1 {
            out.y.push(vec![0.0; self.particles]);
            out.z.push(vec![0.0; self.particles * self.dim]);
            out.records.push(zero_rec.clone());
        }
        out
    }
}

/// One backward sweep of the frozen-`g` equation.
pub fn backward_lsmc_recursion(
    problem: &BdsdeProblem,
    ensemble: &ParticleEnsemble,
    noise: &ModeIncrements,
    frozen: &FrozenG,
    basis: Basis,
) -> Result<BackwardSolution> {
    let grid = ensemble.grid();
    let (m, d, n) = (ensemble.particles(), ensemble.dim(), grid.steps);
    if noise.modes() != problem.modes() || noise.beta.iter().any(|b| b.len() != n) {
        return Err(LabError::Argument("backward increments do not match modes and grid".into()));
    }
    if frozen.values.len() != n + 1 {
        return Err(LabError::Argument("frozen g does not cover every node".into()));
    }
    let dt = grid.dt;
    let mut sol = BackwardSolution::zeros(grid, d, m, basis);
    sol.y[n] = (0..m).into_par_iter().with_min_len(PAR_MIN).map(|i| problem.h(ensemble.position(n, i))).collect();

    let mut last_z_coeffs = None;
    for k in (0..n).rev() {
        let ls = LeastSquares::new(basis, d, ensemble.node_positions(k))?;
        let target: Vec<f64> = {
            let next = &sol.y[k + 1];
            let g_next = &frozen.values[k + 1];
            (0..m)
                .map(|i| {
                    let mut v = next[i];
                    for (j, gj) in g_next.iter().enumerate() {
                        v -= gj[i] * noise.beta[j][k];
                    }
                    v
                })
                .collect()
        };
        let (_, mean) = ls.project(&target);
        let dw = ensemble.node_increments(k);
        let mut z = vec![0.0; m * d];
        let mut z_coeffs = Vec::with_capacity(d);
        for c in 0..d {
            let rhs: Vec<f64> = (0..m).map(|i| (target[i] - mean[i]) * dw[i * d + c]).collect();
            let (coef, fit) = ls.project(&rhs);
            for i in 0..m {
                z[i * d + c] = fit[i] / dt;
            }
            z_coeffs.push(coef.iter().map(|v| v / dt).collect::<Vec<f64>>());
        }
        let t = grid.time(k);
        let y: Vec<f64> = (0..m)
            .into_par_iter()
            .with_min_len(PAR_MIN)
            .map(|i| {
                let x = ensemble.position(k, i);
                let zi = &z[i * d..(i + 1) * d];
                let mut y = mean[i];
                for _ in 0..2 {
                    y = mean[i] + dt * problem.f(t, x, y, zi);
                }
                y
            })
            .collect();
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(LabError::Numerical { particle: i, message: format!("non-finite Y at node {k}") });
        }
        let y_coeffs = ls.coefficients(&y);
        sol.records[k] = NodeRecord { basis: ls.basis(), reduced: ls.was_reduced(), y_coeffs, z_coeffs: z_coeffs.clone() };
        if k == n - 1 {
            last_z_coeffs = Some((z.clone(), z_coeffs));
        }
        sol.y[k] = y;
        sol.z[k] = z;
    }

    // terminal node: Y is h exactly; Z is carried over from the last step
    let terminal_fit = LeastSquares::new(basis, d, ensemble.node_positions(n))?;
    let (zn, zc) = last_z_coeffs.expect("grid has at least one step");
    sol.z[n] = zn;
    sol.records[n] = NodeRecord {
        basis: terminal_fit.basis(),
        reduced: terminal_fit.was_reduced(),
        y_coeffs: terminal_fit.coefficients(&sol.y[n]),
        z_coeffs: zc,
    };
    Ok(sol)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PicardSettings {
    pub max_iters: usize,
    /// Iterations performed before the stopping rule is consulted.
    pub min_iters: usize,
    /// Relative tolerance on the contraction norm of successive differences.
    pub tol: f64,
    pub basis: Basis,
    /// Replaces the contraction discount derived from the constants.
    pub discount: Option<f64>,
}

impl Default for PicardSettings {
    fn default() -> Self {
        Self { max_iters: 40, min_iters: 2, tol: 1e-6, basis: Basis::default(), discount: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionDiagnostics {
    pub discount: f64,
    pub y_weight: f64,
    /// `2Σα_j`, the factor bounding consecutive squared-norm ratios.
    pub bound: f64,
    /// Squared contraction norm of iterate `m` minus iterate `m−1`, `m = 1, 2, …`.
    pub differences: Vec<f64>,
    /// `differences[m−1]/differences[m−2]`, listed from `m = 2`.
    pub ratios: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl ContractionDiagnostics {
    /// Ratio observed at iteration `m ≥ 2`.
    pub fn ratio_at(&self, m: usize) -> Option<f64> {
        m.checked_sub(2).and_then(|i| self.ratios.get(i)).copied()
    }
}

/// `∫ e^{K(r−t)} (w_Y ‖a_Y − b_Y‖² + ‖a_Z − b_Z‖²) dr` by the trapezoid rule.
pub fn contraction_norm(
    a: &BackwardSolution,
    b: Option<&BackwardSolution>,
    discount: f64,
    y_weight: f64,
    space: &WeightedSpace,
) -> f64 {
    let g = a.grid;
    let m = a.particles as f64;
    let z_rho = space.normalizer();
    let node = |k: usize| -> f64 {
        let (dy, dz): (f64, f64) = match b {
            Some(b) => (
                a.y[k].iter().zip(&b.y[k]).map(|(p, q)| (p - q).powi(2)).sum(),
                a.z[k].iter().zip(&b.z[k]).map(|(p, q)| (p - q).powi(2)).sum(),
            ),
            None => (a.y[k].iter().map(|p| p * p).sum(), a.z[k].iter().map(|p| p * p).sum()),
        };
        (discount * (g.time(k) - g.t0)).exp() * z_rho * (y_weight * dy + dz) / m
    };
    (0..g.steps).map(|k| 0.5 * g.dt * (node(k) + node(k + 1))).sum()
}

/// Picard iteration over the frozen-`g` map from `(Y⁰, Z⁰) = (0, 0)`.
pub fn picard_solve(
    problem: &BdsdeProblem,
    ensemble: &ParticleEnsemble,
    noise: &ModeIncrements,
    space: &WeightedSpace,
    settings: &PicardSettings,
) -> Result<(BackwardSolution, ContractionDiagnostics)> {
    let (k_default, y_weight) = problem.constants.picard_weight();
    let discount = settings.discount.unwrap_or(k_default);
    let mut diag = ContractionDiagnostics {
        discount,
        y_weight,
        bound: problem.constants.contraction_bound(),
        differences: Vec::new(),
        ratios: Vec::new(),
        iterations: 0,
        converged: false,
    };
    let mut prev: Option<BackwardSolution> = None;
    for it in 1..=settings.max_iters.max(1) {
        let frozen = FrozenG::evaluate(problem, ensemble, prev.as_ref());
        let next = backward_lsmc_recursion(problem, ensemble, noise, &frozen, settings.basis)?;
        let diff = contraction_norm(&next, prev.as_ref(), discount, y_weight, space);
        if !diff.is_finite() {
            return Err(LabError::Diverged { iterations: it, ratios: diag.ratios });
        }
        if let Some(&last) = diag.differences.last() {
            if last > 0.0 {
                diag.ratios.push(diff / last);
            }
        }
        diag.differences.push(diff);
        diag.iterations = it;
        let size = contraction_norm(&next, None, discount, y_weight, space);
        let small = diff.sqrt() <= settings.tol * size.sqrt().max(f64::MIN_POSITIVE);
        prev = Some(next);
        if it >= 2 && (diff == 0.0 || (it >= settings.min_iters && small)) {
            diag.converged = true;
            break;
        }
    }
    if !diag.converged {
        return Err(LabError::Diverged { iterations: diag.iterations, ratios: diag.ratios });
    }
    log::debug!("picard converged after {} iterations", diag.iterations);
    Ok((prev.expect("at least one iteration"), diag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::finite::problem::{CoefficientFn, Horizon, StructuralConstants, TerminalFn};
    use crate::forward::{euler_maruyama, DiffusionConfig};
    use crate::noise::ForwardDriver;
    use crate::weighted_space::sample_reference_cloud;
    use std::sync::Arc;

    fn scalar_problem(f: CoefficientFn, g: CoefficientFn, h: TerminalFn, mu: f64, cj: f64, alpha: f64) -> BdsdeProblem {
        BdsdeProblem::new(
            "t",
            DiffusionConfig::ou(1, 1.0, 1.0),
            NoiseModel::new(vec![1.0], 1).unwrap(),
            h,
            f,
            vec![g],
            StructuralConstants {
                mu,
                c: 0.0,
                c_j: vec![cj],
                alpha_j: vec![alpha],
                m_j: vec![0.0],
                m: 0.0,
                m0: 2.0,
                lipschitz: 1.0,
            },
            Horizon::Finite { t: 1.0 },
        )
        .unwrap()
    }

    fn setup(m: usize, dt: f64, steps: usize) -> (WeightedSpace, ParticleEnsemble) {
        let s = WeightedSpace::new(1, 4.0, 2.5).unwrap();
        let c = sample_reference_cloud(m, &s, 1).unwrap();
        let cfg = DiffusionConfig::ou(1, 1.0, 1.0);
        let e = euler_maruyama(0.0, &c, &cfg, &ForwardDriver::new(2, 0, 1), dt, steps).unwrap();
        (s, e)
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let (s, e) = setup(200, 0.05, 20);
        let z: CoefficientFn = Arc::new(|_, _, _, _| 0.0);
        let h: TerminalFn = Arc::new(|_| 0.0);
        let p = scalar_problem(z.clone(), z, h, 0.0, 0.0, 0.0);
        let noise = ModeIncrements::zeros(1, 20);
        let (sol, diag) = picard_solve(&p, &e, &noise, &s, &PicardSettings::default()).unwrap();
        assert!(sol.y.iter().flatten().all(|v| *v == 0.0));
        assert!(sol.z.iter().flatten().all(|v| *v == 0.0));
        assert_eq!(diag.iterations, 2);
    }

    #[test]
    fn constant_generator_telescopes() {
        let (_, e) = setup(200, 0.05, 20);
        let c = 0.7;
        let f: CoefficientFn = Arc::new(move |_, _, _, _| c);
        let z: CoefficientFn = Arc::new(|_, _, _, _| 0.0);
        let h: TerminalFn = Arc::new(|_| 0.0);
        let p = scalar_problem(f, z, h, 0.0, 0.0, 0.0);
        let noise = ModeIncrements::zeros(1, 20);
        let frozen = FrozenG::evaluate(&p, &e, None);
        let sol = backward_lsmc_recursion(&p, &e, &noise, &frozen, Basis::default()).unwrap();
        for k in 0..=20 {
            let want = c * (1.0 - e.grid().time(k));
            assert!(sol.y[k].iter().all(|v| (v - want).abs() < 1e-10), "node {k}");
            assert!(sol.z[k].iter().all(|v| v.abs() < 1e-10));
        }
    }

    #[test]
    fn terminal_row_is_h_exactly() {
        let (_, e) = setup(100, 0.1, 10);
        let f: CoefficientFn = Arc::new(|_, _, y, _| -y);
        let z: CoefficientFn = Arc::new(|_, _, _, _| 0.0);
        let h: TerminalFn = Arc::new(|x| x[0].sin());
        let p = scalar_problem(f, z, h, -1.0, 0.0, 0.0);
        let frozen = FrozenG::evaluate(&p, &e, None);
        let sol = backward_lsmc_recursion(&p, &e, &ModeIncrements::zeros(1, 10), &frozen, Basis::default()).unwrap();
        for i in 0..100 {
            assert_eq!(sol.y[10][i], e.position(10, i)[0].sin());
        }
        assert_eq!(sol.z[10], sol.z[9]);
    }

    #[test]
    fn solution_independent_noise_is_a_one_step_fixed_point() {
        let (s, e) = setup(300, 0.05, 20);
        let f: CoefficientFn = Arc::new(|_, _, y, _| -y);
        let g: CoefficientFn = Arc::new(|_, x, _, _| 0.3 * x[0].cos());
        let h: TerminalFn = Arc::new(|x| x[0].tanh());
        let p = scalar_problem(f, g, h, -1.0, 0.0, 0.0);
        let noise = ModeIncrements { beta: vec![(0..20).map(|k| 0.2 * ((k as f64) * 1.7).sin()).collect()] };
        let (_, diag) = picard_solve(&p, &e, &noise, &s, &PicardSettings::default()).unwrap();
        assert_eq!(diag.iterations, 2);
        assert_eq!(diag.differences[1], 0.0);
    }

    #[test]
    fn zero_extension_pads_with_zeros() {
        let (_, e) = setup(50, 0.1, 10);
        let f: CoefficientFn = Arc::new(|_, _, _, _| 1.0);
        let z: CoefficientFn = Arc::new(|_, _, _, _| 0.0);
        let h: TerminalFn = Arc::new(|_| 0.0);
        let p = scalar_problem(f, z, h, 0.0, 0.0, 0.0);
        let frozen = FrozenG::evaluate(&p, &e, None);
        let sol = backward_lsmc_recursion(&p, &e, &ModeIncrements::zeros(1, 10), &frozen, Basis::default()).unwrap();
        let ext = sol.zero_extended(25);
        assert_eq!(ext.nodes(), 26);
        assert_eq!(ext.y[0], sol.y[0]);
        for k in 11..=25 {
            assert!(ext.y[k].iter().all(|v| *v == 0.0));
            assert_eq!(ext.u_interpolant(k, &[0.3]), 0.0);
        }
    }
}

//! Forward diffusion `dX = b(X)ds + σ(X)dW` over a particle ensemble.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::noise::rng::{StreamKey, StreamKind};
use crate::noise::{grid_index, ForwardDriver};
use crate::weighted_space::{euclid, ReferenceCloud, WeightedSpace};

/// `x ↦ b(x)`, written into `out` (length d).
pub type VectorField = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
/// `x ↦ σ(x)`, row-major `d×d`, written into `out`.
pub type MatrixField = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Central finite-difference step `10^{-4}(1+|x|)`.
pub fn fd_step(x: &[f64]) -> f64 {
    1e-4 * (1.0 + euclid(x))
}

/// Finite-difference gradient of a scalar function.
pub fn fd_gradient<F: Fn(&[f64]) -> f64>(f: F, x: &[f64]) -> Vec<f64> {
    let h = fd_step(x);
    let mut y = x.to_vec();
    (0..x.len())
        .map(|i| {
            y[i] = x[i] + h;
            let up = f(&y);
            y[i] = x[i] - h;
            let dn = f(&y);
            y[i] = x[i];
            (up - dn) / (2.0 * h)
        })
        .collect()
}

#[derive(Clone)]
pub struct DiffusionConfig {
    dim: usize,
    drift: VectorField,
    diffusion: MatrixField,
    lipschitz: f64,
    label: String,
}

impl fmt::Debug for DiffusionConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiffusionConfig")
            .field("dim", &self.dim)
            .field("lipschitz", &self.lipschitz)
            .field("label", &self.label)
            .finish()
    }
}

/// Outcome of the statistical Lipschitz spot check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzProbe {
    pub pairs: usize,
    pub violations: usize,
    pub max_drift_ratio: f64,
    pub max_diffusion_ratio: f64,
}

impl DiffusionConfig {
    pub fn new(dim: usize, drift: VectorField, diffusion: MatrixField, lipschitz: f64, label: &str) -> Result<Self> {
        if dim == 0 {
            return Err(LabError::Config("diffusion dimension must be positive".into()));
        }
        if !(lipschitz >= 0.0 && lipschitz.is_finite()) {
            return Err(LabError::Config(format!("Lipschitz constant {lipschitz} must be finite and nonnegative")));
        }
        Ok(Self { dim, drift, diffusion, lipschitz, label: label.to_string() })
    }

    pub fn zero(dim: usize) -> Self {
        Self::affine(dim, 0.0, vec![0.0; dim], 0.0, "zero")
    }

    /// `b(x) = -θx + c`, `σ = s·I`.
    pub fn affine(dim: usize, theta: f64, c: Vec<f64>, s: f64, label: &str) -> Self {
        let drift: VectorField = Arc::new(move |x, out| {
            for i in 0..out.len() {
                out[i] = -theta * x[i] + c[i];
            }
        });
        let diffusion: MatrixField = Arc::new(move |_, out| {
            let d = (out.len() as f64).sqrt() as usize;
            out.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..d {
                out[i * d + i] = s;
            }
        });
        Self { dim, drift, diffusion, lipschitz: theta.abs(), label: label.to_string() }
    }

    pub fn constant_drift(dim: usize, c: f64) -> Self {
        Self::affine(dim, 0.0, vec![c; dim], 0.0, "constant_drift")
    }

    pub fn ou(dim: usize, theta: f64, s: f64) -> Self {
        Self::affine(dim, theta, vec![0.0; dim], s, "ou")
    }

    /// `b = 0`, `σ = I`: generator `½Δ`.
    pub fn heat(dim: usize) -> Self {
        Self::affine(dim, 0.0, vec![0.0; dim], 1.0, "heat")
    }

    /// Scalar `dX = aX ds + sX dW`.
    pub fn linear_sigma(a: f64, s: f64) -> Self {
        let drift: VectorField = Arc::new(move |x, out| out[0] = a * x[0]);
        let diffusion: MatrixField = Arc::new(move |x, out| out[0] = s * x[0]);
        Self { dim: 1, drift, diffusion, lipschitz: a.abs().max(s.abs()), label: "linear_sigma".into() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn drift(&self, x: &[f64], out: &mut [f64]) {
        (self.drift)(x, out)
    }

    pub fn sigma(&self, x: &[f64], out: &mut [f64]) {
        (self.diffusion)(x, out)
    }

    /// `a(x) = σσ*(x)`, row-major.
    pub fn a_matrix(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut s = vec![0.0; d * d];
        self.sigma(x, &mut s);
        let mut a = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                a[i * d + j] = (0..d).map(|k| s[i * d + k] * s[j * d + k]).sum();
            }
        }
        a
    }

    /// `Ã_j(x) = ½ Σ_i ∂a_ij/∂x_i` by central differences.
    pub fn a_tilde(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let h = fd_step(x);
        let mut out = vec![0.0; d];
        let mut y = x.to_vec();
        for i in 0..d {
            y[i] = x[i] + h;
            let up = self.a_matrix(&y);
            y[i] = x[i] - h;
            let dn = self.a_matrix(&y);
            y[i] = x[i];
            for (j, o) in out.iter_mut().enumerate() {
                *o += 0.5 * (up[i * d + j] - dn[i * d + j]) / (2.0 * h);
            }
        }
        out
    }

    /// Checks `|b(x)−b(y)| ≤ L|x−y|` and the Frobenius analogue for `σ` on
    /// random pairs from `[-radius, radius]^d`.
    pub fn lipschitz_probe(&self, pairs: usize, radius: f64, seed: u64) -> LipschitzProbe {
        let d = self.dim;
        let mut s = StreamKey::new(seed, StreamKind::Probe, 17, 0).at(0);
        let (mut bx, mut by) = (vec![0.0; d], vec![0.0; d]);
        let (mut sx, mut sy) = (vec![0.0; d * d], vec![0.0; d * d]);
        let mut violations = 0;
        let (mut rb, mut rs) = (0.0f64, 0.0f64);
        for _ in 0..pairs {
            let x: Vec<f64> = (0..d).map(|_| radius * (2.0 * s.next_uniform() - 1.0)).collect();
            let y: Vec<f64> = (0..d).map(|_| radius * (2.0 * s.next_uniform() - 1.0)).collect();
            let dist = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            if dist == 0.0 {
                continue;
            }
            self.drift(&x, &mut bx);
            self.drift(&y, &mut by);
            self.sigma(&x, &mut sx);
            self.sigma(&y, &mut sy);
            let db = bx.iter().zip(&by).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() / dist;
            let ds = sx.iter().zip(&sy).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() / dist;
            rb = rb.max(db);
            rs = rs.max(ds);
            let bound = self.lipschitz * (1.0 + 1e-9) + 1e-12;
            if db > bound || ds > bound {
                violations += 1;
            }
        }
        LipschitzProbe { pairs, violations, max_drift_ratio: rb, max_diffusion_ratio: rs }
    }
}

/// Uniform grid `t_0 < t_0 + dt < … < t_0 + steps·dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub dt: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, dt: f64, steps: usize) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(LabError::Config(format!("time step {dt} must be positive")));
        }
        if steps == 0 {
            return Err(LabError::Config("grid needs at least one step".into()));
        }
        grid_index(t0, dt)?;
        Ok(Self { t0, dt, steps })
    }

    /// Grid on `[t0, horizon]`.
    pub fn spanning(t0: f64, horizon: f64, dt: f64) -> Result<Self> {
        let n = grid_index(horizon - t0, dt)?;
        if n <= 0 {
            return Err(LabError::Config(format!("horizon {horizon} must exceed start {t0}")));
        }
        Self::new(t0, dt, n as usize)
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.time(self.steps)
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.time(k)).collect()
    }

    /// Global node index of the start time on the `dt` lattice.
    pub fn start_node(&self) -> i64 {
        (self.t0 / self.dt).round() as i64
    }

    pub fn node_of(&self, t: f64) -> Result<usize> {
        let k = grid_index(t - self.t0, self.dt)?;
        if k < 0 || k as usize > self.steps {
            return Err(LabError::Range(format!("time {t} outside grid [{}, {}]", self.t0, self.horizon())));
        }
        Ok(k as usize)
    }
}

/// Particle paths `X_i` on a grid together with the `ΔW` that drove them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleEnsemble {
    grid: TimeGrid,
    dim: usize,
    particles: usize,
    /// `[node][particle][component]`
    paths: Vec<f64>,
    /// `[interval][particle][component]`
    increments: Vec<f64>,
}

impl ParticleEnsemble {
    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn particles(&self) -> usize {
        self.particles
    }

    pub fn nodes(&self) -> usize {
        self.grid.steps + 1
    }

    pub fn position(&self, k: usize, i: usize) -> &[f64] {
        let d = self.dim;
        let o = (k * self.particles + i) * d;
        &self.paths[o..o + d]
    }

    /// Positions of all particles at node `k`, particle-major.
    pub fn node_positions(&self, k: usize) -> &[f64] {
        let w = self.particles * self.dim;
        &self.paths[k * w..(k + 1) * w]
    }

    pub fn increment(&self, k: usize, i: usize) -> &[f64] {
        let d = self.dim;
        let o = (k * self.particles + i) * d;
        &self.increments[o..o + d]
    }

    pub fn node_increments(&self, k: usize) -> &[f64] {
        let w = self.particles * self.dim;
        &self.increments[k * w..(k + 1) * w]
    }

    pub fn start_point(&self, i: usize) -> &[f64] {
        self.position(0, i)
    }

    /// `X_s^{t,x}` at a grid time; for `s < t` the start point is returned.
    pub fn state_at(&self, s: f64, i: usize) -> Result<&[f64]> {
        if s < self.grid.t0 {
            return Ok(self.start_point(i));
        }
        Ok(self.position(self.grid.node_of(s)?, i))
    }

    /// The same paths restricted to the first `steps` intervals.
    pub fn truncated(&self, steps: usize) -> Result<Self> {
        if steps == 0 || steps > self.grid.steps {
            return Err(LabError::Range(format!("cannot truncate {} steps to {steps}", self.grid.steps)));
        }
        let w = self.particles * self.dim;
        Ok(Self {
            grid: TimeGrid { steps, ..self.grid },
            dim: self.dim,
            particles: self.particles,
            paths: self.paths[..(steps + 1) * w].to_vec(),
            increments: self.increments[..steps * w].to_vec(),
        })
    }

    /// Euler–Maruyama from explicit start points and increments
    /// (`[interval][particle][component]`).
    pub fn from_increments(grid: TimeGrid, dim: usize, starts: &[f64], config: &DiffusionConfig, increments: Vec<f64>) -> Result<Self> {
        if dim != config.dim() || starts.is_empty() || !starts.len().is_multiple_of(dim) {
            return Err(LabError::Argument("start points do not match the diffusion dimension".into()));
        }
        let m = starts.len() / dim;
        if increments.len() != grid.steps * m * dim {
            return Err(LabError::Argument("increment array does not match grid and particle count".into()));
        }
        let per_particle: Vec<Result<Vec<f64>>> = (0..m)
            .into_par_iter()
            .map(|i| {
                let mut path = Vec::with_capacity((grid.steps + 1) * dim);
                path.extend_from_slice(&starts[i * dim..(i + 1) * dim]);
                let mut b = vec![0.0; dim];
                let mut s = vec![0.0; dim * dim];
                for k in 0..grid.steps {
                    let x = &path[k * dim..(k + 1) * dim];
                    config.drift(x, &mut b);
                    config.sigma(x, &mut s);
                    if b.iter().chain(&s).any(|v| !v.is_finite()) {
                        return Err(LabError::Numerical {
                            particle: i,
                            message: format!("non-finite coefficient at node {k}"),
                        });
                    }
                    let dw = &increments[(k * m + i) * dim..(k * m + i + 1) * dim];
                    let next: Vec<f64> = (0..dim)
                        .map(|r| x[r] + b[r] * grid.dt + (0..dim).map(|c| s[r * dim + c] * dw[c]).sum::<f64>())
                        .collect();
                    path.extend_from_slice(&next);
                }
                Ok(path)
            })
            .collect();
        let mut paths = vec![0.0; (grid.steps + 1) * m * dim];
        for (i, p) in per_particle.into_iter().enumerate() {
            let p = p?;
            for k in 0..=grid.steps {
                paths[(k * m + i) * dim..(k * m + i + 1) * dim].copy_from_slice(&p[k * dim..(k + 1) * dim]);
            }
        }
        Ok(Self { grid, dim, particles: m, paths, increments })
    }
}

/// Increments of `driver` on the grid's intervals, laid out for
/// [`ParticleEnsemble::from_increments`].
pub fn driver_increments(driver: &ForwardDriver, grid: TimeGrid, particles: usize) -> Vec<f64> {
    let d = driver.dim();
    let n = grid.steps;
    let first = grid.start_node();
    let cols: Vec<Vec<f64>> = (0..particles * d)
        .into_par_iter()
        .map(|c| {
            let mut v = vec![0.0; n];
            driver.fill_increments(c / d, c % d, first, grid.dt, &mut v);
            v
        })
        .collect();
    let mut out = vec![0.0; n * particles * d];
    for (c, col) in cols.iter().enumerate() {
        for k in 0..n {
            out[k * particles * d + c] = col[k];
        }
    }
    out
}

/// `X_{k+1} = X_k + b(X_k)Δt + σ(X_k)ΔW_k` from the cloud points at time `t`.
pub fn euler_maruyama(t: f64, cloud: &ReferenceCloud, config: &DiffusionConfig, driver: &ForwardDriver, dt: f64, steps: usize) -> Result<ParticleEnsemble> {
    let grid = TimeGrid::new(t, dt, steps)?;
    if driver.dim() != config.dim() || cloud.dim() != config.dim() {
        return Err(LabError::Argument("driver, cloud and diffusion dimensions differ".into()));
    }
    let inc = driver_increments(driver, grid, cloud.len());
    ParticleEnsemble::from_increments(grid, config.dim(), cloud.points(), config, inc)
}

/// Restarts Euler at node `r` from `X_r` with the stored increments and
/// returns the largest deviation from the original path on `[r, T]`.
pub fn flow_property_check(ensemble: &ParticleEnsemble, config: &DiffusionConfig, r: usize) -> Result<f64> {
    let g = ensemble.grid();
    if r >= g.steps {
        return Err(LabError::Range(format!("restart node {r} must precede the last node {}", g.steps)));
    }
    let sub = TimeGrid::new(g.time(r), g.dt, g.steps - r)?;
    let w = ensemble.particles() * ensemble.dim();
    let inc = ensemble.increments[r * w..].to_vec();
    let restarted = ParticleEnsemble::from_increments(sub, ensemble.dim(), ensemble.node_positions(r), config, inc)?;
    let mut dev = 0.0f64;
    for k in 0..=sub.steps {
        for (a, b) in restarted.node_positions(k).iter().zip(ensemble.node_positions(r + k)) {
            dev = dev.max((a - b).abs());
        }
    }
    Ok(dev)
}

/// Largest deviation between `X^{t,x}` driven by `θ̂_r W` and `X^{t+r,x}`
/// driven by `W`, node by node.
pub fn shift_equivariance_check(cloud: &ReferenceCloud, config: &DiffusionConfig, driver: &ForwardDriver, t: f64, r_steps: i64, dt: f64, steps: usize) -> Result<f64> {
    let shifted = euler_maruyama(t, cloud, config, &driver.shift(r_steps), dt, steps)?;
    let later = euler_maruyama(t + r_steps as f64 * dt, cloud, config, driver, dt, steps)?;
    Ok(shifted
        .paths
        .iter()
        .zip(&later.paths)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

/// Monte Carlo estimate of `E∫|φ(X_s^{t,x})|ρ^{-1}dx` against `∫|φ|ρ^{-1}dx`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceEstimate {
    pub s: f64,
    pub pushforward: f64,
    pub identity: f64,
    pub ratio: f64,
    pub ratio_se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn equivalence_norm_estimate<F: Fn(&[f64]) -> f64 + Sync>(
    phi: F,
    t: f64,
    s: f64,
    cloud: &ReferenceCloud,
    space: &WeightedSpace,
    config: &DiffusionConfig,
    dt: f64,
    n_paths: usize,
    seed: u64,
) -> Result<EquivalenceEstimate> {
    if n_paths == 0 {
        return Err(LabError::Argument("equivalence estimate needs at least one path".into()));
    }
    let m = cloud.len();
    let d = cloud.dim();
    let steps = grid_index(s - t, dt)?;
    if steps < 0 {
        return Err(LabError::Argument(format!("evaluation time {s} precedes start {t}")));
    }
    let mut push = vec![0.0; m];
    if steps == 0 {
        for (i, p) in push.iter_mut().enumerate() {
            *p = phi(cloud.point(i)).abs();
        }
    } else {
        for p in 0..n_paths {
            let drv = ForwardDriver::new(seed, p as u64, d);
            let ens = euler_maruyama(t, cloud, config, &drv, dt, steps as usize)?;
            for (i, acc) in push.iter_mut().enumerate() {
                *acc += phi(ens.position(steps as usize, i)).abs() / n_paths as f64;
            }
        }
    }
    let ident: Vec<f64> = (0..m).map(|i| phi(cloud.point(i)).abs()).collect();
    let z = space.normalizer();
    let w = cloud.weights();
    let ma: f64 = push.iter().zip(w).map(|(a, w)| a * w).sum();
    let mb: f64 = ident.iter().zip(w).map(|(b, w)| b * w).sum();
    let ratio = ma / mb;
    // delta method for a ratio of means over i.i.d. particles
    let resid_var = push
        .iter()
        .zip(&ident)
        .map(|(a, b)| (a - ratio * b).powi(2))
        .sum::<f64>()
        / (m.max(2) - 1) as f64;
    let ratio_se = (resid_var / m as f64).sqrt() / mb;
    Ok(EquivalenceEstimate {
        s,
        pushforward: z * ma,
        identity: z * mb,
        ratio,
        ratio_se,
        ci_low: ratio - 1.96 * ratio_se,
        ci_high: ratio + 1.96 * ratio_se,
    })
}

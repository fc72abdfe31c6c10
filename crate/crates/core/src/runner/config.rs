//! Experiment configuration (TOML). Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::bank::InlineProblem;
use crate::error::{LabError, Result};
use crate::finite::Basis;
use crate::noise::grid_index;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    Finite,
    Infinite,
    Stationarity,
    Full,
}

/// A bank id or an inline coefficient specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProblemRef {
    Bank(String),
    Inline(Box<InlineProblem>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpaceConfig {
    pub dim: usize,
    pub q: f64,
    pub p: f64,
}

impl Default for SpaceConfig {
    fn default() -> Self {
        Self { dim: 1, q: 4.0, p: 2.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// Replaces the problem's eigenvalues `λ_j` (one per noise coefficient).
    pub eigenvalues: Option<Vec<f64>>,
}

/// Times are in abstract time units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub dt: f64,
    /// Finite horizon `T`.
    pub horizon: f64,
    /// Start times of the finite-horizon ensembles.
    pub start_times: Vec<f64>,
    /// Largest rung of the horizon ladder.
    pub n_max: usize,
    /// Reversal anchor `T′`.
    pub tprime: f64,
    /// Second anchor for the `T′`-independence check.
    pub tprime_alt: Option<f64>,
    /// Sampled times of the stationary solution.
    pub times: Vec<f64>,
    /// Shift offset `r` of the stationarity check.
    pub shift: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            dt: 0.02,
            horizon: 1.0,
            start_times: vec![0.0],
            n_max: 12,
            tprime: 5.0,
            tprime_alt: None,
            times: vec![0.0, 1.0, 2.0],
            shift: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub basis: Basis,
    pub max_iters: usize,
    pub min_iters: usize,
    pub tol: f64,
    pub cauchy_tol: f64,
    /// Overrides the default discount `K` of the infinite-horizon norms.
    pub discount: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { basis: Basis::default(), max_iters: 40, min_iters: 2, tol: 1e-6, cauchy_tol: 1e-3, discount: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McConfig {
    pub particles: usize,
    /// Noise replicas of the stationarity pipeline.
    pub replicas: usize,
    pub seed: u64,
    pub workers: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        Self { particles: 1000, replicas: 100, seed: 1, workers: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub formats: Vec<OutputFormat>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), formats: vec![OutputFormat::Json, OutputFormat::Csv] }
    }
}

/// Switches and tolerances of the assertions evaluated by the pipelines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChecksConfig {
    pub enabled: bool,
    /// Run the two-sample shift test (doubles the replica count).
    pub shift_test: bool,
    pub ks_alpha: f64,
    /// Relative band on the stationary variance.
    pub variance_band: f64,
    /// Standard errors allowed on the stationary mean.
    pub mean_sigmas: f64,
    /// Relative bound on the `T′`-independence difference.
    pub tprime_tol: f64,
    /// Relative bound on the forward-evolution deviation.
    pub evolution_tol: f64,
    /// Relative bound on `Z` versus `σ*∇u`.
    pub gradient_tol: f64,
    /// Relative `L²_ρ` bound of a field against its analytic oracle.
    pub oracle_tol: f64,
}

impl Default for ChecksConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            shift_test: true,
            ks_alpha: 0.05,
            variance_band: 0.1,
            mean_sigmas: 3.0,
            tprime_tol: 0.05,
            evolution_tol: 0.1,
            gradient_tol: 0.05,
            oracle_tol: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub pipeline: Pipeline,
    pub problem: ProblemRef,
    #[serde(default)]
    pub space: SpaceConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub mc: McConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub checks: ChecksConfig,
}

fn on_grid(name: &str, t: f64, dt: f64) -> Result<i64> {
    grid_index(t, dt).map_err(|_| LabError::Config(format!("{name} = {t} is not a multiple of dt = {dt}")))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| LabError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| LabError::Config(e.to_string()))
    }

    /// A minimal config for a bank problem with every other section defaulted.
    pub fn for_bank(id: &str, pipeline: Pipeline) -> Self {
        Self {
            pipeline,
            problem: ProblemRef::Bank(id.into()),
            space: SpaceConfig::default(),
            noise: NoiseConfig::default(),
            grid: GridConfig::default(),
            solver: SolverConfig::default(),
            mc: McConfig::default(),
            output: OutputConfig::default(),
            checks: ChecksConfig::default(),
        }
    }

    /// Range checks that do not need the problem.
    pub fn check(&self) -> Result<()> {
        let g = &self.grid;
        let bad = |m: String| Err(LabError::Config(m));
        if !(g.dt > 0.0 && g.dt <= 1.0) {
            return bad(format!("dt = {} must lie in (0, 1]", g.dt));
        }
        on_grid("1", 1.0, g.dt)?;
        let n_t = on_grid("horizon", g.horizon, g.dt)?;
        if n_t <= 0 {
            return bad("horizon must be positive".into());
        }
        for &s in &g.start_times {
            let k = on_grid("start time", s, g.dt)?;
            if k < 0 || k >= n_t {
                return bad(format!("start time {s} outside [0, horizon)"));
            }
        }
        if g.start_times.is_empty() {
            return bad("at least one start time is required".into());
        }
        if g.n_max < 2 {
            return bad("n_max must be at least 2".into());
        }
        on_grid("tprime", g.tprime, g.dt)?;
        if let Some(t2) = g.tprime_alt {
            on_grid("tprime_alt", t2, g.dt)?;
        }
        let r = on_grid("shift", g.shift, g.dt)?;
        if r < 0 {
            return bad("shift must be nonnegative".into());
        }
        for &t in &g.times {
            on_grid("sampled time", t, g.dt)?;
            if t < 0.0 || t + g.shift > g.tprime {
                return bad(format!("sampled time {t} (plus shift {}) outside [0, tprime]", g.shift));
            }
        }
        if g.times.is_empty() {
            return bad("at least one sampled time is required".into());
        }
        let s = &self.space;
        if !(s.dim == 1 || s.dim == 2) {
            return bad(format!("space dimension {} not in {{1, 2}}", s.dim));
        }
        if self.mc.particles < 8 {
            return bad("at least 8 particles are required".into());
        }
        if self.mc.replicas < 2 {
            return bad("at least 2 replicas are required".into());
        }
        if self.mc.workers == 0 {
            return bad("workers must be positive".into());
        }
        let sv = &self.solver;
        if sv.max_iters == 0 || !(sv.tol >= 0.0) || !(sv.cauchy_tol > 0.0) {
            return bad("solver iteration limits and tolerances must be positive".into());
        }
        if let Some(k) = sv.discount {
            if !(k > 0.0) {
                return bad(format!("discount K = {k} must be positive"));
            }
        }
        let c = &self.checks;
        if !(c.ks_alpha > 0.0 && c.ks_alpha < 1.0) {
            return bad("ks_alpha must lie in (0, 1)".into());
        }
        Ok(())
    }
}

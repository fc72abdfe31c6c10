//! Coefficients and structural constants of a BDSDE problem.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::forward::DiffusionConfig;
use crate::noise::NoiseModel;

/// Terminal map `x ↦ h(x)`.
pub type TerminalFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// `(r, x, y, z) ↦ value`, with `z ∈ R^d`; used for `f` and each `g_j`.
pub type CoefficientFn = Arc<dyn Fn(f64, &[f64], f64, &[f64]) -> f64 + Send + Sync>;

/// Constants entering the conditions and the contraction weight.
///
/// `mu` is the one-sided bound `(y₁−y₂)(f(y₁)−f(y₂)) ≤ mu·(y₁−y₂)²`; an
/// infinite-horizon problem needs `mu < 0`. `c`, `c_j`, `alpha_j`, `m`, `m_j`
/// bound squared increments, e.g. `|g_j(y₁,z₁)−g_j(y₂,z₂)|² ≤ C_j|Δy|² + α_j|Δz|²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralConstants {
    pub mu: f64,
    pub c: f64,
    pub c_j: Vec<f64>,
    pub alpha_j: Vec<f64>,
    pub m_j: Vec<f64>,
    pub m: f64,
    pub m0: f64,
    pub lipschitz: f64,
}

impl StructuralConstants {
    pub fn sum_c_j(&self) -> f64 {
        self.c_j.iter().sum()
    }

    pub fn sum_alpha(&self) -> f64 {
        self.alpha_j.iter().sum()
    }

    /// Discount `K` and `Y`-weight of the Picard contraction norm
    /// `∫e^{Kr}(w_Y‖δY‖² + ‖δZ‖²)dr`.
    pub fn picard_weight(&self) -> (f64, f64) {
        let (sa, sc) = (self.sum_alpha(), self.sum_c_j());
        if sa > 0.0 && sc > 0.0 {
            (2.0 * self.mu + 2.0 * self.c + sc / (2.0 * sa), sc / sa)
        } else {
            (2.0 * self.mu.abs() + 2.0 * self.c + 1.0, 1.0)
        }
    }

    /// Contraction factor for the squared norm.
    pub fn contraction_bound(&self) -> f64 {
        2.0 * self.sum_alpha()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Horizon {
    Finite { t: f64 },
    Infinite,
}

#[derive(Clone)]
pub struct BdsdeProblem {
    pub name: String,
    pub diffusion: DiffusionConfig,
    pub noise: NoiseModel,
    pub terminal: TerminalFn,
    pub generator: CoefficientFn,
    pub noise_coeffs: Vec<CoefficientFn>,
    pub constants: StructuralConstants,
    pub horizon: Horizon,
    /// `h` is measurable w.r.t. the backward noise after `T` (asserted, not checked).
    pub terminal_measurable: bool,
}

impl fmt::Debug for BdsdeProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BdsdeProblem")
            .field("name", &self.name)
            .field("diffusion", &self.diffusion)
            .field("noise", &self.noise)
            .field("constants", &self.constants)
            .field("horizon", &self.horizon)
            .finish()
    }
}

impl BdsdeProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        diffusion: DiffusionConfig,
        noise: NoiseModel,
        terminal: TerminalFn,
        generator: CoefficientFn,
        noise_coeffs: Vec<CoefficientFn>,
        constants: StructuralConstants,
        horizon: Horizon,
    ) -> Result<Self> {
        let n = noise.modes();
        if noise_coeffs.len() != n {
            return Err(LabError::Config(format!("{} noise coefficients for {n} modes", noise_coeffs.len())));
        }
        for (label, v) in [("C_j", &constants.c_j), ("alpha_j", &constants.alpha_j), ("M_j", &constants.m_j)] {
            if v.len() != n {
                return Err(LabError::Config(format!("{label} has {} entries for {n} modes", v.len())));
            }
            if v.iter().any(|c| !(*c >= 0.0 && c.is_finite())) {
                return Err(LabError::Config(format!("{label} entries must be finite and nonnegative")));
            }
        }
        for (label, c) in [("C", constants.c), ("M", constants.m), ("M_0", constants.m0), ("L", constants.lipschitz)] {
            if !(c >= 0.0 && c.is_finite()) {
                return Err(LabError::Config(format!("{label} = {c} must be finite and nonnegative")));
            }
        }
        if !constants.mu.is_finite() {
            return Err(LabError::Config("monotonicity constant must be finite".into()));
        }
        if noise.forward_dim() != diffusion.dim() {
            return Err(LabError::Config("forward driver and diffusion dimensions differ".into()));
        }
        if let Horizon::Finite { t } = horizon {
            if !(t > 0.0 && t.is_finite()) {
                return Err(LabError::Config(format!("horizon T = {t} must be positive")));
            }
        }
        Ok(Self {
            name: name.to_string(),
            diffusion,
            noise,
            terminal,
            generator,
            noise_coeffs,
            constants,
            horizon,
            terminal_measurable: true,
        })
    }

    pub fn dim(&self) -> usize {
        self.diffusion.dim()
    }

    pub fn modes(&self) -> usize {
        self.noise.modes()
    }

    pub fn f(&self, r: f64, x: &[f64], y: f64, z: &[f64]) -> f64 {
        (self.generator)(r, x, y, z)
    }

    pub fn g(&self, j: usize, r: f64, x: &[f64], y: f64, z: &[f64]) -> f64 {
        (self.noise_coeffs[j])(r, x, y, z)
    }

    pub fn h(&self, x: &[f64]) -> f64 {
        (self.terminal)(x)
    }

    /// Same coefficients with a different terminal map.
    pub fn with_terminal(&self, terminal: TerminalFn) -> Self {
        Self { terminal, ..self.clone() }
    }

    pub fn with_horizon(&self, horizon: Horizon) -> Self {
        Self { horizon, ..self.clone() }
    }
}

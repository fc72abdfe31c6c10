//! Built-in problems and the inline coefficient language they are written in.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::finite::{BdsdeProblem, CoefficientFn, Horizon, StructuralConstants, TerminalFn};
use crate::forward::DiffusionConfig;
use crate::noise::NoiseModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DiffusionSpec {
    /// `X ≡ x`.
    Zero,
    /// `b(x) = −θx + c`, `σ = s·I`.
    Affine { theta: f64, drift: f64, sigma: f64 },
    /// Scalar geometric `dX = aX ds + sX dW`.
    LinearSigma { a: f64, s: f64 },
}

/// `f(x, y, z) = −μy + c + κ·Σz_i` or `f = −a y³ + c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorSpec {
    Linear {
        mu: f64,
        c: f64,
        #[serde(default)]
        kappa: f64,
    },
    Cubic { a: f64, c: f64 },
}

/// `g_j(x, y, z) = β + γ_y y + γ_z Σz_i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseCoeffSpec {
    pub beta: f64,
    pub gamma_y: f64,
    pub gamma_z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TerminalSpec {
    Zero,
    Constant { value: f64 },
    /// `h(x) = a·x_1`.
    Linear { a: f64 },
    /// `h(x) = tanh(x_1)`.
    Tanh,
    /// `h(x) = exp(−|x|²/w²)`.
    Gaussian { width: f64 },
}

/// Declared constants replacing the derived ones (to model a misdeclared
/// problem, or a generator whose growth is not linear).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct DeclaredConstants {
    pub mu: Option<f64>,
    pub m0: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineProblem {
    #[serde(default = "inline_name")]
    pub name: String,
    pub diffusion: DiffusionSpec,
    pub generator: GeneratorSpec,
    pub noise_coeffs: Vec<NoiseCoeffSpec>,
    pub terminal: TerminalSpec,
    #[serde(default)]
    pub declared: DeclaredConstants,
}

fn inline_name() -> String {
    "inline".into()
}

impl InlineProblem {
    /// Builds the problem in dimension `dim` with noise eigenvalues `λ_j`
    /// (all 1 when `None`).
    pub fn build(&self, dim: usize, eigenvalues: Option<&[f64]>, horizon: Horizon) -> Result<BdsdeProblem> {
        let n = self.noise_coeffs.len();
        if n == 0 {
            return Err(LabError::Config("at least one noise coefficient is required".into()));
        }
        let lambdas = match eigenvalues {
            Some(l) if l.len() != n => {
                return Err(LabError::Config(format!("{} eigenvalues for {n} noise coefficients", l.len())))
            }
            Some(l) => l.to_vec(),
            None => vec![1.0; n],
        };
        let diffusion = match self.diffusion {
            DiffusionSpec::Zero => DiffusionConfig::zero(dim),
            DiffusionSpec::Affine { theta, drift, sigma } => {
                DiffusionConfig::affine(dim, theta, vec![drift; dim], sigma, "affine")
            }
            DiffusionSpec::LinearSigma { a, s } => {
                if dim != 1 {
                    return Err(LabError::Config("linear_sigma diffusion is scalar".into()));
                }
                DiffusionConfig::linear_sigma(a, s)
            }
        };
        let sd = (dim as f64).sqrt();
        let (generator, mu, c, m0): (CoefficientFn, f64, f64, f64) = match self.generator {
            GeneratorSpec::Linear { mu, c, kappa } => (
                Arc::new(move |_, _, y, z| -mu * y + c + kappa * z.iter().sum::<f64>()),
                -mu,
                kappa * kappa * dim as f64,
                mu.abs().max(c.abs()).max(kappa.abs() * sd),
            ),
            GeneratorSpec::Cubic { a, c } => {
                if a < 0.0 {
                    return Err(LabError::Config("cubic generator needs a ≥ 0".into()));
                }
                (Arc::new(move |_, _, y, _| -a * y * y * y + c), 0.0, 0.0, 1.0 + c.abs())
            }
        };
        let mut c_j = Vec::with_capacity(n);
        let mut alpha_j = Vec::with_capacity(n);
        let noise_coeffs: Vec<CoefficientFn> = self
            .noise_coeffs
            .iter()
            .map(|s| {
                let (b, gy, gz) = (s.beta, s.gamma_y, s.gamma_z);
                let both = gy != 0.0 && gz != 0.0;
                let k = if both { 2.0 } else { 1.0 };
                c_j.push(k * gy * gy);
                alpha_j.push(k * gz * gz * dim as f64);
                let f: CoefficientFn = Arc::new(move |_, _, y, z| b + gy * y + gz * z.iter().sum::<f64>());
                f
            })
            .collect();
        let terminal: TerminalFn = match self.terminal {
            TerminalSpec::Zero => Arc::new(|_| 0.0),
            TerminalSpec::Constant { value } => Arc::new(move |_| value),
            TerminalSpec::Linear { a } => Arc::new(move |x| a * x[0]),
            TerminalSpec::Tanh => Arc::new(|x| x[0].tanh()),
            TerminalSpec::Gaussian { width } => {
                if !(width > 0.0) {
                    return Err(LabError::Config("gaussian terminal width must be positive".into()));
                }
                Arc::new(move |x| (-x.iter().map(|v| v * v).sum::<f64>() / (width * width)).exp())
            }
        };
        let lipschitz = diffusion.lipschitz();
        let constants = StructuralConstants {
            mu: self.declared.mu.unwrap_or(mu),
            c,
            c_j,
            alpha_j,
            m_j: vec![0.0; n],
            m: 0.0,
            m0: self.declared.m0.unwrap_or(m0),
            lipschitz,
        };
        BdsdeProblem::new(
            &self.name,
            diffusion,
            NoiseModel::new(lambdas, dim)?,
            terminal,
            generator,
            noise_coeffs,
            constants,
            horizon,
        )
    }

    /// `true` when `b = 0` and `σ = 0`, so each point evolves on its own.
    pub fn is_pointwise(&self) -> bool {
        matches!(self.diffusion, DiffusionSpec::Zero)
            || matches!(self.diffusion, DiffusionSpec::Affine { theta, drift, sigma } if theta == 0.0 && drift == 0.0 && sigma == 0.0)
    }

    /// `true` when `b = 0` and `σ = I`.
    pub fn is_heat(&self) -> bool {
        matches!(self.diffusion, DiffusionSpec::Affine { theta, drift, sigma } if theta == 0.0 && drift == 0.0 && sigma == 1.0)
    }
}

/// Closed forms available for a bank problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Oracle {
    /// `Y ≡ 0`.
    Zero,
    /// `Y_s = c(T − s)`.
    ConstantGenerator { c: f64 },
    /// `Y_s = (c/μ)(1 − e^{−μ(T−s)})`, stationary value `c/μ`.
    MonotoneOde { mu: f64, c: f64 },
    /// Stationary law `N(c/μ, β²/(2μ))`.
    OuStationary { mu: f64, c: f64, beta: f64 },
    /// `u(t,x) = (1 + 2(T−t)/w²)^{−1/2} exp(−x²/(w² + 2(T−t)))`.
    HeatKernel { width: f64 },
    /// `u(t,x) = a x`, `Z ≡ a`.
    LinearGradient { a: f64 },
}

impl Oracle {
    /// Finite-horizon `u(t, x)` on `[0, T]`, when known in closed form.
    pub fn field(&self, t: f64, horizon: f64, x: &[f64]) -> Option<f64> {
        let tau = horizon - t;
        match *self {
            Oracle::Zero => Some(0.0),
            Oracle::ConstantGenerator { c } => Some(c * tau),
            Oracle::MonotoneOde { mu, c } => Some(c / mu * (1.0 - (-mu * tau).exp())),
            Oracle::HeatKernel { width } => {
                let w2 = width * width;
                let d = x.len() as f64;
                let r2: f64 = x.iter().map(|v| v * v).sum();
                Some((1.0 + 2.0 * tau / w2).powf(-d / 2.0) * (-r2 / (w2 + 2.0 * tau)).exp())
            }
            Oracle::LinearGradient { a } => Some(a * x[0]),
            Oracle::OuStationary { .. } => None,
        }
    }

    /// Mean and variance of the stationary solution, when known.
    pub fn stationary_law(&self) -> Option<(f64, f64)> {
        match *self {
            Oracle::Zero => Some((0.0, 0.0)),
            Oracle::MonotoneOde { mu, c } => Some((c / mu, 0.0)),
            Oracle::OuStationary { mu, c, beta } => Some((c / mu, beta * beta / (2.0 * mu))),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankEntry {
    pub id: String,
    pub description: String,
    pub oracle: Option<Oracle>,
    /// The infinite-horizon conditions hold.
    pub infinite: bool,
    pub spec: InlineProblem,
}

fn entry(id: &str, description: &str, oracle: Option<Oracle>, infinite: bool, spec: InlineProblem) -> BankEntry {
    BankEntry { id: id.into(), description: description.into(), oracle, infinite, spec: InlineProblem { name: id.into(), ..spec } }
}

fn spec(diffusion: DiffusionSpec, generator: GeneratorSpec, noise: NoiseCoeffSpec, terminal: TerminalSpec) -> InlineProblem {
    InlineProblem {
        name: String::new(),
        diffusion,
        generator,
        noise_coeffs: vec![noise],
        terminal,
        declared: DeclaredConstants::default(),
    }
}

pub fn bank() -> Vec<BankEntry> {
    let none = NoiseCoeffSpec::default();
    let gamma = 0.15f64.sqrt();
    vec![
        entry(
            "zero",
            "zero data h = 0, g = 0 with damping f = -y, X = x; oracle: Y = 0 and u = 0",
            Some(Oracle::Zero),
            true,
            spec(DiffusionSpec::Zero, GeneratorSpec::Linear { mu: 1.0, c: 0.0, kappa: 0.0 }, none, TerminalSpec::Zero),
        ),
        entry(
            "constant_drift_f",
            "f = 0.7, g = 0, h = 0, X with constant drift 1; oracle: Y_s = 0.7 (T - s)",
            Some(Oracle::ConstantGenerator { c: 0.7 }),
            false,
            spec(
                DiffusionSpec::Affine { theta: 0.0, drift: 1.0, sigma: 0.0 },
                GeneratorSpec::Linear { mu: 0.0, c: 0.7, kappa: 0.0 },
                none,
                TerminalSpec::Zero,
            ),
        ),
        entry(
            "monotone_ode",
            "f = -y + 1, g = 0, h = 0, X = x; oracle: Y_s = 1 - exp(-(T - s)), stationary value 1",
            Some(Oracle::MonotoneOde { mu: 1.0, c: 1.0 }),
            true,
            spec(DiffusionSpec::Zero, GeneratorSpec::Linear { mu: 1.0, c: 1.0, kappa: 0.0 }, none, TerminalSpec::Zero),
        ),
        entry(
            "ou_additive",
            "f = -y + 1, g = 0.5, h = 0, X = x; oracle: stationary law N(c/mu, beta^2/(2 mu)) = N(1, 0.125)",
            Some(Oracle::OuStationary { mu: 1.0, c: 1.0, beta: 0.5 }),
            true,
            spec(
                DiffusionSpec::Zero,
                GeneratorSpec::Linear { mu: 1.0, c: 1.0, kappa: 0.0 },
                NoiseCoeffSpec { beta: 0.5, ..none },
                TerminalSpec::Zero,
            ),
        ),
        entry(
            "heat_bump",
            "L = Laplacian/2 (b = 0, sigma = I), f = 0, g = 0, h = exp(-x^2); oracle: u(t,x) = (1 + 2(T-t))^(-1/2) exp(-x^2/(1 + 2(T-t)))",
            Some(Oracle::HeatKernel { width: 1.0 }),
            false,
            spec(
                DiffusionSpec::Affine { theta: 0.0, drift: 0.0, sigma: 1.0 },
                GeneratorSpec::Linear { mu: 0.0, c: 0.0, kappa: 0.0 },
                none,
                TerminalSpec::Gaussian { width: 1.0 },
            ),
        ),
        entry(
            "linear_g",
            "OU diffusion b = -x, sigma = 1, f = -y, g = sqrt(0.15)(y + z), h = tanh(x); sum alpha_j = 0.3, no closed form",
            None,
            false,
            spec(
                DiffusionSpec::Affine { theta: 1.0, drift: 0.0, sigma: 1.0 },
                GeneratorSpec::Linear { mu: 1.0, c: 0.0, kappa: 0.0 },
                NoiseCoeffSpec { beta: 0.0, gamma_y: gamma, gamma_z: gamma },
                TerminalSpec::Tanh,
            ),
        ),
        entry(
            "linear_terminal",
            "b = 0, sigma = I, f = 0, g = 0, h = 0.8 x; oracle: u(t,x) = 0.8 x and Z = 0.8",
            Some(Oracle::LinearGradient { a: 0.8 }),
            false,
            spec(
                DiffusionSpec::Affine { theta: 0.0, drift: 0.0, sigma: 1.0 },
                GeneratorSpec::Linear { mu: 0.0, c: 0.0, kappa: 0.0 },
                none,
                TerminalSpec::Linear { a: 0.8 },
            ),
        ),
    ]
}

pub fn lookup(id: &str) -> Result<BankEntry> {
    bank()
        .into_iter()
        .find(|e| e.id == id)
        .ok_or_else(|| LabError::Config(format!("unknown bank problem '{id}'")))
}

/// One line per bank problem with its oracle flag.
pub fn list_bank() -> Vec<String> {
    bank()
        .iter()
        .map(|e| {
            format!(
                "{:<18} oracle={:<3} infinite={:<3} {}",
                e.id,
                if e.oracle.is_some() { "yes" } else { "no" },
                if e.infinite { "yes" } else { "no" },
                e.description
            )
        })
        .collect()
}

//! Finite-horizon BDSDE with finitely many noise modes.
//!
//! `Y_s = h(X_T) + ∫_s^T f(r,X_r,Y_r,Z_r)dr − Σ_j ∫_s^T g_j(r,X_r,Y_r,Z_r)d†β̂_j(r) − ∫_s^T Z_r dW_r`
//! is solved by Picard iteration on `g`, each frozen-`g` equation by a
//! regression backward recursion over the particle ensemble.

pub mod conditions;
pub mod problem;
pub mod regression;
pub mod solver;
pub mod truncation;

pub use conditions::{validate_conditions_finite, validate_conditions_infinite, ConditionReport, ConditionStatus};
pub use problem::{BdsdeProblem, CoefficientFn, Horizon, StructuralConstants, TerminalFn};
pub use regression::{Basis, LeastSquares};
pub use solver::{
    backward_lsmc_recursion, picard_solve, BackwardSolution, ContractionDiagnostics, FrozenG, ModeIncrements,
    PicardSettings,
};
pub use truncation::{phi_np, phi_np_prime, psi_m, psi_m_prime};

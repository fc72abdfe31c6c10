//! Monte Carlo laboratory for backward doubly stochastic differential
//! equations (BDSDEs) with monotone drift, posed on weighted spaces
//! `L²_ρ(R^d)` with `ρ(x) = (1+|x|)^q`.
//!
//! The crate is organised bottom-up:
//!
//! * [`weighted_space`]: the weight, its normaliser and the Monte Carlo
//!   realisation of weighted spatial and discounted process norms.
//! * [`noise`]: counter-based Gaussian drivers, two-sided paths, time
//!   reversal, shifts and the backward Itô sum.
//! * [`forward`]: Euler–Maruyama particle ensembles for the forward
//!   diffusion and the equivalence-of-norms estimator.
//! * [`finite`]: finite-horizon BDSDE: condition validators, truncation
//!   functions, regression backward recursion and Picard iteration.
//! * [`infinite`]: infinite-horizon BDSDE via a horizon ladder.
//! * [`bridge`]: the SPDE side: field extraction, weak residuals and the
//!   gradient representation check.
//! * [`stationarity`]: stationary solutions built by time reversal and
//!   checks of their shift and anchor invariance.
//! * [`runner`]: configuration, the built-in problem bank and reports.

pub mod bridge;
pub mod error;
pub mod finite;
pub mod forward;
pub mod infinite;
pub mod noise;
pub mod quadrature;
pub mod runner;
pub mod stationarity;
pub mod stats;
pub mod weighted_space;

pub use error::{LabError, Result};

//! Config-driven experiment pipelines behind the `bdsde` binary.

pub mod bank;
pub mod config;
pub mod pipeline;
pub mod report;

pub use bank::{bank, list_bank, lookup, BankEntry, InlineProblem, Oracle};
pub use config::{ExperimentConfig, Pipeline, ProblemRef};
pub use pipeline::{run, run_and_write, validate, Outcome, EXIT_ASSERTION, EXIT_CONFIG, EXIT_DIVERGED, EXIT_PASS};
pub use report::{Assertion, Report, Tables};

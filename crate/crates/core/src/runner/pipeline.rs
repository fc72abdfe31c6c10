//! The finite, infinite, stationarity and full pipelines.

use std::path::Path;

use rayon::prelude::*;

use super::bank::{lookup, BankEntry, InlineProblem, Oracle};
use super::config::{ExperimentConfig, Pipeline, ProblemRef};
use super::report::{write_outputs, Assertion, FieldRow, Report, ResidualRow, Tables};
use crate::bridge::{default_test_family, gradient_representation_check, interpolated_snapshots, weak_residual};
use crate::error::{LabError, Result};
use crate::finite::{
    picard_solve, validate_conditions_finite, validate_conditions_infinite, BdsdeProblem, ConditionReport, Horizon,
    ModeIncrements, PicardSettings,
};
use crate::forward::{euler_maruyama, TimeGrid};
use crate::infinite::{default_discount, pth_moment_profile, replica_rms_differences, LadderSettings};
use crate::noise::{grid_index, sample_backward, ForwardDriver, PathGrid};
use crate::quadrature::gaussian_expectation;
use crate::stationarity::{
    build_stationary_solution, check_shift_stationarity, check_tprime_independence, fixed_point_evolution_check,
    ForwardStepper, NoiseReplica,
};
use crate::stats::{mean, std_error, variance};
use crate::weighted_space::{sample_reference_cloud, weighted_l2_norm, ReferenceCloud, WeightedSpace};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_ASSERTION: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

/// Exit status for an error raised by a pipeline.
pub fn exit_code_for(err: &LabError) -> i32 {
    match err {
        LabError::Diverged { .. }
        | LabError::LadderDiverged { .. }
        | LabError::MomentBlowUp(_)
        | LabError::Numerical { .. }
        | LabError::Domain(_) => EXIT_DIVERGED,
        _ => EXIT_CONFIG,
    }
}

/// Particle whose value represents `v_t` in the scalar statistics.
const PROBE: usize = 0;
const PATHWISE_REPLICAS: usize = 5;
const MOMENT_TOL: f64 = 0.25;
const EXACT_TOL: f64 = 1e-12;

pub struct Outcome {
    pub exit_code: i32,
    pub report: Report,
    pub tables: Tables,
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    force: bool,
    spec: InlineProblem,
    entry: Option<BankEntry>,
    space: WeightedSpace,
    cloud: ReferenceCloud,
    report: Report,
    tables: Tables,
}

fn resolve(problem: &ProblemRef) -> Result<(InlineProblem, Option<BankEntry>)> {
    match problem {
        ProblemRef::Bank(id) => {
            let e = lookup(id)?;
            Ok((e.spec.clone(), Some(e)))
        }
        ProblemRef::Inline(p) => Ok(((**p).clone(), None)),
    }
}

fn build_problem(cfg: &ExperimentConfig, spec: &InlineProblem, horizon: Horizon) -> Result<BdsdeProblem> {
    spec.build(cfg.space.dim, cfg.noise.eigenvalues.as_deref(), horizon)
}

fn picard_settings(cfg: &ExperimentConfig) -> PicardSettings {
    let s = &cfg.solver;
    PicardSettings { max_iters: s.max_iters, min_iters: s.min_iters, tol: s.tol, basis: s.basis, discount: None }
}

/// Discount of the infinite-horizon norms: the override or the default.
fn infinite_discount(cfg: &ExperimentConfig, problem: &BdsdeProblem) -> Result<f64> {
    match cfg.solver.discount {
        Some(k) => Ok(k),
        None => default_discount(problem, cfg.space.p),
    }
}

impl Ctx<'_> {
    fn oracle(&self) -> Option<Oracle> {
        self.entry.as_ref().and_then(|e| e.oracle)
    }

    fn checks(&self) -> bool {
        self.cfg.checks.enabled
    }

    fn assert(&mut self, a: Assertion) {
        if self.checks() {
            self.report.assertions.push(a);
        }
    }

    /// Stores the report and stops the run on failure unless forced.
    fn gate(&mut self, key: &str, rep: ConditionReport) -> Result<()> {
        if rep.passed() {
            self.report.conditions.insert(key.into(), rep);
            return Ok(());
        }
        let msg = format!("{key} conditions failed: {}", rep.summary());
        self.report.conditions.insert(key.into(), rep);
        if self.force {
            log::warn!("{msg} (continuing, --force)");
            Ok(())
        } else {
            Err(LabError::Conditions(msg))
        }
    }

    fn dt(&self) -> f64 {
        self.cfg.grid.dt
    }

    fn seed(&self) -> u64 {
        self.cfg.mc.seed
    }

    fn field_rows(&mut self, pipeline: &'static str, replica: u64, t: f64, u: &[f64]) {
        let rows = u.iter().enumerate().map(|(i, &v)| FieldRow {
            pipeline,
            replica,
            t,
            particle: i,
            x: self.cloud.point(i).to_vec(),
            u: v,
        });
        self.tables.fields.extend(rows.collect::<Vec<_>>());
    }

    fn ladder_settings(&self, discount: f64) -> LadderSettings {
        LadderSettings {
            n_max: self.cfg.grid.n_max,
            cauchy_tol: self.cfg.solver.cauchy_tol,
            discount: Some(discount),
            window: 1.0,
            run_all_rungs: false,
            picard: picard_settings(self.cfg),
        }
    }

    fn replica(&self, problem: &BdsdeProblem, grid: PathGrid, id: u64) -> Result<NoiseReplica> {
        Ok(NoiseReplica {
            path: sample_backward(&problem.noise, grid, self.seed(), id)?,
            driver: ForwardDriver::new(self.seed(), id, problem.dim()),
        })
    }

    fn finite(&mut self) -> Result<()> {
        let g = self.cfg.grid.clone();
        let problem = build_problem(self.cfg, &self.spec, Horizon::Finite { t: g.horizon })?;
        self.gate("finite", validate_conditions_finite(&problem, &self.space))?;
        let dt = self.dt();
        let unit = grid_index(1.0, dt)? as usize;
        let path = sample_backward(&problem.noise, PathGrid::symmetric(dt, g.horizon + 1.0)?, self.seed(), 0)?;
        let driver = ForwardDriver::new(self.seed(), 0, problem.dim());
        let picard = picard_settings(self.cfg);
        let mut max_residual = 0.0f64;
        for &s in &g.start_times {
            let steps = grid_index(g.horizon - s, dt)? as usize;
            let grid = TimeGrid::new(s, dt, steps)?;
            let ens = euler_maruyama(s, &self.cloud, &problem.diffusion, &driver, dt, steps)?;
            let noise = ModeIncrements::from_path(&path, &problem.noise, grid)?;
            let (sol, diag) = picard_solve(&problem, &ens, &noise, &self.space, &picard)?;
            let tag = format!("s={s}");
            self.tables.norm("finite", &format!("picard_difference[{tag}]"), &diag.differences);
            self.tables.norm("finite", &format!("picard_ratio[{tag}]"), &diag.ratios);
            self.report.diagnostic(format!("finite.contraction[{tag}]"), &diag);
            self.assert(Assertion::at_most(
                format!("finite.picard_converged[{tag}]"),
                if diag.converged { 0.0 } else { 1.0 },
                0.0,
            ));
            for k in (0..=steps).step_by(unit).chain(std::iter::once(steps)).collect::<std::collections::BTreeSet<_>>() {
                self.field_rows("finite", 0, grid.time(k), &sol.y[k]);
            }
            if let Some(oracle) = self.oracle() {
                let exact: Option<Vec<f64>> =
                    (0..self.cloud.len()).map(|i| oracle.field(s, g.horizon, self.cloud.point(i))).collect();
                if let Some(exact) = exact {
                    let diff: Vec<f64> = sol.y[0].iter().zip(&exact).map(|(a, b)| a - b).collect();
                    let err = weighted_l2_norm(&diff, &self.cloud, &self.space)?;
                    let norm = weighted_l2_norm(&exact, &self.cloud, &self.space)?;
                    let rel = if norm > 0.0 { err / norm } else { err };
                    self.assert(Assertion::at_most(format!("finite.oracle_error[{tag}]"), rel, self.cfg.checks.oracle_tol));
                }
            }
            let snaps = interpolated_snapshots(&sol, &self.cloud);
            for phi in default_test_family(problem.dim()) {
                let w = weak_residual(&snaps, &problem, &phi, &noise, &self.cloud, &self.space, None)?;
                max_residual = max_residual.max(w.residual);
                self.tables.residuals.push(ResidualRow {
                    phi_id: w.phi_id.clone(),
                    dt,
                    particles: self.cloud.len(),
                    residual: w.residual,
                    normalizer: w.normalizer,
                });
                self.report.diagnostic(format!("finite.weak_residual[{tag}][{}]", w.phi_id), &w);
            }
            if problem.diffusion.lipschitz() > 0.0 || !self.spec.is_pointwise() {
                let gc = gradient_representation_check(&sol, &ens, &problem.diffusion, &self.cloud, &self.space)?;
                self.report.diagnostic(format!("finite.gradient[{tag}]"), &gc);
                if matches!(self.oracle(), Some(Oracle::LinearGradient { .. })) {
                    self.assert(Assertion::at_most(
                        format!("finite.gradient_relative[{tag}]"),
                        gc.relative(),
                        self.cfg.checks.gradient_tol,
                    ));
                }
            }
        }
        if matches!(self.oracle(), Some(Oracle::Zero)) {
            self.assert(Assertion::at_most("finite.weak_residual_max", max_residual, EXACT_TOL));
        }
        Ok(())
    }

    fn infinite_problem(&mut self) -> Result<(BdsdeProblem, f64)> {
        let problem = build_problem(self.cfg, &self.spec, Horizon::Infinite)?;
        let k = match infinite_discount(self.cfg, &problem) {
            Ok(k) => k,
            Err(e) => {
                // no admissible K: report the conditions at K = 0
                let rep = validate_conditions_infinite(&problem, &self.space, 0.0);
                self.report.conditions.insert("infinite".into(), rep);
                if !self.force {
                    return Err(e);
                }
                log::warn!("{e} (continuing with K = 0, --force)");
                0.0
            }
        };
        self.report.diagnostic("infinite.discount", &k);
        self.gate("infinite", validate_conditions_infinite(&problem, &self.space, k))?;
        Ok((problem, k))
    }

    fn infinite(&mut self) -> Result<()> {
        let (problem, k) = self.infinite_problem()?;
        let settings = self.ladder_settings(k);
        let dt = self.dt();
        let unit = grid_index(1.0, dt)? as usize;
        let steps = self.cfg.grid.n_max * unit;
        let grid = TimeGrid::new(0.0, dt, steps)?;
        let pgrid = PathGrid::new(dt, 0, steps as i64)?;
        let p = self.cfg.space.p;
        let n = self.cfg.mc.replicas;
        let this = &*self;
        let results: Vec<_> = (0..n as u64)
            .into_par_iter()
            .map(|id| {
                let rep = this.replica(&problem, pgrid, id)?;
                let ens = euler_maruyama(0.0, &this.cloud, &problem.diffusion, &rep.driver, dt, steps)?;
                let noise = ModeIncrements::from_path(&rep.path, &problem.noise, grid)?;
                let (sol, diag) =
                    crate::infinite::solve_horizon_ladder(&problem, &ens, &noise, &this.cloud, &this.space, &settings)?;
                let profile = pth_moment_profile(&sol, p, k, &this.cloud, &this.space)?;
                Ok((sol.y[0].clone(), diag, profile))
            })
            .collect::<Result<_>>()?;
        let mut profile = vec![0.0; steps + 1];
        for (_, _, pr) in &results {
            profile.iter_mut().zip(pr).for_each(|(a, v)| *a += v / n as f64);
        }
        let moment = profile.iter().fold(0.0f64, |a, v| a.max(*v));
        if !moment.is_finite() {
            return Err(LabError::MomentBlowUp(format!("p-th moment supremum {moment}")));
        }
        let diags: Vec<_> = results.iter().map(|r| r.1.clone()).collect();
        let rms = replica_rms_differences(&diags);
        self.tables.norm("infinite", "rms_window_difference", &rms);
        self.tables.norm("infinite", "window_difference[replica=0]", &diags[0].window_differences);
        self.tables.norm("infinite", "pth_moment_profile", &profile);
        self.report.diagnostic("infinite.ladder[replica=0]", &diags[0]);
        self.report.diagnostic("infinite.rms_window_difference", &rms);
        self.report.diagnostic("infinite.pth_moment", &moment);
        self.field_rows("infinite", 0, 0.0, &results[0].0.clone());
        let unconverged = diags.iter().filter(|d| !d.converged).count();
        self.assert(Assertion::at_most("infinite.unconverged_ladders", unconverged as f64, 0.0));
        if let Some(oracle) = self.oracle() {
            if let Oracle::MonotoneOde { mu, c } = oracle {
                let target = c / mu;
                let err = results.iter().flat_map(|r| r.0.iter()).fold(0.0f64, |a, v| a.max((v - target).abs()));
                self.assert(Assertion::at_most("infinite.oracle_error", err / target.abs(), self.cfg.checks.oracle_tol));
            }
            if let Some((m, v)) = oracle.stationary_law() {
                let z = self.space.normalizer();
                let exact = if v > 0.0 {
                    z * gaussian_expectation(|y| y.abs().powf(p), m, v, 1e-10)
                } else {
                    z * m.abs().powf(p)
                };
                self.report.diagnostic("infinite.pth_moment_oracle", &exact);
                let rel = if exact > 0.0 { (moment - exact).abs() / exact } else { moment };
                let tol = if exact > 0.0 { MOMENT_TOL } else { EXACT_TOL };
                self.assert(Assertion::at_most("infinite.pth_moment_error", rel, tol));
            }
        }
        Ok(())
    }

    fn stationarity(&mut self) -> Result<()> {
        let (problem, k) = self.infinite_problem()?;
        let settings = self.ladder_settings(k);
        let g = self.cfg.grid.clone();
        let dt = self.dt();
        let span = g.tprime.max(g.tprime_alt.unwrap_or(0.0)) + g.n_max as f64 + g.shift + 2.0;
        let pgrid = PathGrid::symmetric(dt, span)?;
        let n = self.cfg.mc.replicas;
        let this = &*self;
        let runs: Vec<_> = (0..n as u64)
            .into_par_iter()
            .map(|id| {
                let rep = this.replica(&problem, pgrid, id)?;
                let run = build_stationary_solution(&problem, &rep, g.tprime, &g.times, &this.cloud, &this.space, &settings)?;
                Ok((rep, run))
            })
            .collect::<Result<_>>()?;
        let diags: Vec<_> = runs.iter().map(|(_, r)| r.ladders[0].clone()).collect();
        let rms = replica_rms_differences(&diags);
        self.tables.norm("stationarity", "rms_window_difference", &rms);
        for (i, f) in runs[0].1.fields.iter().enumerate() {
            self.field_rows("stationarity", 0, g.times[i], &f.u.clone());
        }
        let law = self.oracle().and_then(|o| o.stationary_law());
        let mut means = Vec::new();
        let mut vars = Vec::new();
        for (i, &t) in g.times.iter().enumerate() {
            let sample: Vec<f64> = runs.iter().map(|(_, r)| r.fields[i].u[PROBE]).collect();
            let (m, v, se) = (mean(&sample), variance(&sample), std_error(&sample));
            means.push(m);
            vars.push(v);
            self.report.diagnostic(format!("stationarity.sample[t={t}]"), &serde_json::json!({"mean": m, "variance": v, "std_error": se, "n": sample.len()}));
            if let Some((m0, v0)) = law {
                let c = &self.cfg.checks;
                let (mean_tol, var_tol) = (c.mean_sigmas * se, c.variance_band);
                self.assert(Assertion::at_most(format!("stationarity.mean_deviation[t={t}]"), (m - m0).abs(), mean_tol.max(EXACT_TOL)));
                if v0 > 0.0 {
                    self.assert(Assertion::at_most(format!("stationarity.variance_relative[t={t}]"), (v - v0).abs() / v0, var_tol));
                } else {
                    self.assert(Assertion::at_most(format!("stationarity.variance[t={t}]"), v, EXACT_TOL));
                }
            }
        }
        self.tables.norm("stationarity", "sample_mean", &means);
        self.tables.norm("stationarity", "sample_variance", &vars);
        let unconverged = runs.iter().flat_map(|(_, r)| &r.ladders).filter(|d| !d.converged).count();
        self.assert(Assertion::at_most("stationarity.unconverged_ladders", unconverged as f64, 0.0));

        let (rep0, run0) = &runs[0];
        if let Some(alt) = g.tprime_alt {
            let t = g.times[0];
            let rel = check_tprime_independence(&problem, rep0, t, g.tprime, alt, &self.cloud, &self.space, &settings)?;
            self.report.diagnostic("stationarity.tprime_difference", &rel);
            self.assert(Assertion::at_most("stationarity.tprime_difference", rel, self.cfg.checks.tprime_tol));
        }
        if self.cfg.checks.shift_test {
            let r_steps = grid_index(g.shift, dt)?;
            let set_a: Vec<NoiseReplica> = runs.iter().map(|(r, _)| r.clone()).collect();
            let set_b: Vec<NoiseReplica> =
                (n as u64..2 * n as u64).map(|id| self.replica(&problem, pgrid, id)).collect::<Result<_>>()?;
            let sr = check_shift_stationarity(
                &problem,
                &set_a,
                &set_b,
                g.tprime,
                g.times[0],
                r_steps,
                PATHWISE_REPLICAS.min(n),
                &[PROBE],
                &self.cloud,
                &self.space,
                &settings,
            )?;
            self.tables.norm("stationarity", "shift_pathwise", &sr.pathwise);
            self.report.diagnostic("stationarity.shift", &sr);
            self.assert(Assertion::at_most("stationarity.shift_pathwise_max", sr.max_pathwise, 0.0));
            self.assert(Assertion::at_least("stationarity.shift_ks_p_value", sr.ks.p_value, self.cfg.checks.ks_alpha));
        }
        let stepper = if self.spec.is_pointwise() {
            Some(ForwardStepper::Pointwise)
        } else if self.spec.is_heat() && problem.dim() == 1 {
            Some(ForwardStepper::SpectralHeat { half_width: 20.0, points: 512 })
        } else {
            None
        };
        if let (Some(stepper), true) = (stepper, g.times.len() >= 2) {
            let ev = fixed_point_evolution_check(run0, &problem, stepper, rep0, g.times[0], g.times[1], &self.cloud, &self.space)?;
            self.report.diagnostic("stationarity.evolution", &ev);
            self.assert(Assertion::at_most("stationarity.evolution_relative", ev.relative(), self.cfg.checks.evolution_tol));
        }
        Ok(())
    }

    fn run(&mut self) -> Result<()> {
        match self.cfg.pipeline {
            Pipeline::Finite => self.finite(),
            Pipeline::Infinite => self.infinite(),
            Pipeline::Stationarity => self.stationarity(),
            Pipeline::Full => {
                self.finite()?;
                if self.entry.as_ref().is_some_and(|e| !e.infinite) {
                    log::info!("problem has no infinite-horizon regime; infinite stages skipped");
                    self.report.diagnostic("full.skipped", &["infinite", "stationarity"]);
                    return Ok(());
                }
                self.infinite()?;
                self.stationarity()
            }
        }
    }
}

fn setup<'a>(cfg: &'a ExperimentConfig, force: bool) -> Result<Ctx<'a>> {
    cfg.check()?;
    let (spec, entry) = resolve(&cfg.problem)?;
    let space = WeightedSpace::new(cfg.space.dim, cfg.space.q, cfg.space.p)?;
    let cloud = sample_reference_cloud(cfg.mc.particles, &space, cfg.mc.seed)?;
    let mut report = Report::new(cfg);
    report.seeds.insert("master".into(), cfg.mc.seed);
    report.seeds.insert("cloud".into(), cloud.seed());
    report.seeds.insert("replica_id_end".into(), cfg.mc.replicas as u64);
    Ok(Ctx { cfg, force, spec, entry, space, cloud, report, tables: Tables::default() })
}

/// Runs the configured pipeline on a pool of `mc.workers` threads.
pub fn run(cfg: &ExperimentConfig, force: bool) -> Outcome {
    let mut ctx = match setup(cfg, force) {
        Ok(c) => c,
        Err(e) => {
            let mut report = Report::new(cfg);
            report.exit_code = exit_code_for(&e);
            report.error = Some(e.to_string());
            return Outcome { exit_code: report.exit_code, report, tables: Tables::default() };
        }
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.mc.workers).build();
    let result = match pool {
        Ok(pool) => pool.install(|| ctx.run()),
        Err(e) => Err(LabError::Config(format!("cannot build worker pool: {e}"))),
    };
    let code = match &result {
        Ok(()) if ctx.report.all_passed() => EXIT_PASS,
        Ok(()) => EXIT_ASSERTION,
        Err(e) => exit_code_for(e),
    };
    if let Err(e) = result {
        log::error!("{e}");
        ctx.report.error = Some(e.to_string());
    }
    ctx.report.exit_code = code;
    for a in ctx.report.assertions.iter().filter(|a| !a.passed) {
        log::warn!("assertion {} failed: {:e} vs {:e}", a.name, a.value, a.tolerance);
    }
    Outcome { exit_code: code, report: ctx.report, tables: ctx.tables }
}

/// [`run`] followed by writing the outputs to `out` (or the configured
/// directory). A write failure turns a passing run into exit 2.
pub fn run_and_write(cfg: &ExperimentConfig, force: bool, out: Option<&Path>) -> Outcome {
    let mut outcome = run(cfg, force);
    let dir = out.unwrap_or(&cfg.output.dir);
    if let Err(e) = write_outputs(dir, &outcome.report, &outcome.tables) {
        log::error!("writing outputs to {}: {e}", dir.display());
        if outcome.exit_code == EXIT_PASS {
            outcome.exit_code = EXIT_CONFIG;
        }
    }
    outcome
}

/// Builds the problem and runs the condition validators that the pipeline
/// would run, without solving.
pub fn validate(cfg: &ExperimentConfig) -> (i32, Report) {
    let mut report = Report::new(cfg);
    let result = (|| -> Result<bool> {
        cfg.check()?;
        let (spec, _) = resolve(&cfg.problem)?;
        let space = WeightedSpace::new(cfg.space.dim, cfg.space.q, cfg.space.p)?;
        let mut ok = true;
        if matches!(cfg.pipeline, Pipeline::Finite | Pipeline::Full) {
            let p = build_problem(cfg, &spec, Horizon::Finite { t: cfg.grid.horizon })?;
            let rep = validate_conditions_finite(&p, &space);
            ok &= rep.passed();
            report.conditions.insert("finite".into(), rep);
        }
        if !matches!(cfg.pipeline, Pipeline::Finite) {
            let p = build_problem(cfg, &spec, Horizon::Infinite)?;
            let (k, k_ok) = match infinite_discount(cfg, &p) {
                Ok(k) => (k, true),
                Err(_) => (0.0, false),
            };
            let rep = validate_conditions_infinite(&p, &space, k);
            ok &= k_ok && rep.passed();
            report.conditions.insert("infinite".into(), rep);
        }
        Ok(ok)
    })();
    let code = match result {
        Ok(true) => EXIT_PASS,
        Ok(false) => EXIT_CONFIG,
        Err(e) => {
            report.error = Some(e.to_string());
            exit_code_for(&e)
        }
    };
    report.exit_code = code;
    (code, report)
}

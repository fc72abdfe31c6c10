//! `report.json` and the CSV tables written by a run.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, OutputFormat};
use crate::error::Result;
use crate::finite::ConditionReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// `value ≤ tolerance`
    AtMost,
    /// `value ≥ tolerance`
    AtLeast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    pub name: String,
    pub value: f64,
    pub relation: Relation,
    pub tolerance: f64,
    pub passed: bool,
}

impl Assertion {
    pub fn at_most(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self { name: name.into(), value, relation: Relation::AtMost, tolerance, passed: value <= tolerance }
    }

    pub fn at_least(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self { name: name.into(), value, relation: Relation::AtLeast, tolerance, passed: value >= tolerance }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub version: String,
    pub config: ExperimentConfig,
    pub seeds: BTreeMap<String, u64>,
    pub conditions: BTreeMap<String, ConditionReport>,
    pub diagnostics: BTreeMap<String, serde_json::Value>,
    pub assertions: Vec<Assertion>,
    pub exit_code: i32,
    pub error: Option<String>,
}

impl Report {
    pub fn new(config: &ExperimentConfig) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            seeds: BTreeMap::new(),
            conditions: BTreeMap::new(),
            diagnostics: BTreeMap::new(),
            assertions: Vec::new(),
            exit_code: 0,
            error: None,
        }
    }

    pub fn diagnostic<T: Serialize>(&mut self, key: impl Into<String>, value: &T) {
        let v = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
        self.diagnostics.insert(key.into(), v);
    }

    pub fn assertion(&self, name: &str) -> Option<&Assertion> {
        self.assertions.iter().find(|a| a.name == name)
    }

    pub fn all_passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldRow {
    pub pipeline: &'static str,
    pub replica: u64,
    pub t: f64,
    pub particle: usize,
    pub x: Vec<f64>,
    pub u: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormRow {
    pub pipeline: &'static str,
    pub quantity: String,
    pub index: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualRow {
    pub phi_id: String,
    pub dt: f64,
    pub particles: usize,
    pub residual: f64,
    pub normalizer: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Tables {
    pub fields: Vec<FieldRow>,
    pub norms: Vec<NormRow>,
    pub residuals: Vec<ResidualRow>,
}

/// Shortest round-trip scientific notation.
fn sci(v: f64) -> String {
    format!("{v:e}")
}

impl Tables {
    pub fn norm(&mut self, pipeline: &'static str, quantity: &str, values: &[f64]) {
        self.norms.extend(values.iter().enumerate().map(|(index, &value)| NormRow {
            pipeline,
            quantity: quantity.to_string(),
            index,
            value,
        }));
    }

    pub fn write_fields(&self, path: &Path, dim: usize) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["pipeline".to_string(), "replica".into(), "t".into(), "particle".into()];
        header.extend((1..=dim).map(|i| format!("x{i}")));
        header.push("u".into());
        w.write_record(&header)?;
        for r in &self.fields {
            let mut rec = vec![r.pipeline.to_string(), r.replica.to_string(), sci(r.t), r.particle.to_string()];
            rec.extend(r.x.iter().map(|v| sci(*v)));
            rec.push(sci(r.u));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_norms(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["pipeline", "quantity", "index", "value"])?;
        for r in &self.norms {
            w.write_record([r.pipeline, &r.quantity, &r.index.to_string(), &sci(r.value)])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_residuals(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["phi_id", "dt", "particles", "residual", "normalizer"])?;
        for r in &self.residuals {
            w.write_record([&r.phi_id, &sci(r.dt), &r.particles.to_string(), &sci(r.residual), &sci(r.normalizer)])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Writes the requested formats into `dir` (created if missing).
pub fn write_outputs(dir: &Path, report: &Report, tables: &Tables) -> Result<()> {
    fs::create_dir_all(dir)?;
    let formats = &report.config.output.formats;
    if formats.contains(&OutputFormat::Json) {
        let mut text = serde_json::to_string_pretty(report)?;
        text.push('\n');
        fs::write(dir.join("report.json"), text)?;
    }
    if formats.contains(&OutputFormat::Csv) {
        tables.write_fields(&dir.join("fields.csv"), report.config.space.dim)?;
        tables.write_norms(&dir.join("norms.csv"))?;
        tables.write_residuals(&dir.join("residuals.csv"))?;
    }
    Ok(())
}

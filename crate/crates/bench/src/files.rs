//! Instance, reference and trace files.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use sock_core::problems::{InstanceFile, MeanVarInstance, ReferenceSolution};
use sock_core::solvers::SolverTrace;

pub fn write_instance(path: &Path, instance: &MeanVarInstance) -> Result<()> {
    let mut text = InstanceFile::from_instance(instance).to_json();
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

pub fn read_instance(path: &Path) -> Result<MeanVarInstance> {
    let text =
        fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let file = InstanceFile::from_json(&text)
        .with_context(|| format!("invalid instance file {}", path.display()))?;
    file.into_instance()
        .with_context(|| format!("invalid instance file {}", path.display()))
}

#[derive(Serialize)]
struct ReferenceOut<'a> {
    x_star: &'a [f64],
    h_star: f64,
    residual: f64,
    tol: f64,
}

pub fn reference_json(reference: &ReferenceSolution) -> String {
    let out = ReferenceOut {
        x_star: &reference.x_star,
        h_star: reference.h_star,
        residual: reference.residual,
        tol: reference.tol,
    };
    let mut text = serde_json::to_string(&out).expect("reference serializes");
    text.push('\n');
    text
}

pub fn write_reference(path: &Path, reference: &ReferenceSolution) -> Result<()> {
    fs::write(path, reference_json(reference))
        .with_context(|| format!("cannot write {}", path.display()))
}

pub fn read_reference(path: &Path) -> Result<ReferenceSolution> {
    let text =
        fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text)
        .with_context(|| format!("invalid reference file {}", path.display()))
}

pub fn write_trace(path: &Path, trace: &SolverTrace) -> Result<()> {
    fs::write(path, trace.to_csv()).with_context(|| format!("cannot write {}", path.display()))
}

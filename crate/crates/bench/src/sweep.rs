//! Multi-seed sweeps and the checkpoint summary.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;
use sock_core::problems::generate_instance;
use sock_core::solvers::SolverTrace;

use crate::config::{BenchConfig, InstanceSource};
use crate::files::{read_instance, read_reference, write_trace};
use crate::run::{execute, run_stream, Problem};

pub const SUMMARY_HEADER: &str = "run,checkpoint,seeds,mean_gap,min_gap,max_gap";

/// Loads or generates the instance and loads or computes its reference.
pub fn load_problem(config: &BenchConfig) -> Result<Problem> {
    let section = &config.instance;
    let instance = match &section.source {
        InstanceSource::File(path) => read_instance(path)?,
        &InstanceSource::Generate {
            dim,
            samples,
            noise_v,
            lambda1,
            lambda2,
            seed,
        } => generate_instance(dim, samples, noise_v, lambda1, lambda2, seed)?,
    };
    let reference = match &section.reference {
        Some(path) => read_reference(path)?,
        None => instance
            .reference_optimum(section.reference_tol)
            .context("cannot compute the reference optimum")?,
    };
    Problem::new(instance, Some(reference), section.x0, section.radius)
}

/// Result of one (run, seed) combination.
#[derive(Debug)]
pub struct Outcome {
    pub run_index: usize,
    pub run_id: String,
    pub seed: u64,
    pub trace_path: PathBuf,
    pub trace: Option<SolverTrace>,
    pub error: Option<String>,
}

impl Outcome {
    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }
}

pub fn trace_file_name(run_id: &str, seed: u64) -> String {
    format!("{run_id}_seed{seed}.csv")
}

/// Runs every (run, seed) combination on up to `jobs` threads and writes one
/// trace per combination. Failed combinations keep their partial traces.
pub fn run_all(
    config: &BenchConfig,
    problem: &Problem,
    out_dir: &Path,
    jobs: usize,
) -> Result<Vec<Outcome>> {
    fs::create_dir_all(out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;
    let combos: Vec<(usize, u64)> = config
        .runs
        .iter()
        .enumerate()
        .flat_map(|(i, r)| r.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let one = |&(i, seed): &(usize, u64)| {
        let run = &config.runs[i];
        let trace_path = out_dir.join(trace_file_name(&run.id, seed));
        let stream = run_stream(seed, i as u64);
        let (trace, mut error) = match execute(problem, &run.spec, &stream) {
            Ok(t) => {
                let err = t.failure.as_ref().map(|e| e.to_string());
                (Some(t), err)
            }
            Err(e) => (None, Some(format!("{e:#}"))),
        };
        if let Some(t) = &trace {
            if let Err(e) = write_trace(&trace_path, t) {
                error.get_or_insert(format!("{e:#}"));
            }
        }
        Outcome {
            run_index: i,
            run_id: run.id.clone(),
            seed,
            trace_path,
            trace,
            error,
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .context("cannot start worker threads")?;
    let mut outcomes: Vec<Outcome> = pool.install(|| combos.par_iter().map(one).collect());
    outcomes.sort_by(|a, b| (a.run_id.as_str(), a.seed).cmp(&(b.run_id.as_str(), b.seed)));
    Ok(outcomes)
}

/// Gap of the last record at or before `units` (records are ordered by units).
fn gap_at(trace: &SolverTrace, units: u64) -> Option<f64> {
    trace
        .records
        .iter()
        .take_while(|r| r.oracle_units() <= units)
        .last()
        .and_then(|r| r.gap)
}

/// Per-run mean/min/max gap at the union of the oracle-unit checkpoints of its
/// successful seeds, carrying the last value forward. Rows are sorted by run id.
pub fn summary_csv(outcomes: &[Outcome]) -> String {
    let mut ids: Vec<&str> = outcomes.iter().map(|o| o.run_id.as_str()).collect();
    ids.sort_unstable();
    ids.dedup();
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for id in ids {
        let traces: Vec<&SolverTrace> = outcomes
            .iter()
            .filter(|o| o.run_id == id && o.succeeded())
            .filter_map(|o| o.trace.as_ref())
            .collect();
        let checkpoints: BTreeSet<u64> = traces
            .iter()
            .flat_map(|t| t.records.iter().map(|r| r.oracle_units()))
            .collect();
        for c in checkpoints {
            let gaps: Vec<f64> = traces.iter().filter_map(|t| gap_at(t, c)).collect();
            if gaps.is_empty() {
                continue;
            }
            let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
            let min = gaps.iter().copied().fold(f64::INFINITY, f64::min);
            let max = gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            writeln!(out, "{id},{c},{},{mean:?},{min:?},{max:?}", gaps.len())
                .expect("writing to a String cannot fail");
        }
    }
    out
}

/// Runs the sweep and writes traces plus `summary.csv` into `out_dir`.
pub fn bench(config: &BenchConfig, out_dir: &Path, jobs: usize) -> Result<Vec<Outcome>> {
    let problem = load_problem(config)?;
    let outcomes = run_all(config, &problem, out_dir, jobs)?;
    let path = out_dir.join("summary.csv");
    fs::write(&path, summary_csv(&outcomes))
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(outcomes)
}

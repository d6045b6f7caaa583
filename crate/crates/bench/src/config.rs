//! Line-oriented sweep configuration.
//!
//! ```text
//! [instance]
//! path = instance.json      # or dim/samples/noise_v/lambda1/lambda2/seed
//! reference = reference.json
//! x0 = 0
//!
//! [run]
//! id = sock
//! algo = sock
//! mode = practical
//! seeds = 1, 2, 3
//! snapshots = 20
//! ```
//!
//! Relative paths resolve against the directory of the config file.

use std::collections::HashSet;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

use crate::run::{parse_estimator_option, Algo, Mode, RunSpec};

/// Where the instance comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum InstanceSource {
    File(PathBuf),
    Generate {
        dim: usize,
        samples: usize,
        noise_v: f64,
        lambda1: f64,
        lambda2: f64,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceSection {
    pub source: InstanceSource,
    pub reference: Option<PathBuf>,
    /// Tolerance of the reference computed when no reference file is given.
    pub reference_tol: f64,
    pub x0: f64,
    pub radius: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSection {
    pub id: String,
    pub seeds: Vec<u64>,
    pub spec: RunSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub instance: InstanceSection,
    pub runs: Vec<RunSection>,
}

pub const DEFAULT_REFERENCE_TOL: f64 = 1e-10;

fn parse<T>(line: usize, key: &str, value: &str) -> Result<T>
where
    T: FromStr,
    T::Err: Display,
{
    value
        .parse::<T>()
        .map_err(|e| anyhow!("line {line}: invalid value {value:?} for {key}: {e}"))
}

type Entries = Vec<(usize, String, String)>;

fn take<'a>(entries: &'a Entries, key: &str) -> Option<(usize, &'a str)> {
    entries
        .iter()
        .find(|(_, k, _)| k == key)
        .map(|(l, _, v)| (*l, v.as_str()))
}

fn check_keys(entries: &Entries, allowed: &[&str], section: &str) -> Result<()> {
    let mut seen = HashSet::new();
    for (line, key, _) in entries {
        if !allowed.contains(&key.as_str()) {
            bail!("line {line}: unknown key {key:?} in [{section}]");
        }
        if !seen.insert(key.as_str()) {
            bail!("line {line}: duplicate key {key:?} in [{section}]");
        }
    }
    Ok(())
}

const INSTANCE_KEYS: &[&str] = &[
    "path",
    "dim",
    "samples",
    "noise_v",
    "lambda1",
    "lambda2",
    "seed",
    "reference",
    "reference_tol",
    "x0",
    "radius",
];
const GENERATE_KEYS: &[&str] = &["dim", "samples", "noise_v", "lambda1", "lambda2", "seed"];

const RUN_KEYS: &[&str] = &[
    "id",
    "algo",
    "mode",
    "seeds",
    "snapshots",
    "stages",
    "eps",
    "epochs",
    "mu0",
    "option",
    "batches",
    "m",
    "tau1",
    "tau2",
    "theta",
    "alpha",
    "eta",
    "batch_a",
    "batch_b",
    "batch_c",
    "timing",
];

fn instance_section(entries: &Entries, base: &Path) -> Result<InstanceSection> {
    check_keys(entries, INSTANCE_KEYS, "instance")?;
    let get = |k: &str| take(entries, k);
    let source = match get("path") {
        Some((line, p)) => {
            if let Some(k) = GENERATE_KEYS.iter().find(|k| get(k).is_some()) {
                bail!("line {line}: [instance] sets both path and {k}");
            }
            InstanceSource::File(base.join(p))
        }
        None => {
            let need = |k: &str| get(k).ok_or_else(|| anyhow!("[instance] needs path or {k}"));
            let (l, v) = need("dim")?;
            let dim = parse(l, "dim", v)?;
            let (l, v) = need("samples")?;
            let samples = parse(l, "samples", v)?;
            let (l, v) = need("noise_v")?;
            let noise_v = parse(l, "noise_v", v)?;
            let (l, v) = need("lambda1")?;
            let lambda1 = parse(l, "lambda1", v)?;
            let (l, v) = need("lambda2")?;
            let lambda2 = parse(l, "lambda2", v)?;
            let (l, v) = need("seed")?;
            let seed = parse(l, "seed", v)?;
            InstanceSource::Generate {
                dim,
                samples,
                noise_v,
                lambda1,
                lambda2,
                seed,
            }
        }
    };
    let reference = get("reference").map(|(_, p)| base.join(p));
    let reference_tol = match get("reference_tol") {
        Some((l, v)) => parse(l, "reference_tol", v)?,
        None => DEFAULT_REFERENCE_TOL,
    };
    let x0 = match get("x0") {
        Some((l, v)) => parse(l, "x0", v)?,
        None => 0.0,
    };
    let radius = get("radius")
        .map(|(l, v)| parse(l, "radius", v))
        .transpose()?;
    Ok(InstanceSection {
        source,
        reference,
        reference_tol,
        x0,
        radius,
    })
}

fn run_section(entries: &Entries, header_line: usize) -> Result<RunSection> {
    check_keys(entries, RUN_KEYS, "run")?;
    let get = |k: &str| take(entries, k);
    let need = |k: &str| get(k).ok_or_else(|| anyhow!("[run] at line {header_line} needs {k}"));
    let (_, id) = need("id")?;
    if id.is_empty()
        || !id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
    {
        bail!("[run] at line {header_line}: id {id:?} must be alphanumeric, '-', '_' or '.'");
    }
    let (l, v) = need("algo")?;
    let algo: Algo = v.parse().with_context(|| format!("line {l}"))?;
    let (l, v) = need("mode")?;
    let mode: Mode = v.parse().with_context(|| format!("line {l}"))?;
    let (l, v) = need("seeds")?;
    let seeds = v
        .split(',')
        .map(|s| parse::<u64>(l, "seeds", s.trim()))
        .collect::<Result<Vec<_>>>()?;
    let mut unique = HashSet::new();
    if let Some(dup) = seeds.iter().find(|s| !unique.insert(**s)) {
        bail!("line {l}: seed {dup} listed twice");
    }

    let mut spec = RunSpec::new(algo, mode);
    macro_rules! opt {
        ($key:literal, $field:expr) => {
            if let Some((l, v)) = get($key) {
                $field = Some(parse(l, $key, v)?);
            }
        };
    }
    opt!("snapshots", spec.snapshots);
    opt!("stages", spec.stages);
    opt!("epochs", spec.epochs);
    opt!("m", spec.overrides.m);
    opt!("tau1", spec.overrides.tau1);
    opt!("tau2", spec.overrides.tau2);
    opt!("theta", spec.overrides.theta);
    opt!("alpha", spec.overrides.alpha);
    opt!("eta", spec.overrides.eta);
    opt!("batch_a", spec.overrides.batch_a);
    opt!("batch_b", spec.overrides.batch_b);
    opt!("batch_c", spec.overrides.batch_c);
    if let Some((l, v)) = get("eps") {
        spec.eps = parse(l, "eps", v)?;
    }
    if let Some((l, v)) = get("mu0") {
        spec.mu0 = parse(l, "mu0", v)?;
    }
    if let Some((l, v)) = get("option") {
        spec.nock_option = parse_estimator_option(v).with_context(|| format!("line {l}"))?;
    }
    if let Some((l, v)) = get("batches") {
        spec.nock_batches = v.parse().with_context(|| format!("line {l}"))?;
    }
    if let Some((l, v)) = get("timing") {
        spec.timing = parse(l, "timing", v)?;
    }
    Ok(RunSection {
        id: id.to_string(),
        seeds,
        spec,
    })
}

impl BenchConfig {
    /// Parses `text`; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut sections: Vec<(usize, String, Entries)> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| anyhow!("line {line}: malformed section header"))?
                    .trim();
                if name != "instance" && name != "run" {
                    bail!("line {line}: unknown section [{name}]");
                }
                sections.push((line, name.to_string(), Vec::new()));
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| anyhow!("line {line}: expected key = value"))?;
            let section = sections
                .last_mut()
                .ok_or_else(|| anyhow!("line {line}: key outside of a section"))?;
            section
                .2
                .push((line, key.trim().to_string(), value.trim().to_string()));
        }

        let mut instance = None;
        let mut runs = Vec::new();
        for (line, name, entries) in &sections {
            if name == "instance" {
                if instance.is_some() {
                    bail!("line {line}: second [instance] section");
                }
                instance = Some(instance_section(entries, base)?);
            } else {
                runs.push(run_section(entries, *line)?);
            }
        }
        let instance = instance.ok_or_else(|| anyhow!("missing [instance] section"))?;
        if runs.is_empty() {
            bail!("no [run] section");
        }
        let mut ids = HashSet::new();
        for r in &runs {
            if !ids.insert(r.id.as_str()) {
                bail!("run id {:?} used twice", r.id);
            }
        }
        Ok(BenchConfig { instance, runs })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).with_context(|| format!("invalid config {}", path.display()))
    }
}

//! One solver run on a mean-variance instance.

use std::fmt;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use nalgebra::DVector;
use sock_core::problems::{MeanVarInstance, ReferenceSolution};
use sock_core::rng::tags;
use sock_core::solvers::{
    derive_multilevel_params_theoretical, derive_sock_params_practical,
    derive_sock_params_theoretical, multilevel_sock_solve, nock_solve, nock_stage_count,
    sock_solve, vrsc_pg_solve, MultiLevelParams, NockBatchPolicy, NockConfig, NockMode, SockParams,
    SolveOptions, SolverTrace, VrscPgParams,
};
use sock_core::{CompositionalLevels, EstimatorOption, RandomStream, SmoothnessProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, clap::ValueEnum)]
pub enum Algo {
    /// Accelerated loop, option I estimator.
    Sock,
    /// Accelerated loop, option II estimator.
    Gock,
    /// Reduction for objectives without strong convexity.
    Nock,
    /// Multi-level loop on the two-level view of the instance.
    Mlsock,
    /// Proximal variance-reduced baseline.
    Vrscpg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Mode {
    Theoretical,
    Practical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum NockBatches {
    Capped,
    Heuristic,
}

fn parse_value_enum<T: clap::ValueEnum>(s: &str, what: &str) -> Result<T> {
    T::from_str(s.trim(), true).map_err(|_| {
        let names: Vec<String> = T::value_variants()
            .iter()
            .filter_map(|v| v.to_possible_value().map(|p| p.get_name().to_string()))
            .collect();
        anyhow!("unknown {what} {s:?}; expected one of {}", names.join(", "))
    })
}

fn value_name<T: clap::ValueEnum>(v: &T) -> String {
    v.to_possible_value()
        .map(|p| p.get_name().to_string())
        .unwrap_or_default()
}

macro_rules! value_enum_text {
    ($t:ty, $what:literal) => {
        impl FromStr for $t {
            type Err = anyhow::Error;
            fn from_str(s: &str) -> Result<Self> {
                parse_value_enum(s, $what)
            }
        }
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&value_name(self))
            }
        }
    };
}

value_enum_text!(Algo, "algorithm");
value_enum_text!(Mode, "mode");
value_enum_text!(NockBatches, "batch policy");

/// Parses `i`/`ii` (or `1`/`2`) into an estimator option.
pub fn parse_estimator_option(s: &str) -> Result<EstimatorOption> {
    match s.trim().to_ascii_lowercase().as_str() {
        "i" | "1" => Ok(EstimatorOption::OptionI),
        "ii" | "2" => Ok(EstimatorOption::OptionII),
        _ => bail!("estimator option must be i or ii, got {s:?}"),
    }
}

/// Explicit values that replace derived parameters.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub m: Option<usize>,
    pub tau1: Option<f64>,
    pub tau2: Option<f64>,
    pub theta: Option<f64>,
    pub alpha: Option<f64>,
    pub eta: Option<f64>,
    pub batch_a: Option<u64>,
    pub batch_b: Option<u64>,
    pub batch_c: Option<u64>,
}

/// Everything needed to execute one run apart from the instance and the seed.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub algo: Algo,
    pub mode: Mode,
    /// Snapshots `S` (per stage for the reduction).
    pub snapshots: Option<usize>,
    /// Stages `T` of the reduction.
    pub stages: Option<usize>,
    /// Target accuracy used to derive `T = ceil(log2(L/eps))`.
    pub eps: f64,
    pub epochs: Option<usize>,
    pub mu0: f64,
    pub nock_option: EstimatorOption,
    pub nock_batches: NockBatches,
    pub overrides: Overrides,
    pub timing: bool,
}

pub const DEFAULT_SNAPSHOTS: usize = 20;
pub const DEFAULT_EPOCHS: usize = 20;

impl RunSpec {
    pub fn new(algo: Algo, mode: Mode) -> Self {
        RunSpec {
            algo,
            mode,
            snapshots: None,
            stages: None,
            eps: 1e-4,
            epochs: None,
            mu0: 1.0,
            nock_option: EstimatorOption::OptionII,
            nock_batches: NockBatches::Capped,
            overrides: Overrides::default(),
            timing: false,
        }
    }
}

/// An instance with its start point, ball radius and optional reference.
pub struct Problem {
    pub instance: MeanVarInstance,
    pub reference: Option<ReferenceSolution>,
    pub x0: DVector<f64>,
    pub profile: SmoothnessProfile,
}

impl Problem {
    /// `radius` defaults to `10 max(1, ||x*||)` with a reference and 10 without.
    pub fn new(
        instance: MeanVarInstance,
        reference: Option<ReferenceSolution>,
        x0_fill: f64,
        radius: Option<f64>,
    ) -> Result<Self> {
        if let Some(r) = &reference {
            if r.x_star.len() != instance.dim {
                bail!(
                    "reference has dimension {}, instance has {}",
                    r.x_star.len(),
                    instance.dim
                );
            }
        }
        let radius = radius.unwrap_or_else(|| match &reference {
            Some(r) => 10.0 * r.point().norm().max(1.0),
            None => 10.0,
        });
        let profile = instance.explicit_constants(radius)?;
        let x0 = DVector::from_element(instance.dim, x0_fill);
        Ok(Problem {
            instance,
            reference,
            x0,
            profile,
        })
    }

    pub fn h_star(&self) -> Option<f64> {
        self.reference.as_ref().map(|r| r.h_star)
    }
}

/// The stream of run `run_index` under `seed`.
pub fn run_stream(seed: u64, run_index: u64) -> RandomStream {
    RandomStream::new(seed).child(tags::RUN, run_index)
}

fn apply_sock_overrides(mut p: SockParams, o: &Overrides) -> SockParams {
    if let Some(m) = o.m {
        p.m = m;
    }
    if let Some(v) = o.tau1 {
        p.tau1 = v;
    }
    if let Some(v) = o.tau2 {
        p.tau2 = v;
    }
    if let Some(v) = o.theta {
        p.theta = v;
    }
    if let Some(v) = o.alpha {
        p.alpha = v;
    }
    if let Some(v) = o.batch_a {
        p.batch_inner_value = v;
    }
    if let Some(v) = o.batch_b {
        p.batch_inner_jac = v;
    }
    if let Some(v) = o.batch_c {
        p.batch_outer = v;
    }
    p
}

/// Parameters of the two-level loop for `algo` in `spec.mode`.
pub fn sock_params(problem: &Problem, spec: &RunSpec) -> Result<SockParams> {
    let option = match spec.algo {
        Algo::Sock => EstimatorOption::OptionI,
        Algo::Gock => EstimatorOption::OptionII,
        other => bail!("{other} does not use two-level loop parameters"),
    };
    let s = spec.snapshots.unwrap_or(DEFAULT_SNAPSHOTS);
    let p = match spec.mode {
        Mode::Theoretical => derive_sock_params_theoretical(&problem.profile, option, s)?,
        Mode::Practical => derive_sock_params_practical(&problem.profile, option, s)?,
    };
    Ok(apply_sock_overrides(p, &spec.overrides))
}

pub fn nock_config(problem: &Problem, spec: &RunSpec) -> Result<NockConfig> {
    let stages = match spec.stages {
        Some(t) => t,
        None => nock_stage_count(problem.profile.l, spec.eps)?,
    };
    let o = &spec.overrides;
    let batches = match (o.batch_a, o.batch_b, o.batch_c) {
        (None, None, None) => match spec.nock_batches {
            NockBatches::Capped => NockBatchPolicy::Capped,
            NockBatches::Heuristic => NockBatchPolicy::Heuristic,
        },
        (a, b, c) => NockBatchPolicy::Fixed(sock_core::BatchSizes {
            inner_value: a.unwrap_or(1),
            inner_jac: b.unwrap_or(1),
            outer: c.unwrap_or(1),
        }),
    };
    Ok(NockConfig {
        mu0: spec.mu0,
        stages,
        mode: match spec.mode {
            Mode::Theoretical => NockMode::Theoretical,
            Mode::Practical => NockMode::Practical,
        },
        batches,
        option: spec.nock_option,
        snapshots: spec.snapshots,
    })
}

/// Multi-level parameters on the two-level view: theoretical batches from the
/// level constants, or the tuned two-level batches `(A; B, C)`.
pub fn multilevel_params(problem: &Problem, spec: &RunSpec) -> Result<MultiLevelParams> {
    let s = spec.snapshots.unwrap_or(DEFAULT_SNAPSHOTS);
    let mut p = match spec.mode {
        Mode::Theoretical => {
            let consts = CompositionalLevels::<sock_core::problems::MeanVarOracle>::level_constants(
                &problem.profile,
            );
            derive_multilevel_params_theoretical(&problem.profile, &consts, s)?
        }
        Mode::Practical => {
            let tuned =
                derive_sock_params_practical(&problem.profile, EstimatorOption::OptionII, s)?;
            let mut p = MultiLevelParams::with_batches(
                &problem.profile,
                s,
                vec![tuned.batch_inner_value],
                vec![tuned.batch_inner_jac, tuned.batch_outer],
            )?;
            p.theta = tuned.theta;
            p.alpha = tuned.alpha;
            p
        }
    };
    let o = &spec.overrides;
    if let Some(m) = o.m {
        p.m = m;
    }
    if let Some(v) = o.tau1 {
        p.tau1 = v;
    }
    if let Some(v) = o.tau2 {
        p.tau2 = v;
    }
    if let Some(v) = o.theta {
        p.theta = v;
    }
    if let Some(v) = o.alpha {
        p.alpha = v;
    }
    if let Some(v) = o.batch_a {
        p.value_batches[0] = v;
    }
    if let Some(v) = o.batch_b {
        p.jac_batches[0] = v;
    }
    if let Some(v) = o.batch_c {
        p.jac_batches[1] = v;
    }
    Ok(p)
}

pub fn vrscpg_params(problem: &Problem, spec: &RunSpec) -> Result<VrscPgParams> {
    let mut p = VrscPgParams::derive(&problem.profile, spec.epochs.unwrap_or(DEFAULT_EPOCHS))?;
    let o = &spec.overrides;
    if let Some(m) = o.m {
        p.inner_len = m;
    }
    if let Some(v) = o.eta {
        p.eta = v;
    }
    if let Some(v) = o.batch_a.or(o.batch_b) {
        p.batch_inner = v;
    }
    if let Some(v) = o.batch_c {
        p.batch_outer = v;
    }
    Ok(p)
}

/// Runs `spec` on `problem`. Solver failures during iteration are reported in
/// the returned trace; configuration errors are returned as `Err`.
pub fn execute(problem: &Problem, spec: &RunSpec, stream: &RandomStream) -> Result<SolverTrace> {
    let oracle = problem.instance.as_compositional();
    let opts = SolveOptions {
        h_star: problem.h_star(),
        timing: spec.timing,
        audit_averaging: false,
    };
    let (profile, x0) = (&problem.profile, &problem.x0);
    let trace = match spec.algo {
        Algo::Sock | Algo::Gock => {
            let params = sock_params(problem, spec)?;
            sock_solve(&oracle, profile, x0, &params, stream, &opts)
        }
        Algo::Nock => {
            let config = nock_config(problem, spec)?;
            nock_solve(&oracle, profile, x0, &config, stream, &opts)
        }
        Algo::Mlsock => {
            let params = multilevel_params(problem, spec)?;
            let levels = CompositionalLevels::new(&oracle);
            multilevel_sock_solve(&levels, profile, x0, &params, stream, &opts)
        }
        Algo::Vrscpg => {
            let params = vrscpg_params(problem, spec)?;
            vrsc_pg_solve(&oracle, profile, x0, &params, stream, &opts)
        }
    };
    trace.with_context(|| format!("cannot run {}", spec.algo))
}

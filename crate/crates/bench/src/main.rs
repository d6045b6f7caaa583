use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use sock_bench::files::{
    read_instance, read_reference, write_instance, write_reference, write_trace,
};
use sock_bench::run::{parse_estimator_option, NockBatches, Overrides};
use sock_bench::sweep::bench;
use sock_bench::{execute, run_stream, Algo, BenchConfig, Mode, Problem, RunSpec};
use sock_core::problems::generate_instance;
use sock_core::EstimatorOption;

#[derive(Parser)]
#[command(
    name = "sock-bench",
    version,
    about = "Accelerated compositional solvers on the mean-variance benchmark"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a mean-variance instance and print its L, mu and kappa.
    Gen(GenArgs),
    /// Compute a reference optimum of an instance.
    Refsol(RefsolArgs),
    /// Run one solver and write its CSV trace.
    Solve(Box<SolveArgs>),
    /// Run a multi-seed sweep described by a config file.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    dim: usize,
    #[arg(long)]
    samples: usize,
    /// Noise variance added to the factor covariance.
    #[arg(long = "noise-v")]
    noise_v: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda1: f64,
    #[arg(long, default_value_t = 0.0)]
    lambda2: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RefsolArgs {
    #[arg(long)]
    instance: PathBuf,
    /// Target gradient-mapping norm.
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    instance: PathBuf,
    /// Reference optimum; without it the gap column stays empty.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long, value_enum)]
    algo: Algo,
    #[arg(long, value_enum, default_value_t = Mode::Practical)]
    mode: Mode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Position of the run in a sweep; selects the same stream as `bench`.
    #[arg(long, default_value_t = 0)]
    run_index: u64,
    #[arg(long)]
    out: PathBuf,
    /// Snapshots S (per stage for nock).
    #[arg(long)]
    snapshots: Option<usize>,
    /// Stages T of nock; defaults to ceil(log2(L/eps)).
    #[arg(long)]
    stages: Option<usize>,
    #[arg(long, default_value_t = 1e-4)]
    eps: f64,
    /// Epochs of vrscpg.
    #[arg(long)]
    epochs: Option<usize>,
    /// Initial regularization of nock.
    #[arg(long, default_value_t = 1.0)]
    mu0: f64,
    /// Estimator option of nock: i or ii.
    #[arg(long, value_parser = parse_estimator_option, default_value = "ii")]
    option: EstimatorOption,
    #[arg(long, value_enum, default_value_t = NockBatches::Capped)]
    batches: NockBatches,
    /// Constant fill of the start point.
    #[arg(long, default_value_t = 0.0)]
    x0: f64,
    /// Radius of the ball the gradient bounds are taken over.
    #[arg(long)]
    radius: Option<f64>,
    /// Record wall-clock time in the trace.
    #[arg(long)]
    timing: bool,
    #[command(flatten)]
    overrides: OverrideArgs,
}

#[derive(Args)]
struct OverrideArgs {
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    tau1: Option<f64>,
    #[arg(long)]
    tau2: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    batch_a: Option<u64>,
    #[arg(long)]
    batch_b: Option<u64>,
    #[arg(long)]
    batch_c: Option<u64>,
}

#[derive(Args)]
struct BenchArgs {
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; 1 runs sequentially.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn gen(a: GenArgs) -> Result<()> {
    let inst = generate_instance(a.dim, a.samples, a.noise_v, a.lambda1, a.lambda2, a.seed)?;
    write_instance(&a.out, &inst)?;
    let p = inst.explicit_constants(10.0)?;
    let kappa = if p.mu > 0.0 {
        p.l / p.mu
    } else {
        f64::INFINITY
    };
    println!("L = {:e}\nmu = {:e}\nkappa = {:e}", p.l, p.mu, kappa);
    Ok(())
}

fn refsol(a: RefsolArgs) -> Result<()> {
    let inst = read_instance(&a.instance)?;
    let r = inst
        .reference_optimum(a.tol)
        .context("reference iteration did not reach the tolerance")?;
    write_reference(&a.out, &r)?;
    println!("h_star = {:e}\nresidual = {:e}", r.h_star, r.residual);
    Ok(())
}

fn solve(a: SolveArgs) -> Result<()> {
    let inst = read_instance(&a.instance)?;
    let reference = a.reference.as_deref().map(read_reference).transpose()?;
    let problem = Problem::new(inst, reference, a.x0, a.radius)?;
    let o = a.overrides;
    let spec = RunSpec {
        snapshots: a.snapshots,
        stages: a.stages,
        eps: a.eps,
        epochs: a.epochs,
        mu0: a.mu0,
        nock_option: a.option,
        nock_batches: a.batches,
        overrides: Overrides {
            m: o.m,
            tau1: o.tau1,
            tau2: o.tau2,
            theta: o.theta,
            alpha: o.alpha,
            eta: o.eta,
            batch_a: o.batch_a,
            batch_b: o.batch_b,
            batch_c: o.batch_c,
        },
        timing: a.timing,
        ..RunSpec::new(a.algo, a.mode)
    };
    let trace = execute(&problem, &spec, &run_stream(a.seed, a.run_index))?;
    write_trace(&a.out, &trace)?;
    if let Some(e) = trace.failure {
        bail!("run failed: {e}");
    }
    let last = trace.records.last().expect("trace has an initial record");
    match last.gap {
        Some(g) => println!("units = {}\ngap = {g:e}", last.oracle_units()),
        None => println!(
            "units = {}\nobjective = {:e}",
            last.oracle_units(),
            last.objective
        ),
    }
    Ok(())
}

fn run_bench(a: BenchArgs) -> Result<()> {
    let config = BenchConfig::load(&a.config)?;
    let outcomes = bench(&config, &a.out, a.jobs)?;
    let failed: Vec<_> = outcomes.iter().filter(|o| !o.succeeded()).collect();
    for o in &failed {
        eprintln!(
            "run {} seed {} failed: {}",
            o.run_id,
            o.seed,
            o.error.as_deref().unwrap_or("")
        );
    }
    println!(
        "{} of {} runs completed; summary in {}",
        outcomes.len() - failed.len(),
        outcomes.len(),
        a.out.join("summary.csv").display()
    );
    if !failed.is_empty() {
        bail!("{} runs failed", failed.len());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let result = match Cli::parse().command {
        Command::Gen(a) => gen(a),
        Command::Refsol(a) => refsol(a),
        Command::Solve(a) => solve(*a),
        Command::Bench(a) => run_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

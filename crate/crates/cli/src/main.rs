//! `pgas`: SPMD launcher and microbenchmark driver for the runtime.
//!
//! `pgas run` executes a built-in demo kernel on N units inside this
//! process; `pgas bench` sweeps one-sided operation latency or bandwidth
//! across message sizes on both the runtime and raw transport layers,
//! writes a CSV report, and prints the constant-overhead fit.

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use pgas_core::bench::{self, BenchMode, BenchOp, BenchSpec, Metric};
use pgas_core::RuntimeConfig;

mod programs;

#[derive(Parser)]
#[command(
    name = "pgas",
    version,
    about = "PGAS runtime launcher and microbenchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a built-in demo program SPMD-style on N units.
    Run(RunArgs),
    /// Measure one-sided operation latency/bandwidth and the runtime's
    /// constant overhead versus the raw transport.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Program {
    /// Every unit reports in.
    Hello,
    /// A token circulates unit to unit through global memory.
    Ring,
    /// All units increment a shared counter under the queuing lock.
    Lockdemo,
    /// Broadcast, scatter and gather round-trip check.
    Colldemo,
}

/// Pool and registry sizing; flags override the `PGAS_LOCAL_POOL_BYTES`,
/// `PGAS_TEAM_POOL_BYTES`, and `PGAS_TEAMLIST_CAP` environment keys.
#[derive(Args)]
struct PoolArgs {
    /// Non-collective pool bytes per unit.
    #[arg(long)]
    local_pool_bytes: Option<u64>,
    /// Collective pool bytes per team member.
    #[arg(long)]
    team_pool_bytes: Option<u64>,
    /// Live-team capacity of the registry.
    #[arg(long)]
    teamlist_cap: Option<usize>,
}

impl PoolArgs {
    fn apply(&self, mut config: RuntimeConfig) -> RuntimeConfig {
        if let Some(b) = self.local_pool_bytes {
            config = config.with_local_pool(b);
        }
        if let Some(b) = self.team_pool_bytes {
            config = config.with_team_pool(b);
        }
        if let Some(c) = self.teamlist_cap {
            config = config.with_teamlist_capacity(c);
        }
        config
    }
}

#[derive(Args)]
struct RunArgs {
    /// Number of units to launch.
    #[arg(long, default_value_t = 4)]
    units: u32,
    /// Print every transport operation to stderr.
    #[arg(long)]
    trace: bool,
    /// Seed for kernels that use randomness.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    pools: PoolArgs,
    #[arg(value_enum)]
    program: Program,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_parser = parse_op)]
    op: BenchOp,
    #[arg(long, value_parser = parse_mode)]
    mode: BenchMode,
    #[arg(long, value_parser = parse_metric)]
    metric: Metric,
    /// Smallest message size in bytes.
    #[arg(long, default_value_t = 1)]
    min_size: u64,
    /// Largest message size in bytes.
    #[arg(long, default_value_t = 1 << 21)]
    max_size: u64,
    /// Timed repetitions per size.
    #[arg(long, default_value_t = 30)]
    reps: u32,
    /// Untimed repetitions before each timed loop.
    #[arg(long, default_value_t = 5)]
    warmup: u32,
    /// Overlapping operations per bandwidth window.
    #[arg(long, default_value_t = 64)]
    window: u32,
    /// Units to launch; all but the pair idle at a barrier.
    #[arg(long, default_value_t = 2)]
    units: u32,
    /// Origin and target unit ids.
    #[arg(long, num_args = 2, value_names = ["ORIGIN", "TARGET"], default_values_t = [0, 1])]
    pair: Vec<u32>,
    /// Print every transport operation to stderr.
    #[arg(long)]
    trace: bool,
    #[command(flatten)]
    pools: PoolArgs,
    /// CSV output path; the fit summary lands next to it as `.fit.txt`.
    #[arg(long)]
    out: PathBuf,
}

fn parse_op(s: &str) -> Result<BenchOp, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn parse_mode(s: &str) -> Result<BenchMode, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn parse_metric(s: &str) -> Result<Metric, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Run(args) => run(args),
        Command::Bench(args) => run_bench(args),
    }
}

fn run(args: RunArgs) -> anyhow::Result<()> {
    let config = args.pools.apply(
        RuntimeConfig::new(args.units)
            .with_trace(args.trace)
            .with_seed(args.seed),
    );
    let statuses = match args.program {
        Program::Hello => pgas_core::launch(config, programs::hello),
        Program::Ring => pgas_core::launch(config, programs::ring),
        Program::Lockdemo => pgas_core::launch(config, programs::lock_demo),
        Program::Colldemo => pgas_core::launch(config, programs::collectives_demo),
    }
    .context("run failed")?;
    println!("statuses: {statuses:?}");
    Ok(())
}

fn run_bench(args: BenchArgs) -> anyhow::Result<()> {
    let mut spec = BenchSpec::new(args.op, args.mode, args.metric);
    spec.min_size = args.min_size;
    spec.max_size = args.max_size;
    spec.reps = args.reps;
    spec.warmup = args.warmup;
    spec.window = args.window;
    if args.pair.len() != 2 {
        bail!("--pair wants exactly two unit ids");
    }
    spec.pair = (args.pair[0], args.pair[1]);

    let config = args
        .pools
        .apply(RuntimeConfig::new(args.units).with_trace(args.trace));
    let report = bench::run_bench(&config, &spec).context("benchmark failed")?;
    bench::emit_report(&report.series, Some(&report.fit), &args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;

    println!(
        "{} {} {}: {} sizes x 2 layers -> {}",
        spec.op.as_str(),
        spec.mode.as_str(),
        spec.metric.as_str(),
        spec.sizes().len(),
        args.out.display()
    );
    print!("{}", report.fit);
    Ok(())
}

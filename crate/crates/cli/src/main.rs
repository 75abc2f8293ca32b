use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use rocrs::harness::{
    generate_instance, parse_json, read_json, run_experiment, ExperimentConfig, ExperimentKind,
    GeneratorSpec, InstanceSource,
};

/// Random-order contention resolution experiments.
///
/// Exit status: 0 when every bound check passes, 1 when some check fails,
/// 2 on any error.
#[derive(Parser, Debug)]
#[command(name = "rocrs", version)]
struct Cli {
    /// Master seed; trial i draws from a stream derived from (seed, i).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Monte-Carlo trials.
    #[arg(long, global = true, default_value_t = 100_000)]
    trials: u64,
    /// Output directory for experiments, output file for `generate`.
    /// Without it the report (or instance) goes to stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (defaults to all cores). Results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true, default_value_t = 0.1)]
    eps: f64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Acceptance probabilities of the contention resolution scheme.
    Crs(Source),
    /// Revenue of the sequential posted-price mechanism.
    Auction(Source),
    /// Stochastic k-set packing.
    Packing(Source),
    /// Submodular stochastic probing.
    Probing {
        #[command(flatten)]
        source: Source,
        /// Probe without the marginal-gain filter.
        #[arg(long)]
        no_filter: bool,
        /// Greedy steps when the instance has no fractional point.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Measured continuous greedy against the exhaustive optimum.
    Greedy {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Scheme run with traces: martingale, blocking frequencies and the
    /// trace relation.
    Diagnostics(Source),
    /// Write a random instance from a generator spec.
    Generate {
        /// Generator spec as inline JSON or a path to a JSON file.
        #[arg(long)]
        spec: String,
    },
}

#[derive(Args, Debug)]
struct Source {
    /// Instance file.
    #[arg(
        long,
        conflicts_with = "generate",
        required_unless_present = "generate"
    )]
    instance: Option<PathBuf>,
    /// Generator spec (inline JSON or a path) used instead of a file; the
    /// instance is generated with --seed.
    #[arg(long)]
    generate: Option<String>,
}

fn read_spec(arg: &str) -> anyhow::Result<GeneratorSpec> {
    let trimmed = arg.trim_start();
    let spec = if trimmed.starts_with('{') {
        parse_json(trimmed, "--spec")?
    } else {
        read_json(Path::new(arg))?
    };
    Ok(spec)
}

fn source(s: &Source, seed: u64) -> anyhow::Result<InstanceSource> {
    match (&s.instance, &s.generate) {
        (Some(p), None) => Ok(InstanceSource::Path(p.clone())),
        (None, Some(g)) => Ok(InstanceSource::Generator {
            spec: read_spec(g)?,
            seed,
        }),
        _ => bail!("give exactly one of --instance and --generate"),
    }
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let (kind, src, gain_filter, steps) = match &cli.command {
        Command::Generate { spec } => {
            let inst = generate_instance(&read_spec(spec)?, cli.seed)?;
            let json = inst.to_json();
            match &cli.out {
                Some(path) => std::fs::write(path, json)
                    .with_context(|| format!("writing {}", path.display()))?,
                None => print!("{json}"),
            }
            return Ok(true);
        }
        Command::Crs(s) => (ExperimentKind::Crs, s, true, None),
        Command::Auction(s) => (ExperimentKind::Auction, s, true, None),
        Command::Packing(s) => (ExperimentKind::Packing, s, true, None),
        Command::Diagnostics(s) => (ExperimentKind::Diagnostics, s, true, None),
        Command::Probing {
            source,
            no_filter,
            steps,
        } => (ExperimentKind::Probing, source, !no_filter, *steps),
        Command::Greedy { source, steps } => (ExperimentKind::Greedy, source, true, *steps),
    };
    let mut config = ExperimentConfig::new(kind, source(src, cli.seed)?);
    config.trials = cli.trials;
    config.seed = cli.seed;
    config.eps = cli.eps;
    config.out = cli.out.clone();
    config.jobs = cli.jobs;
    config.gain_filter = gain_filter;
    config.steps = steps;

    let outcome = run_experiment(&config)?;
    match &cli.out {
        Some(dir) => {
            for r in outcome.failures() {
                eprintln!(
                    "FAIL {} {}: estimate {:.6} (stderr {:.6}) vs bound {:.6}",
                    r.metric,
                    r.target,
                    r.estimate,
                    r.stderr,
                    r.bound.unwrap_or(f64::NAN)
                );
            }
            eprintln!(
                "{}: {} rows, {} failed, reports in {}",
                kind.name(),
                outcome.rows.len(),
                outcome.failures().len(),
                dir.display()
            );
        }
        None => print!("{}", outcome.report_csv()),
    }
    Ok(outcome.passed())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

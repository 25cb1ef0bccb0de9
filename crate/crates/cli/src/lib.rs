//! The `lexsig` command line: one subcommand per pipeline stage, bound by a
//! TOML configuration whose keys can all be overridden as `--dotted.key value`.

pub mod config;
pub mod error;
pub mod layout;
pub mod stages;
pub mod stamp;
pub mod svg;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use lexsig::synth::{generate, SynthConfig};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::stages::Run;

#[derive(Debug, Parser)]
#[command(
    name = "lexsig",
    version,
    about = "Distributional signatures of word learning over language-model checkpoints",
    after_help = "Any configuration key can be overridden with --<section>.<key> <value>, e.g. --sample.m_pos 50."
)]
struct Cli {
    /// Only print warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the bundled synthetic corpora, targets and norms.
    Synth {
        /// Directory to write into.
        #[arg(long, default_value = "data/synthetic")]
        out: PathBuf,
        /// Generator seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Sample positive, negative and marginal contexts for every target word.
    Sample(RunArgs),
    /// Score every sampled (word, context) pair at every checkpoint.
    Score(RunArgs),
    /// Compute the signature estimators from the scores.
    Signatures(RunArgs),
    /// Smooth trajectories and extract ages of acquisition.
    Aoa(RunArgs),
    /// Compare with child norms and write the report.
    Analyze(RunArgs),
    /// Run every stage in order.
    Run(RunArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// TOML configuration file; relative paths inside it resolve against its directory.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Run a single seed (overrides `seeds`).
    #[arg(long)]
    seed: Option<u64>,
    /// Convergence tolerance (overrides `aoa.epsilon`).
    #[arg(long)]
    epsilon: Option<f64>,
    /// Worker threads (overrides `workers`).
    #[arg(long)]
    workers: Option<usize>,
}

impl RunArgs {
    fn config(&self, overrides: &[(String, String)]) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => config::load(path, overrides)?,
            None => RunConfig::default().apply_overrides(overrides)?,
        };
        if let Some(dir) = &self.output_dir {
            cfg.output_dir = dir.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seeds = vec![seed];
        }
        if let Some(eps) = self.epsilon {
            cfg.aoa.epsilon = eps;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        Ok(cfg)
    }
}

/// `(dotted.key, value)` pairs taken from the command line.
type Overrides = Vec<(String, String)>;

/// Pulls `--a.b value` and `--a.b=value` out of `args`; everything else is
/// left for clap.
fn split_overrides(args: Vec<OsString>) -> Result<(Vec<OsString>, Overrides)> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let key = arg.to_str().and_then(|s| s.strip_prefix("--")).filter(|k| {
            let name = k.split('=').next().unwrap_or("");
            name.contains('.') && !name.starts_with('.')
        });
        match key {
            Some(k) => match k.split_once('=') {
                Some((name, value)) => overrides.push((name.to_owned(), value.to_owned())),
                None => {
                    let value = it
                        .next()
                        .and_then(|v| v.into_string().ok())
                        .ok_or_else(|| CliError::usage(format!("--{k} needs a value")))?;
                    overrides.push((k.to_owned(), value));
                }
            },
            None => rest.push(arg),
        }
    }
    Ok((rest, overrides))
}

fn init_logging(quiet: bool) {
    let level = if quiet { "warn" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .format_target(false)
        .try_init();
}

fn dispatch(command: Command, overrides: &[(String, String)]) -> Result<()> {
    let (args, stage) = match command {
        Command::Synth { out, seed } => {
            if !overrides.is_empty() {
                return Err(CliError::usage("synth takes no configuration overrides"));
            }
            let mut cfg = SynthConfig::default();
            if let Some(s) = seed {
                cfg.seed = s;
            }
            generate(&cfg).write_to(&out)?;
            println!("wrote synthetic data to {}", out.display());
            return Ok(());
        }
        Command::Sample(a) => (a, "sample"),
        Command::Score(a) => (a, "score"),
        Command::Signatures(a) => (a, "signatures"),
        Command::Aoa(a) => (a, "aoa"),
        Command::Analyze(a) => (a, "analyze"),
        Command::Run(a) => (a, "run"),
    };
    let run = Run::new(args.config(overrides)?)?;
    match stage {
        "sample" => {
            let s = stages::run_sample(&run)?;
            println!("sampled {} words ({} excluded)", s.retained, s.excluded.len());
        }
        "score" => {
            let s = stages::run_score(&run)?;
            println!("scored {} records over {} checkpoints", s.records, s.checkpoints);
        }
        "signatures" => {
            let s = stages::run_signatures(&run)?;
            println!(
                "computed {} signature values ({} kinds skipped)",
                s.values,
                s.skipped.len()
            );
        }
        "aoa" => {
            let s = stages::run_aoa(&run)?;
            println!(
                "{} of {} trajectories converged; {} aggregate AoA values",
                s.converged, s.trajectories, s.aggregated
            );
        }
        _ => {
            let s = if stage == "run" {
                stages::run_all(&run)?
            } else {
                stages::run_analyze(&run)?
            };
            println!(
                "report for {} words in {}; {} of {} regressions fitted",
                s.words,
                run.layout.report("").display(),
                s.regressions - s.regression_errors,
                s.regressions
            );
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run_cli<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let (args, overrides) = match split_overrides(args) {
        Ok(split) => split,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    init_logging(cli.quiet);
    match dispatch(cli.command, &overrides) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

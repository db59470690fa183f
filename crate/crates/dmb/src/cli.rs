//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 for usage errors (including missing input
//! files), 2 for failures while running.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use dmb_core::bridge::exact_rate_matrix;
use dmb_core::ProbVector;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::{run, selftest};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "dmb", version, about = "Discrete Markov bridge training and sampling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train from a config file, writing metrics and checkpoints.
    Train {
        config: PathBuf,
        /// Continue from this checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Generate samples from a checkpoint.
    Sample {
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 16)]
        count: usize,
        /// Euler steps; defaults to the run's `sampler_steps`.
        #[arg(long)]
        steps: Option<usize>,
        /// Destination file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Defaults to the run's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Estimate the ELBO of a checkpoint on its training data.
    Eval {
        checkpoint: PathBuf,
        /// Defaults to the run's `elbo_mc_samples`.
        #[arg(long)]
        mc_samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Solve for the rate matrix carrying q onto p in unit time.
    Solve { p_file: PathBuf, q_file: PathBuf },
    /// Run the built-in oracle and invariant checks.
    Selftest,
}

enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

fn require_file(path: &Path) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("no such file: {}", path.display())))
    }
}

fn read_probs(path: &Path) -> Result<ProbVector, Failure> {
    let text = std::fs::read_to_string(path)?;
    let values = text
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| anyhow::anyhow!("{}: `{t}` is not a number", path.display())))
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok(ProbVector::new(values)?)
}

fn fmt_list<T: std::fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn execute(command: Command, out: &mut dyn Write) -> Result<(), Failure> {
    match command {
        Command::Train { config, resume } => {
            require_file(&config)?;
            if let Some(r) = &resume {
                require_file(r)?;
            }
            let cfg = RunConfig::load(&config)?;
            let outcome = run::train(&cfg, resume.as_deref())?;
            for r in &outcome.records {
                writeln!(out, "{}", r.csv_row())?;
            }
            writeln!(out, "wrote {}", cfg.output_dir.display())?;
        }
        Command::Sample { checkpoint, count, steps, out: dest, seed } => {
            require_file(&checkpoint)?;
            let ckpt = Checkpoint::load(&checkpoint)?;
            let cfg = ckpt.config()?;
            let samples = run::sample(&ckpt, count, steps.unwrap_or(cfg.sampler_steps), seed.unwrap_or(cfg.seed))?;
            let text = run::render_samples(&ckpt, &samples);
            match dest {
                Some(path) => run::write_text(&path, &text)?,
                None => out.write_all(text.as_bytes())?,
            }
        }
        Command::Eval { checkpoint, mc_samples, seed } => {
            require_file(&checkpoint)?;
            let ckpt = Checkpoint::load(&checkpoint)?;
            let cfg = ckpt.config()?;
            let report = run::evaluate(&ckpt, mc_samples.unwrap_or(cfg.elbo_mc_samples), seed.unwrap_or(cfg.seed))?;
            writeln!(out, "j_score = {}", report.j_score)?;
            writeln!(out, "kl_term = {}", report.kl_term)?;
            writeln!(out, "total_nats = {}", report.total_nats)?;
            writeln!(out, "bits_per_dim = {}", report.bits_per_dim)?;
            writeln!(out, "mc_std_error = {}", report.mc_std_error)?;
        }
        Command::Solve { p_file, q_file } => {
            require_file(&p_file)?;
            require_file(&q_file)?;
            let (p, q) = (read_probs(&p_file)?, read_probs(&q_file)?);
            let rate = exact_rate_matrix(&p, &q)?;
            let evolved = rate.evolve_slice(q.as_slice(), 1.0)?;
            let residual = evolved.iter().zip(p.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            writeln!(out, "perm = {}", fmt_list(rate.perm()))?;
            writeln!(out, "a = {}", fmt_list(rate.params()))?;
            writeln!(out, "residual = {residual:e}")?;
        }
        Command::Selftest => {
            let checks = selftest::run();
            for c in &checks {
                let tag = if c.passed() { "ok" } else { "FAILED" };
                writeln!(out, "{tag:6} {} (worst {:e}, limit {:e})", c.name, c.worst, c.threshold)?;
            }
            if !checks.iter().all(selftest::Check::passed) {
                return Err(Failure::Runtime(anyhow::anyhow!("selftest failed")));
            }
        }
    }
    Ok(())
}

/// Parses `argv` (program name first) and runs it; returns the exit code.
pub fn main_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            let _ = writeln!(err, "error: {e:#}");
            EXIT_RUNTIME
        }
    }
}

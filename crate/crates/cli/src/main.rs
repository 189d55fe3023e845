use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use epo::experiment::{self, RunConfig};

#[derive(Parser)]
#[command(name = "epo", version, about = "Exchange policy optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of a configuration.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Inclusive range `a..b` or a comma-separated list.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a saved policy checkpoint.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Defaults to the checkpoint's directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the analytic testbed suite against its oracle fixtures.
    Testbed {
        #[arg(long)]
        fixtures: Option<PathBuf>,
    },
}

fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().with_context(|| format!("bad seed range {text:?}"))?;
        let b: u64 = b.trim().trim_start_matches('=').parse().with_context(|| format!("bad seed range {text:?}"))?;
        if b < a {
            bail!("empty seed range {text:?}");
        }
        return Ok((a..=b).collect());
    }
    text.split(',')
        .map(|s| s.trim().parse().with_context(|| format!("bad seed {s:?}")))
        .collect()
}

fn jobs() -> Result<usize> {
    match std::env::var(experiment::JOBS_VAR) {
        Ok(v) => {
            let n: usize = v.parse().with_context(|| format!("{} must be a positive integer", experiment::JOBS_VAR))?;
            if n == 0 {
                bail!("{} must be a positive integer", experiment::JOBS_VAR);
            }
            Ok(n)
        }
        Err(_) => Ok(1),
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run { config, seeds, out } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(s) = seeds {
                cfg.seeds = parse_seeds(&s)?;
            }
            if let Ok(dir) = std::env::var(experiment::OUT_DIR_VAR) {
                cfg.out_dir = dir.into();
            }
            if let Some(dir) = out {
                cfg.out_dir = dir;
            }
            let report = experiment::run_experiment(&cfg, jobs()?)?;
            for s in &report.seeds {
                match &s.error {
                    Some(e) => println!("seed {}: {} ({e})", s.seed, s.status),
                    None => println!(
                        "seed {}: {} after {} outer iterations, working set max {}",
                        s.seed, s.status, s.outer_iterations, s.max_working_set_size
                    ),
                }
            }
            println!("outputs in {}", report.out_dir.display());
            Ok(if report.all_failed() { ExitCode::FAILURE } else { ExitCode::SUCCESS })
        }
        Command::Evaluate { checkpoint, config, out, seed } => {
            let cfg = RunConfig::load(&config)?;
            let out = out.unwrap_or_else(|| checkpoint.parent().map(PathBuf::from).unwrap_or_default());
            let eval = experiment::evaluate_checkpoint(&checkpoint, &cfg, &out, seed)?;
            println!(
                "objective {:.6} +/- {:.6}, max violation {:.6}, greedy terminal fraction {:.3}",
                eval.objective, eval.objective_stderr, eval.max_violation, eval.greedy_terminal_fraction
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Testbed { fixtures } => {
            let reports = experiment::run_testbed_suite(fixtures.as_deref())?;
            let mut ok = true;
            for r in &reports {
                for c in &r.checks {
                    println!("{} {}: {} ({})", r.instance, c.name, if c.passed { "pass" } else { "FAIL" }, c.detail);
                }
                ok &= r.passed();
            }
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

//! `genbias` — probe language models for gendered continuations, score the
//! bias, and drive the mitigations, from one binary.
//!
//! Every subcommand works offline against the bundled toy model or a replay
//! file; the http backend talks to an OpenAI-style completion endpoint.
//! Exit codes: 0 success, 2 configuration error, 3 backend error, 4 data
//! error, 5 internal error.

mod backend;
mod commands;
mod config;
mod errors;
mod manifest;
mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::{
    AblateArgs, BuildProbesArgs, Ctx, EvalArgs, ReportArgs, RunArgs, SweepArgs, TuneArgs,
};
use crate::config::FileConfig;
use crate::errors::AppError;

#[derive(Debug, Parser)]
#[command(name = "genbias", version, about = "Gender-bias probing for text generators")]
struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Root folder for artifacts (default: artifacts).
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    /// Attribute lexicon TSV (default: the built-in pair list).
    #[arg(long, global = true, value_name = "FILE")]
    lexicon: Option<PathBuf>,
    /// Run seed; all randomness derives from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Parallel requests in flight (default: 4).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a probe set and write it as JSONL.
    BuildProbes(BuildProbesArgs),
    /// Generate continuations for a probe set and score attribute words.
    Run(RunArgs),
    /// Recompute a bias report from stored generations and scores.
    Eval(EvalArgs),
    /// Grid-search decoding settings and report per-cell bias.
    Sweep(SweepArgs),
    /// Run probes with the fairness instruction prefixed.
    GuideRun(RunArgs),
    /// Bias-tune the bundled toy model and report before/after.
    TuneToy(TuneArgs),
    /// Leave-one-out loss ablation on the toy model.
    Ablate(AblateArgs),
    /// Merge report artifacts into one table.
    Report(ReportArgs),
}

fn dispatch(cli: &Cli) -> Result<(), AppError> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let ctx = Ctx::resolve(
        file,
        cli.out_dir.clone(),
        cli.lexicon.clone(),
        cli.seed,
        cli.workers,
    )?;
    match &cli.command {
        Command::BuildProbes(args) => commands::build_probes(&ctx, args),
        Command::Run(args) => commands::run(&ctx, args, false),
        Command::Eval(args) => commands::eval(&ctx, args),
        Command::Sweep(args) => commands::sweep(&ctx, args),
        Command::GuideRun(args) => commands::run(&ctx, args, true),
        Command::TuneToy(args) => commands::tune_toy(&ctx, args),
        Command::Ablate(args) => commands::ablate(&ctx, args),
        Command::Report(args) => commands::report(&ctx, args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

//! `vqai`: dataset generation, segmentation, training, sampling,
//! evaluation, human rating and report rendering.

mod commands;
mod error;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use error::CliError;

#[derive(Parser)]
#[command(name = "vqai", version, about = "Causal image generation on a procedural microworld")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file of `key = value` lines, applied before the overrides.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Overrides as KEY=VALUE or --KEY VALUE.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "SETTINGS")]
    settings: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a microworld dataset with train, val and test splits.
    GenData(Common),
    /// Split a directory of frames into shots by inter-frame difference.
    Segment(Common),
    /// Train a guidance paradigm and write a checkpoint.
    Train {
        /// Start from the desk-scale preset (lr 5e-4, 2000 steps).
        #[arg(long)]
        desk: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Generate answer images from a checkpoint.
    Sample(Common),
    /// Score checkpoints on a test split and write the report.
    Evaluate(Common),
    /// Collect blinded plausibility judgments in the terminal.
    Rate(Common),
    /// Render report tables from evaluation results and judgments.
    Report(Common),
}

fn command() -> clap::Command {
    let mut cmd = Cli::command();
    for (name, help) in commands::help_texts() {
        cmd = cmd.mut_subcommand(name, |s| s.after_help(help));
    }
    cmd
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData(c) => commands::gen_data(c.config.as_deref(), &c.settings),
        Command::Segment(c) => commands::segment(c.config.as_deref(), &c.settings),
        Command::Train { desk, common } => commands::train(desk, common.config.as_deref(), &common.settings),
        Command::Sample(c) => commands::sample(c.config.as_deref(), &c.settings),
        Command::Evaluate(c) => commands::evaluate(c.config.as_deref(), &c.settings),
        Command::Rate(c) => commands::rate(c.config.as_deref(), &c.settings),
        Command::Report(c) => commands::report(c.config.as_deref(), &c.settings),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let matches = match command().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}

//! `microreg` command-line driver.

mod eval;
mod register;
mod synth;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Exit status for a valid but degraded registration.
const EXIT_DEGRADED: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "microreg", version, about = "Coarse-to-fine rigid point cloud registration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Register a source cloud onto a target cloud from putative matches.
    Register(register::RegisterArgs),
    /// Generate a seeded synthetic registration problem.
    Synth(synth::SynthArgs),
    /// Summarize a directory of registration reports.
    Eval(eval::EvalArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Register(args) => register::run(args),
        Command::Synth(args) => synth::run(args).map(|()| Outcome::Success),
        Command::Eval(args) => eval::run(args).map(|()| Outcome::Success),
    };
    match outcome {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::Degraded) => ExitCode::from(EXIT_DEGRADED),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// How a command that did not fail finished.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Degraded,
}

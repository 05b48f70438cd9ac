//! `sasreg`: simulate, train, register, evaluate and report.
//!
//! Exit codes: 0 ok, 1 internal, 2 usage, 3 invalid parameters, 4 I/O,
//! 5 data format, 6 checkpoint, 7 training divergence, 8 device.

mod commands;
mod exit;
mod figures;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use serde::Serialize;

use commands::{AblateArgs, BenchArgs, EvalArgs, Outcome, RegisterArgs, ReportArgs, SimulateArgs, TrainArgs};
use exit::{classify, fail, ExitClass};

#[derive(Debug, Parser)]
#[command(
    name = "sasreg",
    version,
    about = "Scene-appearance separation registration for bidirectional raster scans"
)]
struct Cli {
    /// Print the outcome as one JSON object on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset with ground truth.
    Simulate(SimulateArgs),
    /// Train a model from a TOML config and dotted overrides.
    Train(TrainArgs),
    /// Register frames with a checkpoint and write corrected frames.
    Register(RegisterArgs),
    /// Score registrations and write a metrics report.
    Eval(EvalArgs),
    /// Train and evaluate loss and encoder ablations.
    Ablate(AblateArgs),
    /// Time inference.
    Bench(BenchArgs),
    /// Tables and box plots from metrics reports.
    Report(ReportArgs),
}

#[derive(Debug, Serialize)]
struct CommandOutcome {
    exit_code: u8,
    artifacts_written: Vec<PathBuf>,
    summary: String,
}

/// Only the CPU backend exists.
fn check_device() -> Result<()> {
    match std::env::var("SASREG_DEVICE") {
        Ok(d) if !d.trim().eq_ignore_ascii_case("cpu") => Err(fail(
            ExitClass::Device,
            format!("SASREG_DEVICE={d:?} is not available; this build runs on cpu only"),
        )),
        _ => Ok(()),
    }
}

fn run(command: Command) -> Result<Outcome> {
    check_device()?;
    match command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Train(a) => commands::train_cmd(a),
        Command::Register(a) => commands::register(a),
        Command::Eval(a) => commands::eval_cmd(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Bench(a) => commands::bench(a),
        Command::Report(a) => commands::report(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(ExitClass::Usage.code())
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let json = cli.json;
    let (code, outcome) = match run(cli.command) {
        Ok(o) => (0, o),
        Err(e) => {
            let class = classify(&e);
            eprintln!("error ({}): {e:#}", class.name());
            (
                class.code(),
                Outcome {
                    artifacts: Vec::new(),
                    summary: format!("{e:#}"),
                },
            )
        }
    };
    if json {
        let out = CommandOutcome {
            exit_code: code,
            artifacts_written: outcome.artifacts,
            summary: outcome.summary,
        };
        println!("{}", serde_json::to_string(&out).expect("outcome serializes"));
    } else if code == 0 {
        println!("{}", outcome.summary);
    }
    ExitCode::from(code)
}

use std::io::Write;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{CommandFactory, Parser};
use serde_json::{json, Value};

mod args;
mod commands;

use args::{Cli, Command, EvalPlan, FileConfig, Globals, ReportPlan, SweepPlan, TrainPlan, UsageError};

/// Prints a JSON summary; a closed stdout is not an error.
fn emit(summary: &Value) {
    let text = serde_json::to_string_pretty(summary).expect("summary serializes");
    let _ = writeln!(std::io::stdout(), "{text}");
}

fn run(cli: &Cli) -> Result<Value> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let globals = Globals::resolve(cli, &file)?;
    if let Some(jobs) = globals.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global()?;
    }
    std::fs::create_dir_all(&globals.out)?;
    match &cli.command {
        Command::Train(a) => commands::train(&TrainPlan::resolve(a, &file, &globals)?, &globals),
        Command::Eval(a) => commands::eval(&EvalPlan::resolve(a, &file)?, &globals),
        Command::Report(a) => commands::report(&ReportPlan::resolve(a, &file)?, &globals),
        Command::Sweep(a) => {
            let outcome = commands::sweep(&SweepPlan::resolve(a, &file, &globals)?, &globals)?;
            emit(&outcome.summary);
            if !outcome.failures.is_empty() {
                bail!("{} sweep row(s) failed: {}", outcome.failures.len(), outcome.failures.join("; "));
            }
            Ok(Value::Null)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Value::Null) => ExitCode::SUCCESS,
        Ok(summary) => {
            emit(&summary);
            ExitCode::SUCCESS
        }
        Err(e) => {
            if let Some(u) = e.downcast_ref::<UsageError>() {
                Cli::command().error(clap::error::ErrorKind::ArgumentConflict, u.to_string()).print().ok();
            }
            let causes: Vec<String> = e.chain().map(ToString::to_string).collect();
            let summary = json!({ "status": "error", "command": cli.command.name(), "error": causes.join(": ") });
            eprintln!("{summary}");
            ExitCode::from(if e.downcast_ref::<UsageError>().is_some() { 2 } else { 1 })
        }
    }
}

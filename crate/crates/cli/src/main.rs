mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use commands::Invalid;

fn configure_threads() -> anyhow::Result<()> {
    let Ok(value) = std::env::var("MELC_GRAPH_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Invalid(format!("MELC_GRAPH_THREADS must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Ingest(a) => commands::ingest(a),
        Command::BuildGraph(a) => commands::build_graph_cmd(a),
        Command::Reduce(a) => commands::reduce_cmd(a),
        Command::Train(a) => commands::train_cmd(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Search(a) => commands::search(a),
        Command::Plot(a) => commands::plot(a),
        Command::Report(a) => commands::report(a),
    }
}

fn is_validation(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.downcast_ref::<Invalid>().is_some()
            || c.downcast_ref::<melc_core::Error>().is_some_and(|m| m.is_validation())
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_validation(&e) { 1 } else { 2 })
        }
    }
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use crdt_workbench::model::{Approach, DataType, Query};
use crdt_workbench::runner;
use crdt_workbench::scenario::Scenario;

/// Run CRDT scenarios over a simulated network.
#[derive(Parser)]
#[command(name = "crdtw", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and print its report.
    Run {
        file: PathBuf,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the report here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Include the event trace before the report.
        #[arg(long)]
        trace: bool,
    },
    /// Run a scenario under several approaches and compare.
    Compare {
        file: PathBuf,
        /// Comma-separated; defaults to every approach the datatype has.
        #[arg(long, value_delimiter = ',')]
        approaches: Vec<Approach>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// List datatypes with their approaches, operations and queries.
    ListDatatypes,
}

const FAILED: u8 = 1;
const USAGE: u8 = 2;

fn load(path: &Path, seed: Option<u64>) -> Result<(Scenario, String), ExitCode> {
    let text = fs::read_to_string(path).map_err(|e| {
        error!("cannot read {}: {e}", path.display());
        ExitCode::from(USAGE)
    })?;
    let mut scenario: Scenario = text.parse().map_err(|e| {
        error!("{}: {e}", path.display());
        ExitCode::from(USAGE)
    })?;
    if let Some(s) = seed {
        scenario.header.net.seed = s;
    }
    let name = path.file_stem().map_or_else(|| "scenario".to_owned(), |s| s.to_string_lossy().into_owned());
    Ok((scenario, name))
}

fn run(file: &Path, seed: Option<u64>, out: Option<&Path>, trace: bool) -> Result<ExitCode, ExitCode> {
    let (scenario, name) = load(file, seed)?;
    let result = runner::run(&scenario, &name);
    let mut text = String::new();
    if trace {
        text.push_str(&result.trace_text());
    }
    text.push_str(&result.report.render());
    match out {
        Some(p) => fs::write(p, text).map_err(|e| {
            error!("cannot write {}: {e}", p.display());
            ExitCode::from(USAGE)
        })?,
        None => print!("{text}"),
    }
    Ok(if result.report.passed() { ExitCode::SUCCESS } else { ExitCode::from(FAILED) })
}

fn compare(file: &Path, approaches: &[Approach], seed: Option<u64>) -> Result<ExitCode, ExitCode> {
    let (scenario, name) = load(file, seed)?;
    let approaches = match approaches {
        [] => scenario.header.datatype.approaches().to_vec(),
        a => a.to_vec(),
    };
    let comparison = runner::compare(&scenario, &name, &approaches).map_err(|e| {
        error!("{e}");
        ExitCode::from(USAGE)
    })?;
    print!("{}", comparison.table());
    if comparison.passed() {
        Ok(ExitCode::SUCCESS)
    } else {
        if !comparison.divergences.is_empty() {
            error!("approaches disagree");
        }
        Ok(ExitCode::from(FAILED))
    }
}

fn list_datatypes() {
    for dt in DataType::ALL {
        let approaches: Vec<&str> = dt.approaches().iter().map(|a| a.name()).collect();
        let queries: Vec<String> = [
            Query::Value,
            Query::Elements,
            Query::Contains("<e>".into()),
            Query::Read,
            Query::Ahead,
            Query::Entries,
            Query::Winner,
            Query::Late,
        ]
        .iter()
        .filter(|q| dt.answers(q))
        .map(ToString::to_string)
        .collect();
        println!("{dt}");
        println!("  approaches: {}", approaches.join(", "));
        println!("  operations: {}", dt.operations());
        println!("  queries: {}", queries.join(", "));
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Cmd::Run { file, seed, out, trace } => run(&file, seed, out.as_deref(), trace),
        Cmd::Compare { file, approaches, seed } => compare(&file, &approaches, seed),
        Cmd::ListDatatypes => {
            list_datatypes();
            Ok(ExitCode::SUCCESS)
        }
    };
    outcome.unwrap_or_else(|code| code)
}

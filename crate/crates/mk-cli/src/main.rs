//! `mk`: the majority-kernels experiment runner.
//!
//! Subcommands: `run` (train + summarize), `tune` (learning-rate grid),
//! `diagnose` (theory checks as JSON), `fetch-data` (CIFAR-10 corpus), and
//! `report` (aggregate summaries). Exit codes: 0 success, 2 invalid
//! configuration with a field-level message, 1 runtime failure.

mod artifacts;
mod config;
mod diagnose;
mod fetch;
mod report;
mod run;
mod tune;

use clap::Parser;

#[derive(Parser)]
#[command(name = "mk", version, about = "Majority-kernels experiment runner")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Subcommand)]
enum Cmd {
    /// Train an algorithm across replicates and summarize test accuracy.
    Run(config::Overrides),
    /// Sweep the learning-rate grid, pick by validation accuracy, report
    /// the chosen rate's test accuracy.
    Tune(config::Overrides),
    /// Numerical theory checks, reported as JSON.
    Diagnose(diagnose::DiagnoseArgs),
    /// Download (or synthesize) the CIFAR-10 binary corpus.
    FetchData(fetch::FetchArgs),
    /// Aggregate summaries from run directories into one table.
    Report(report::ReportArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Run(ov) => run::cmd_run(ov),
        Cmd::Tune(ov) => tune::cmd_tune(ov),
        Cmd::Diagnose(args) => diagnose::cmd_diagnose(args),
        Cmd::FetchData(args) => fetch::cmd_fetch(args),
        Cmd::Report(args) => report::cmd_report(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

//! `moe`: simulate, fit, compare and diagnose mixture-of-experts models.
//!
//! Exit codes: 0 success, 1 numerical failure, 2 input error. Set `MOE_LOG`
//! (e.g. `MOE_LOG=info`) for progress messages on stderr.

mod config;
mod data;
mod diagnose;
mod error;
mod fit;
mod output;
mod paramsfile;
mod select;
mod simulate;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "moe", version, about = "Mixture-of-experts estimation and identifiability diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate data from a preset (gaussian-gating, binomial-t2, binomial-t5,
    /// regression-design1, regression-design2) or a parameter file
    Simulate(RunConfig),
    /// Fit one model by EM or MCMC
    Fit(RunConfig),
    /// Compare candidate models by BIC, AICM or marginal likelihood
    Select(RunConfig),
    /// Identifiability conditions and posterior geometry diagnostics
    Diagnose(RunConfig),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MOE_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Simulate(c) => simulate::cmd_simulate(c),
        Command::Fit(c) => fit::cmd_fit(c),
        Command::Select(c) => select::cmd_select(c),
        Command::Diagnose(c) => diagnose::cmd_diagnose(c),
    };
    match result {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

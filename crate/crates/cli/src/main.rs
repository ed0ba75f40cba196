use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use nsgoh_cli::runner::{run_to_dir, Mode, Overrides};
use nsgoh_cli::scenario::parse_scenario;

#[derive(Parser)]
#[command(name = "nsgoh", version, about = "Necessary-condition checks and expansion experiments for control-affine scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Check,
    Expand,
    Mollify,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write report.json, metadata.json and CSV tables.
    Run {
        scenario: PathBuf,
        #[arg(long, value_enum, default_value = "check")]
        mode: ModeArg,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        tol: Option<f64>,
    },
}

fn execute(cli: Cli) -> anyhow::Result<u8> {
    let Command::Run { scenario, mode, out, seed, tol } = cli.command;
    let text = std::fs::read_to_string(&scenario).with_context(|| format!("reading {}", scenario.display()))?;
    let sc = parse_scenario(&text).with_context(|| format!("loading {}", scenario.display()))?;
    let mode = match mode {
        ModeArg::Check => Mode::Check,
        ModeArg::Expand => Mode::Expand,
        ModeArg::Mollify => Mode::Mollify,
    };
    let rep = run_to_dir(&sc, mode, &Overrides { seed, tol }, &out)?;
    if let Some(c) = &rep.check {
        println!("{}: {}", sc.name, c.verdict);
    } else {
        println!("{}: {} finished, {} experiment error(s)", sc.name, mode.name(), rep.experiment_errors);
    }
    Ok(if rep.experiment_errors > 0 {
        1
    } else if rep.violations {
        2
    } else {
        0
    })
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

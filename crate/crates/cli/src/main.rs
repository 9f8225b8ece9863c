use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use lbras_cli::{cmd_check, cmd_example, cmd_falsify, cmd_simulate, error_payload, Outcome, Scenario};

#[derive(Parser)]
#[command(name = "lbras", version, about = "Hybrid system simulation and certificate checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// key=value, repeatable. Dotted keys address scenario tables.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate from the scenario's initial state.
    Simulate(Common),
    /// Run a checker and write report.json.
    Check {
        #[command(flatten)]
        common: Common,
        /// ras | stability-safety | single-v | pair-vb | invariance
        #[arg(long)]
        mode: String,
    },
    /// Search for a counterexample to one certificate condition.
    Falsify {
        #[command(flatten)]
        common: Common,
        /// Condition id, e.g. i-flow, iv-jump, single-flow.
        #[arg(long)]
        condition: String,
    },
    /// Run the full pipeline for a named study.
    Example {
        /// bouncing-ball | moore-greitzer
        name: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

fn load(c: &Common) -> Result<Scenario> {
    let text = std::fs::read_to_string(&c.scenario)
        .with_context(|| format!("reading {}", c.scenario.display()))?;
    let mut sc = Scenario::from_toml(&text, &c.overrides)?;
    if c.seed.is_some() {
        sc.seed = c.seed;
    }
    Ok(sc)
}

fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Simulate(c) => cmd_simulate(&load(&c)?, &c.out),
        Command::Check { common, mode } => cmd_check(&load(&common)?, &mode, &common.out),
        Command::Falsify { common, condition } => {
            cmd_falsify(&load(&common)?, &condition, &common.out)
        }
        Command::Example { name, out, seed, mut overrides } => {
            if let Some(s) = seed {
                overrides.push(format!("seed={s}"));
            }
            cmd_example(&name, &overrides, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let payload = serde_json::json!({
                "error": "Usage",
                "message": e.to_string().trim(),
                "exit_code": lbras_cli::EXIT_INPUT,
            });
            eprintln!("{payload}");
            return ExitCode::from(lbras_cli::EXIT_INPUT as u8);
        }
    };
    match run(cli) {
        Ok(o) => {
            println!("{}", o.summary);
            ExitCode::from(o.code as u8)
        }
        Err(e) => {
            let (code, payload) = error_payload(&e);
            eprintln!("{payload}");
            ExitCode::from(code as u8)
        }
    }
}

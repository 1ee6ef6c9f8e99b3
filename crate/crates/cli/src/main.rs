use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use treepolicy_cli::config::SEED_ENV;
use treepolicy_cli::{parse_config, run_pipeline, CliError, Command, Overrides};

#[derive(Parser)]
#[command(name = "treepolicy", version, about = "Tree policies for ventilator triage")]
struct Args {
    /// TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Cohort file (overrides `cohort`).
    #[arg(long, global = true)]
    cohort: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<String>,
    /// Death probability of an excluded patient.
    #[arg(long, global = true)]
    p: Option<String>,
    /// Ventilator capacity for `simulate`, an integer or "inf".
    #[arg(long, global = true)]
    capacity: Option<String>,
    #[arg(long, global = true)]
    replications: Option<String>,
    /// Any config key, e.g. `--set costs.C=50`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic cohort.
    GenData,
    /// Estimate the triage MDP from the cohort.
    Estimate,
    /// Fit a tree policy on the estimated MDP.
    Solve,
    /// Simulate each guideline at one capacity.
    Simulate {
        /// Also write a JSON-lines event log of the first replication.
        #[arg(long)]
        trace: bool,
    },
    /// Simulate every guideline over a list of capacities.
    Sweep {
        /// Also sweep the cost parameters (C, rho, gamma).
        #[arg(long)]
        sensitivity: bool,
    },
    /// Render existing artifacts as text tables.
    Report,
}

fn run(args: Args) -> Result<(), CliError> {
    let mut sets = Vec::new();
    for s in &args.sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set {s:?}: expected KEY=VALUE")))?;
        sets.push((k.trim().to_string(), v.trim().to_string()));
    }
    let quoted = |p: &PathBuf| format!("{:?}", p.display().to_string());
    for (key, v) in [
        ("output_dir", args.out.as_ref().map(quoted)),
        ("cohort", args.cohort.as_ref().map(quoted)),
        ("seed", args.seed),
        ("simulation.p", args.p),
        ("simulation.capacity", args.capacity),
        ("simulation.replications", args.replications),
    ] {
        if let Some(v) = v {
            sets.push((key.to_string(), v));
        }
    }
    let overrides = Overrides {
        env_seed: std::env::var(SEED_ENV).ok(),
        sets,
    };
    let cfg = parse_config(args.config.as_deref(), &overrides)?;
    let cmd = match args.command {
        Cmd::GenData => Command::GenData,
        Cmd::Estimate => Command::Estimate,
        Cmd::Solve => Command::Solve,
        Cmd::Simulate { trace } => Command::Simulate { trace },
        Cmd::Sweep { sensitivity } => Command::Sweep { sensitivity },
        Cmd::Report => Command::Report,
    };
    let out = run_pipeline(&cfg, cmd)?;
    for w in &out.warnings {
        eprintln!("warning: {w}");
    }
    print!("{}", out.text);
    for p in &out.written {
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

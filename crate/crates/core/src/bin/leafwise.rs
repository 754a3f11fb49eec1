use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use leafwise::scenario::{run, Command, Overrides};

/// Λ-coincidence and Λ-Lefschetz numbers of foliation maps on flat tori.
#[derive(Parser, Debug)]
#[command(name = "leafwise", version)]
struct Cli {
    /// What to compute.
    #[arg(value_enum)]
    command: Command,
    /// Scenario file (JSON).
    scenario: PathBuf,
    /// Seed for the perturbation draws.
    #[arg(long)]
    seed: Option<u64>,
    /// Seed grid points per axis.
    #[arg(long)]
    grid: Option<usize>,
    /// Tracing step.
    #[arg(long)]
    step: Option<f64>,
    /// Rank tolerance for point classification.
    #[arg(long)]
    tol_rank: Option<f64>,
    /// Perturbation draws before giving up.
    #[arg(long)]
    max_attempts: Option<usize>,
    /// Output directory for report.json and components.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let overrides = Overrides {
        seed: cli.seed,
        grid: cli.grid,
        step: cli.step,
        tol_rank: cli.tol_rank,
        max_attempts: cli.max_attempts,
        out: cli.out,
    };
    let outcome = run(cli.command, &cli.scenario, &overrides);
    if outcome.exit_code == 0 {
        println!("{}", outcome.message);
    } else {
        eprintln!("error: {}", outcome.message);
    }
    if let Some(p) = &outcome.report {
        println!("report: {}", p.display());
    }
    ExitCode::from(outcome.exit_code as u8)
}

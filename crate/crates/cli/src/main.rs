use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use prmix_cli::{run, Command, ExitKind, RunConfig};

#[derive(Parser)]
#[command(name = "prmix", version, about = "Predictive recursion for finite mixtures")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Args)]
struct Flags {
    /// TOML file with the same keys as the flags; its values take precedence.
    #[arg(long)]
    config: Option<PathBuf>,

    #[command(flatten)]
    run: RunConfig,
}

#[derive(Subcommand)]
enum Sub {
    /// Run PR once on a fixed support and write the estimate.
    Fit(Flags),
    /// Choose a support from a grid (exhaustive or simulated annealing), then refit.
    Select(Flags),
    /// Convergence-rate experiment over synthetic scenarios.
    BenchRate(Flags),
    /// Oracle, stability and stochastic-approximation checks on a scenario.
    Diagnose(Flags),
    /// Draw a synthetic data set from a scenario.
    Simulate(Flags),
    /// Render SVG figures from an earlier run directory.
    Plot(Flags),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, flags) = match cli.command {
        Sub::Fit(f) => (Command::Fit, f),
        Sub::Select(f) => (Command::Select, f),
        Sub::BenchRate(f) => (Command::BenchRate, f),
        Sub::Diagnose(f) => (Command::Diagnose, f),
        Sub::Simulate(f) => (Command::Simulate, f),
        Sub::Plot(f) => (Command::Plot, f),
    };
    match run(cmd, &flags.run, flags.config.as_deref()) {
        Ok(summary) => {
            println!("wrote {} files to {}", summary.outputs.len(), summary.out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            let kind = ExitKind::of(&e);
            if e.downcast_ref::<ExitKind>().is_some() {
                eprintln!("prmix: {e:#}");
            } else {
                eprintln!("prmix: {kind}: {e:#}");
            }
            ExitCode::from(kind.code() as u8)
        }
    }
}

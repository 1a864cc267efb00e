use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use claimrisk::pipeline::{run, Command, Overrides, RunContext};

#[derive(Parser)]
#[command(name = "claimrisk", version, about = "Weekly claim prediction and joint tail risk across climate scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// Pipeline configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output root; the run directory is created beneath it.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Scenario weekly precipitation CSV, overriding the config.
    #[arg(long, global = true)]
    scenarios: Option<PathBuf>,

    /// Suppress progress messages.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Generate a synthetic city: daily control file and scenario weeks.
    Simulate,
    /// Aggregate the daily file to weeks and validate scenario input.
    Ingest,
    /// Train the network for the selected candidate model.
    Train,
    /// Compare the four candidate models by held-out RMSE.
    Select,
    /// Predict weekly claims for the control period and every scenario.
    Predict,
    /// Fit marginal distributions to each predicted series.
    FitMarginals,
    /// Estimate the Gumbel copula across scenarios.
    FitCopula,
    /// Compute the joint exceedance curve.
    Risk,
    /// Emit density curves, tables and the optional city comparison.
    Report,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Simulate => Command::Simulate,
            Cmd::Ingest => Command::Ingest,
            Cmd::Train => Command::Train,
            Cmd::Select => Command::Select,
            Cmd::Predict => Command::Predict,
            Cmd::FitMarginals => Command::FitMarginals,
            Cmd::FitCopula => Command::FitCopula,
            Cmd::Risk => Command::Risk,
            Cmd::Report => Command::Report,
        }
    }
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
    let Some(config) = cli.config else {
        eprintln!("error: --config <path> is required");
        return ExitCode::from(1);
    };
    let overrides = Overrides {
        out: cli.out,
        seed: cli.seed,
        scenarios: cli.scenarios,
    };
    let result = RunContext::load(&config, &overrides).and_then(|ctx| run(&ctx, cli.command.into()));
    match result {
        Ok(outcome) => {
            if !cli.quiet {
                for m in &outcome.messages {
                    eprintln!("{}: {m}", outcome.command);
                }
                for p in &outcome.outputs {
                    eprintln!("wrote {}", p.display());
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

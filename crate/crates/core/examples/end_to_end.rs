//! Runs every pipeline stage in order into a temporary directory, the same
//! way the command-line tool does.

use claimrisk::pipeline::{run, Command, Overrides, PipelineConfig, RunContext};

fn main() -> claimrisk::Result<()> {
    let dir = std::env::temp_dir().join("claimrisk-example");
    let mut config = PipelineConfig::default();
    config.world.n_years = 5;
    config.network.epochs = 80;
    config.selection.epochs = Some(40);
    config.copula.bootstrap_reps = 100;
    config.risk.mc_draws = 20_000;

    let overrides = Overrides {
        out: Some(dir.clone()),
        ..Default::default()
    };
    let ctx = RunContext::new(config, &dir, &overrides)?;
    let stages = [
        Command::Simulate,
        Command::Ingest,
        Command::Select,
        Command::Train,
        Command::Predict,
        Command::FitMarginals,
        Command::FitCopula,
        Command::Risk,
        Command::Report,
    ];
    for cmd in stages {
        let outcome = run(&ctx, cmd)?;
        for m in &outcome.messages {
            println!("{:>14}: {m}", cmd.as_str());
        }
    }
    println!("artifacts in {}", ctx.run_dir.display());
    Ok(())
}

//! Compares the four candidate predictor sets on a world where claims respond
//! strongly to the wettest day of the week.

use claimrisk::mlp::NetworkConfig;
use claimrisk::scenario::{simulate_world, WorldConfig};
use claimrisk::selection::{enumerate_candidates, run_selection};

fn main() -> claimrisk::Result<()> {
    let world = simulate_world(&WorldConfig::planted_max_daily())?;
    let config = NetworkConfig {
        epochs: 100,
        ..Default::default()
    };
    let report = run_selection(&world.control_weekly, &enumerate_candidates(), &config, 0.8, &[0, 1, 2])?;

    for c in &report.candidates {
        let cols: Vec<String> = c.columns.iter().map(|c| c.to_string()).collect();
        let mark = if c.model_id == report.winner { "*" } else { " " };
        println!("{mark} model {}  RMSE {:.4}  [{}]", c.model_id, c.rmse, cols.join(", "));
    }
    Ok(())
}

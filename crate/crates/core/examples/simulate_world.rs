//! Generates a synthetic city and prints summary statistics of the control
//! decade and each projected scenario.

use claimrisk::scenario::{simulate_world, WorldConfig};

fn main() -> claimrisk::Result<()> {
    let config = WorldConfig::default();
    let world = simulate_world(&config)?;

    let weeks = world.control_weekly.weeks();
    let mean_n = weeks.iter().map(|w| w.n).sum::<f64>() / weeks.len() as f64;
    let max_n = weeks.iter().map(|w| w.n).fold(0.0, f64::max);
    println!("control: {} days, {} weeks", world.control_daily.len(), weeks.len());
    println!("weekly claims: mean {mean_n:.3}, max {max_n:.3}");

    for (id, rows) in &world.scenarios.scenarios {
        let total: f64 = rows.iter().map(|w| w.x).sum();
        let wettest = rows.iter().map(|w| w.d).fold(0.0, f64::max);
        println!(
            "{id:>14}: {} weeks, mean weekly precip {:6.2} mm, wettest day {wettest:6.1} mm",
            rows.len(),
            total / rows.len() as f64
        );
    }
    Ok(())
}

//! Trains the network on simulated weekly data for one candidate predictor
//! set and reports train/test RMSE.

use claimrisk::ingest::{build_features, split_train_test};
use claimrisk::mlp::{predict, rmse, train, NetworkConfig};
use claimrisk::scenario::{simulate_world, WorldConfig};
use claimrisk::selection::candidate;

fn main() -> claimrisk::Result<()> {
    let world = simulate_world(&WorldConfig::default())?;
    let spec = candidate(3)?;
    let frame = build_features(&world.control_weekly, &spec.columns)?;
    let (train_frame, test_frame) = split_train_test(&frame, 0.8)?;

    let config = NetworkConfig {
        input_dim: spec.columns.len(),
        epochs: 200,
        ..Default::default()
    };
    let net = train(&train_frame, &config)?;
    let history = &net.loss_history;
    for epoch in (0..history.len()).step_by(40).chain([history.len() - 1]) {
        println!("epoch {:>4}  loss {:.5}", epoch + 1, history[epoch]);
    }

    let train_rmse = rmse(&predict(&net, &train_frame)?, &train_frame.target)?;
    let test_rmse = rmse(&predict(&net, &test_frame)?, &test_frame.target)?;
    println!("model {}: train RMSE {train_rmse:.4}, test RMSE {test_rmse:.4}", spec.model_id);
    println!("{} parameters", net.parameter_count());
    Ok(())
}

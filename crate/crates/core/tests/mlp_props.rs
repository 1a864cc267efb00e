use chrono::{Days, NaiveDate};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use claimrisk::ingest::{FeatureColumn, FeatureFrame};
use claimrisk::mlp::{init_network, predict, rmse, train, DropoutMask, Mode, NetworkConfig, TrainedNetwork};

fn small(seed: u64, l2: f64, dropout: f64) -> NetworkConfig {
    NetworkConfig {
        input_dim: 3,
        hidden_layers: vec![5, 4],
        dropout_rate: dropout,
        l2_lambda: l2,
        seed,
        ..Default::default()
    }
}

fn batch(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let y = (0..n).map(|_| rng.random_range(0.0..3.0)).collect();
    (rows, y)
}

fn linear_frame(n: usize) -> FeatureFrame {
    let start = NaiveDate::from_ymd_opt(2002, 1, 7).unwrap();
    let xs: Vec<f64> = (0..n).map(|i| -1.5 + 3.0 * i as f64 / (n - 1) as f64).collect();
    FeatureFrame {
        columns: vec![FeatureColumn::Precip { lag: 0 }],
        week_start: (0..n).map(|i| start + Days::new(7 * i as u64)).collect(),
        rows: xs.iter().map(|&x| vec![x]).collect(),
        target: xs.iter().map(|&x| 2.0 * x + 4.0).collect(),
        scaler: None,
    }
}

#[test]
fn every_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut net = init_network(&small(3, 1e-2, 0.0)).unwrap();
    for p in net.parameters_mut() {
        *p += rng.random_range(-0.3..0.3);
    }
    let (rows, y) = batch(&mut rng, 12, 3);
    let (_, grads) = net.backward_gradients(&rows, &y, None).unwrap();
    let analytic: Vec<f64> = grads.iter().collect();
    let h = 1e-5;
    let count = net.parameter_count();
    assert_eq!(analytic.len(), count);
    let mut worst: f64 = 0.0;
    for (k, &a) in analytic.iter().enumerate() {
        let mut plus = net.clone();
        *plus.parameters_mut().nth(k).unwrap() += h;
        let mut minus = net.clone();
        *minus.parameters_mut().nth(k).unwrap() -= h;
        let fd = (plus.loss(&rows, &y, None).unwrap() - minus.loss(&rows, &y, None).unwrap()) / (2.0 * h);
        worst = worst.max((fd - a).abs() / a.abs().max(fd.abs()).max(1e-4));
    }
    assert!(worst < 1e-5, "max relative error {worst}");
}

#[test]
fn penalty_gradient_at_zero_residual() {
    let mut net = init_network(&small(1, 0.5, 0.0)).unwrap();
    let x = vec![0.3, -0.2, 1.1];
    let mut r = ChaCha8Rng::seed_from_u64(0);
    let y = net.forward(&x, Mode::Infer, &mut r).unwrap();
    net.config.l2_lambda = 0.5;
    let (_, g) = net.backward_gradients(&[x], &[y], None).unwrap();
    for (layer, gw) in net.layers.iter().zip(&g.weights) {
        for (w, d) in layer.weights.iter().zip(gw) {
            assert!((d - 2.0 * 0.5 * w).abs() < 1e-12);
        }
    }
}

#[test]
fn dropout_average_approaches_inference() {
    let net = init_network(&NetworkConfig {
        input_dim: 3,
        hidden_layers: vec![32],
        dropout_rate: 0.3,
        ..Default::default()
    })
    .unwrap();
    let x = [0.7, -1.2, 0.4];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let infer = net.forward(&x, Mode::Infer, &mut rng).unwrap();
    let draws = 20_000;
    let outs: Vec<f64> = (0..draws).map(|_| net.forward(&x, Mode::Train, &mut rng).unwrap()).collect();
    let mean = outs.iter().sum::<f64>() / draws as f64;
    let sd = (outs.iter().map(|o| (o - mean).powi(2)).sum::<f64>() / (draws - 1) as f64).sqrt();
    let se = sd / (draws as f64).sqrt();
    assert!((mean - infer).abs() < 3.0 * se, "mean {mean} infer {infer} se {se}");
}

#[test]
fn linear_target_is_fitted() {
    let frame = linear_frame(64);
    let cfg = NetworkConfig {
        input_dim: 1,
        hidden_layers: vec![16],
        dropout_rate: 0.0,
        l2_lambda: 0.0,
        learning_rate: 1e-2,
        epochs: 500,
        batch_size: 16,
        ..Default::default()
    };
    let net = train(&frame, &cfg).unwrap();
    let r = rmse(&predict(&net, &frame).unwrap(), &frame.target).unwrap();
    assert!(r < 0.05, "rmse {r}");
    assert_eq!(net.loss_history.len(), 500);
}

#[test]
fn zero_epochs_returns_initial_network() {
    let frame = linear_frame(20);
    let cfg = NetworkConfig {
        input_dim: 1,
        hidden_layers: vec![4],
        epochs: 0,
        batch_size: 8,
        ..Default::default()
    };
    let trained = train(&frame, &cfg).unwrap();
    let init = init_network(&cfg).unwrap();
    assert_eq!(trained.layers, init.layers);
}

#[test]
fn training_is_a_pure_function_and_reload_is_exact() {
    let frame = linear_frame(40);
    let cfg = NetworkConfig {
        input_dim: 1,
        hidden_layers: vec![8, 8],
        epochs: 30,
        batch_size: 8,
        seed: 9,
        ..Default::default()
    };
    let a = train(&frame, &cfg).unwrap();
    let b = train(&frame, &cfg).unwrap();
    assert_eq!(a.loss_history, b.loss_history);
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    let reloaded = TrainedNetwork::from_json(&a.to_json().unwrap()).unwrap();
    let pa = predict(&a, &frame).unwrap();
    let pr = predict(&reloaded, &frame).unwrap();
    assert!(pa.iter().zip(&pr).all(|(x, y)| x.to_bits() == y.to_bits()));
    let c = train(&frame, &NetworkConfig { seed: 10, ..cfg }).unwrap();
    assert_ne!(a.loss_history, c.loss_history);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn penalty_is_monotone_in_lambda(seed in 0u64..1000, lo in 0.0f64..1.0, extra in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (rows, y) = batch(&mut rng, 6, 3);
        let mut net = init_network(&small(seed, lo, 0.0)).unwrap();
        let a = net.loss(&rows, &y, None).unwrap();
        net.config.l2_lambda = lo + extra;
        let b = net.loss(&rows, &y, None).unwrap();
        prop_assert!(b >= a);
    }

    #[test]
    fn masked_forward_matches_sampled_mask(seed in 0u64..1000) {
        let net = init_network(&small(seed, 0.0, 0.4)).unwrap();
        let x = [0.1, 0.5, -0.9];
        let mut r1 = ChaCha8Rng::seed_from_u64(seed);
        let mut r2 = ChaCha8Rng::seed_from_u64(seed);
        let mask = DropoutMask::sample(&net, &mut r1);
        for layer in &mask.layers {
            for &m in layer {
                prop_assert!(m == 0.0 || (m - 1.0 / 0.6).abs() < 1e-15);
            }
        }
        prop_assert_eq!(net.forward_masked(&x, &mask).unwrap(), net.forward(&x, Mode::Train, &mut r2).unwrap());
    }

    #[test]
    fn predictions_are_non_negative(seed in 0u64..1000) {
        let frame = linear_frame(10);
        let mut net = init_network(&NetworkConfig { input_dim: 1, hidden_layers: vec![3], seed, ..Default::default() }).unwrap();
        net.layers.last_mut().unwrap().bias[0] = -5.0;
        prop_assert!(predict(&net, &frame).unwrap().iter().all(|&p| p >= 0.0));
    }
}

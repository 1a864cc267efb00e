//! Dense feed-forward regression network written from scratch.
//!
//! Hidden layers use ReLU and inverted dropout; the single output unit is
//! linear. Training minimizes mean squared error plus an L2 penalty on the
//! weights (biases are not penalized) with mini-batch Adam or plain SGD.
//!
//! Weights of a layer with `n_in` inputs and `n_out` outputs are stored
//! row-major with shape `n_in x n_out`, so `weights[i * n_out + j]`
//! connects input `i` to output `j`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_param, Error, Result};
use crate::ingest::{FeatureColumn, FeatureFrame, Scaler};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    #[default]
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub hidden_layers: Vec<usize>,
    pub dropout_rate: f64,
    pub l2_lambda: f64,
    pub seed: u64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            input_dim: 1,
            hidden_layers: vec![64, 64, 64],
            dropout_rate: 0.2,
            l2_lambda: 1e-4,
            seed: 0,
            learning_rate: 1e-3,
            epochs: 500,
            batch_size: 32,
            optimizer: Optimizer::Adam,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_param!(self.input_dim > 0, "input_dim must be positive");
        ensure_param!(
            self.hidden_layers.iter().all(|&w| w >= 1),
            "hidden layer widths must be >= 1"
        );
        ensure_param!(
            (0.0..1.0).contains(&self.dropout_rate),
            "dropout_rate must lie in [0,1), got {}",
            self.dropout_rate
        );
        ensure_param!(
            self.l2_lambda >= 0.0 && self.l2_lambda.is_finite(),
            "l2_lambda must be non-negative"
        );
        ensure_param!(
            self.learning_rate > 0.0 && self.learning_rate.is_finite(),
            "learning_rate must be positive"
        );
        ensure_param!(self.batch_size > 0, "batch_size must be positive");
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn affine(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(&self.bias);
        for (i, &a) in input.iter().enumerate() {
            if a != 0.0 {
                let row = &self.weights[i * self.n_out..(i + 1) * self.n_out];
                for (o, w) in out.iter_mut().zip(row) {
                    *o += a * w;
                }
            }
        }
    }
}

/// Network parameters plus the configuration and inputs that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedNetwork {
    pub config: NetworkConfig,
    pub columns: Vec<FeatureColumn>,
    pub scaler: Option<Scaler>,
    pub layers: Vec<Layer>,
    pub loss_history: Vec<f64>,
    pub final_loss: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Per-hidden-unit multipliers for one forward pass: `0` for a dropped
/// unit, `1 / (1 - rate)` for a survivor.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    pub layers: Vec<Vec<f64>>,
}

impl DropoutMask {
    pub fn none(net: &TrainedNetwork) -> Self {
        DropoutMask {
            layers: net.hidden_widths().map(|w| vec![1.0; w]).collect(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(net: &TrainedNetwork, rng: &mut R) -> Self {
        let p = net.config.dropout_rate;
        if p == 0.0 {
            return Self::none(net);
        }
        let keep = 1.0 / (1.0 - p);
        DropoutMask {
            layers: net
                .hidden_widths()
                .map(|w| {
                    (0..w)
                        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
                        .collect()
                })
                .collect(),
        }
    }
}

/// Gradients with the same layout as the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(net: &TrainedNetwork) -> Self {
        Gradients {
            weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights
            .iter()
            .zip(&self.bias)
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
    }
}

/// Builds a network with He-uniform weights (bound `sqrt(6 / fan_in)`) and
/// zero biases. Deterministic for a fixed `config.seed`.
pub fn init_network(config: &NetworkConfig) -> Result<TrainedNetwork> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dims = vec![config.input_dim];
    dims.extend_from_slice(&config.hidden_layers);
    dims.push(1);
    let layers = dims
        .windows(2)
        .map(|pair| {
            let (n_in, n_out) = (pair[0], pair[1]);
            let bound = (6.0 / n_in as f64).sqrt();
            Layer {
                n_in,
                n_out,
                weights: (0..n_in * n_out)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect(),
                bias: vec![0.0; n_out],
            }
        })
        .collect();
    Ok(TrainedNetwork {
        config: config.clone(),
        columns: Vec::new(),
        scaler: None,
        layers,
        loss_history: Vec::new(),
        final_loss: None,
    })
}

/// Activations recorded during a forward pass, needed for backprop.
struct Tape {
    /// `inputs[k]` is the input vector of layer k (post-ReLU, post-dropout).
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of each hidden layer.
    pre: Vec<Vec<f64>>,
    output: f64,
}

impl TrainedNetwork {
    pub fn input_dim(&self) -> usize {
        self.layers[0].n_in
    }

    fn hidden_widths(&self) -> impl Iterator<Item = usize> + '_ {
        self.layers[..self.layers.len() - 1].iter().map(|l| l.n_out)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Sum of squared weights (biases excluded).
    pub fn weight_norm_sq(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter())
            .map(|w| w * w)
            .sum()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::InvalidParameter(format!(
                "input has {} features, network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn run(&self, x: &[f64], mask: &DropoutMask) -> Tape {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        inputs.push(x.to_vec());
        let mut z = Vec::new();
        for (k, layer) in self.layers.iter().enumerate() {
            layer.affine(&inputs[k], &mut z);
            if k == last {
                break;
            }
            let act: Vec<f64> = z
                .iter()
                .zip(&mask.layers[k])
                .map(|(&v, &m)| if v > 0.0 { v * m } else { 0.0 })
                .collect();
            pre.push(z.clone());
            inputs.push(act);
        }
        Tape {
            inputs,
            pre,
            output: z[0],
        }
    }

    /// Network output for a single standardized feature vector. Train mode
    /// draws a fresh dropout mask from `rng`; infer mode uses no dropout.
    pub fn forward<R: Rng + ?Sized>(&self, x: &[f64], mode: Mode, rng: &mut R) -> Result<f64> {
        self.check_input(x)?;
        let mask = match mode {
            Mode::Train => DropoutMask::sample(self, rng),
            Mode::Infer => DropoutMask::none(self),
        };
        Ok(self.run(x, &mask).output)
    }

    pub fn forward_masked(&self, x: &[f64], mask: &DropoutMask) -> Result<f64> {
        self.check_input(x)?;
        self.check_mask(mask)?;
        Ok(self.run(x, mask).output)
    }

    fn check_mask(&self, mask: &DropoutMask) -> Result<()> {
        let ok = mask.layers.len() == self.layers.len() - 1
            && mask.layers.iter().zip(self.hidden_widths()).all(|(m, w)| m.len() == w);
        if !ok {
            return Err(Error::InvalidParameter("dropout mask shape does not match network".into()));
        }
        Ok(())
    }

    fn check_batch<R: AsRef<[f64]>>(&self, rows: &[R], targets: &[f64], masks: Option<&[DropoutMask]>) -> Result<()> {
        ensure_param!(!rows.is_empty(), "empty batch");
        ensure_param!(
            rows.len() == targets.len(),
            "batch has {} rows but {} targets",
            rows.len(),
            targets.len()
        );
        for r in rows {
            self.check_input(r.as_ref())?;
        }
        if let Some(masks) = masks {
            ensure_param!(masks.len() == rows.len(), "need one dropout mask per row");
            for m in masks {
                self.check_mask(m)?;
            }
        }
        Ok(())
    }

    /// Batch MSE plus `l2_lambda` times the sum of squared weights.
    /// `masks = None` means no dropout.
    pub fn loss<R: AsRef<[f64]>>(&self, rows: &[R], targets: &[f64], masks: Option<&[DropoutMask]>) -> Result<f64> {
        self.check_batch(rows, targets, masks)?;
        let none = DropoutMask::none(self);
        let sse: f64 = rows
            .iter()
            .zip(targets)
            .enumerate()
            .map(|(i, (r, &y))| {
                let m = masks.map_or(&none, |ms| &ms[i]);
                let e = self.run(r.as_ref(), m).output - y;
                e * e
            })
            .sum();
        Ok(sse / rows.len() as f64 + self.config.l2_lambda * self.weight_norm_sq())
    }

    /// Exact gradients of [`TrainedNetwork::loss`] by reverse-mode
    /// differentiation, returned together with the loss value. The ReLU
    /// derivative at 0 is taken as 0.
    pub fn backward_gradients<R: AsRef<[f64]>>(
        &self,
        rows: &[R],
        targets: &[f64],
        masks: Option<&[DropoutMask]>,
    ) -> Result<(f64, Gradients)> {
        self.check_batch(rows, targets, masks)?;
        Ok(self.loss_and_gradients(rows, targets, masks))
    }

    fn loss_and_gradients<R: AsRef<[f64]>>(
        &self,
        rows: &[R],
        targets: &[f64],
        masks: Option<&[DropoutMask]>,
    ) -> (f64, Gradients) {
        let none = DropoutMask::none(self);
        let mut grads = Gradients::zeros_like(self);
        let scale = 2.0 / rows.len() as f64;
        let mut sse = 0.0;
        let mut delta: Vec<f64> = Vec::new();
        let mut delta_in: Vec<f64> = Vec::new();
        for (i, (r, &y)) in rows.iter().zip(targets).enumerate() {
            let mask = masks.map_or(&none, |ms| &ms[i]);
            let tape = self.run(r.as_ref(), mask);
            let err = tape.output - y;
            sse += err * err;
            delta.clear();
            delta.push(scale * err);
            for k in (0..self.layers.len()).rev() {
                let layer = &self.layers[k];
                let input = &tape.inputs[k];
                let gw = &mut grads.weights[k];
                for (gb, d) in grads.bias[k].iter_mut().zip(&delta) {
                    *gb += d;
                }
                for (i_in, &a) in input.iter().enumerate() {
                    if a != 0.0 {
                        let row = &mut gw[i_in * layer.n_out..(i_in + 1) * layer.n_out];
                        for (g, d) in row.iter_mut().zip(&delta) {
                            *g += a * d;
                        }
                    }
                }
                if k == 0 {
                    break;
                }
                // propagate through weights, then through ReLU and dropout of layer k-1
                let pre = &tape.pre[k - 1];
                let m = &mask.layers[k - 1];
                delta_in.clear();
                delta_in.extend((0..layer.n_in).map(|i_in| {
                    if pre[i_in] > 0.0 && m[i_in] != 0.0 {
                        let row = &layer.weights[i_in * layer.n_out..(i_in + 1) * layer.n_out];
                        let s: f64 = row.iter().zip(&delta).map(|(w, d)| w * d).sum();
                        s * m[i_in]
                    } else {
                        0.0
                    }
                }));
                std::mem::swap(&mut delta, &mut delta_in);
            }
        }
        let lambda = self.config.l2_lambda;
        if lambda > 0.0 {
            for (gw, layer) in grads.weights.iter_mut().zip(&self.layers) {
                for (g, w) in gw.iter_mut().zip(&layer.weights) {
                    *g += 2.0 * lambda * w;
                }
            }
        }
        let loss = sse / rows.len() as f64 + lambda * self.weight_norm_sq();
        (loss, grads)
    }

    /// Mutable views of every parameter in the same order as [`Gradients::iter`].
    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn parameters(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
    }

    /// Infer-mode outputs without the non-negativity clamp.
    pub fn predict_raw(&self, frame: &FeatureFrame) -> Result<Vec<f64>> {
        self.check_frame(frame)?;
        let mask = DropoutMask::none(self);
        Ok(frame.rows.iter().map(|r| self.run(r, &mask).output).collect())
    }

    fn check_frame(&self, frame: &FeatureFrame) -> Result<()> {
        if !self.columns.is_empty() && frame.columns != self.columns {
            return Err(Error::InvalidParameter(format!(
                "frame columns {:?} do not match training columns {:?}",
                names(&frame.columns),
                names(&self.columns)
            )));
        }
        if frame.width() != self.input_dim() {
            return Err(Error::InvalidParameter(format!(
                "frame has {} columns, network expects {}",
                frame.width(),
                self.input_dim()
            )));
        }
        if self.scaler.is_some() && frame.scaler != self.scaler {
            return Err(Error::InvalidParameter(
                "frame is not standardized with the network's scaler".into(),
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let net: TrainedNetwork = serde_json::from_str(s)?;
        net.check_shapes()?;
        Ok(net)
    }

    fn check_shapes(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Data(format!("invalid network document: {m}")));
        if self.layers.is_empty() {
            return bad("no layers".into());
        }
        for (k, l) in self.layers.iter().enumerate() {
            if l.weights.len() != l.n_in * l.n_out || l.bias.len() != l.n_out {
                return bad(format!("layer {k} arrays do not match its shape"));
            }
            if k > 0 && self.layers[k - 1].n_out != l.n_in {
                return bad(format!("layer {k} input does not chain with layer {}", k - 1));
            }
        }
        if self.layers.last().map(|l| l.n_out) != Some(1) {
            return bad("output layer must have a single unit".into());
        }
        if !self.columns.is_empty() && self.columns.len() != self.input_dim() {
            return bad("column list length differs from input dimension".into());
        }
        Ok(())
    }
}

fn names(cols: &[FeatureColumn]) -> Vec<String> {
    cols.iter().map(ToString::to_string).collect()
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

fn apply_step(net: &mut TrainedNetwork, grads: &Gradients, lr: f64, adam: &mut Option<AdamState>) {
    match adam {
        None => {
            for (p, g) in net.parameters_mut().zip(grads.iter()) {
                *p -= lr * g;
            }
        }
        Some(st) => {
            st.t += 1;
            let c1 = 1.0 - BETA1.powi(st.t);
            let c2 = 1.0 - BETA2.powi(st.t);
            for (((p, g), m), v) in net
                .parameters_mut()
                .zip(grads.iter())
                .zip(st.m.iter_mut())
                .zip(st.v.iter_mut())
            {
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
            }
        }
    }
}

/// Trains on a standardized frame for `config.epochs` shuffled passes.
///
/// Initialization uses `config.seed`; shuffling and dropout masks use a
/// separate stream of the same seed, so the whole run is a pure function
/// of `(frame, config)`. The recorded loss per epoch is the mean batch loss.
pub fn train(frame: &FeatureFrame, config: &NetworkConfig) -> Result<TrainedNetwork> {
    ensure_param!(
        frame.width() == config.input_dim,
        "frame has {} columns but input_dim is {}",
        frame.width(),
        config.input_dim
    );
    ensure_param!(
        frame.target.len() == frame.len(),
        "training frame needs one target per row"
    );
    ensure_param!(
        frame.len() >= config.batch_size,
        "frame has {} rows, fewer than batch_size {}",
        frame.len(),
        config.batch_size
    );
    let mut net = init_network(config)?;
    net.columns = frame.columns.clone();
    net.scaler = frame.scaler.clone();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut adam = match config.optimizer {
        Optimizer::Adam => Some(AdamState {
            m: vec![0.0; net.parameter_count()],
            v: vec![0.0; net.parameter_count()],
            t: 0,
        }),
        Optimizer::Sgd => None,
    };
    let mut order: Vec<usize> = (0..frame.len()).collect();
    let mut batch_rows: Vec<&[f64]> = Vec::with_capacity(config.batch_size);
    let mut batch_targets: Vec<f64> = Vec::with_capacity(config.batch_size);
    let mut masks: Vec<DropoutMask> = Vec::with_capacity(config.batch_size);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            batch_rows.clear();
            batch_targets.clear();
            masks.clear();
            for &i in chunk {
                batch_rows.push(&frame.rows[i]);
                batch_targets.push(frame.target[i]);
                masks.push(DropoutMask::sample(&net, &mut rng));
            }
            let (loss, grads) = net.loss_and_gradients(&batch_rows, &batch_targets, Some(&masks));
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numerical(format!("training diverged at epoch {epoch}")));
            }
            apply_step(&mut net, &grads, config.learning_rate, &mut adam);
            total += loss;
            batches += 1;
        }
        let epoch_loss = total / batches as f64;
        net.loss_history.push(epoch_loss);
    }
    net.final_loss = net.loss_history.last().copied();
    Ok(net)
}

/// Infer-mode predictions clamped below at zero.
pub fn predict(net: &TrainedNetwork, frame: &FeatureFrame) -> Result<Vec<f64>> {
    Ok(net.predict_raw(frame)?.into_iter().map(|p| p.max(0.0)).collect())
}

pub fn rmse(pred: &[f64], actual: &[f64]) -> Result<f64> {
    ensure_param!(
        pred.len() == actual.len(),
        "length mismatch: {} predictions vs {} actuals",
        pred.len(),
        actual.len()
    );
    ensure_param!(!pred.is_empty(), "rmse of empty vectors");
    let mse = pred
        .iter()
        .zip(actual)
        .map(|(p, a)| (p - a) * (p - a))
        .sum::<f64>()
        / pred.len() as f64;
    Ok(mse.sqrt())
}

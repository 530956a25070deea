//! The unsupervised phase-shift network.
//!
//! A fully-connected network maps a feature vector to the `2N + 1` decision
//! variables: each hidden layer is affine -> relu -> batch norm (the batch
//! norm sits after the activation), and the output layer is affine ->
//! sigmoid. The sigmoid output splits into two N-wide phase groups, scaled
//! by `2 pi`, and one time-split entry clamped to `[1e-6, 1 - 1e-6]`; both
//! phase vectors for a sample come out of the single forward pass.
//!
//! Training minimizes the negative mean throughput of the batch (no labels)
//! by reverse-mode differentiation through the full closed form, with Adam,
//! a staircase-decayed learning rate, and early stopping when the training
//! loss stops decreasing. Validation loss gates model selection: the
//! returned parameters are the best-validation checkpoint.
//!
//! Checkpoints are a single JSON document carrying the architecture, every
//! weight, bias and batch-norm statistic, the optional input scale, and the
//! seed; serialization is round-trip exact.

mod graph;

pub use graph::LossGraph;

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::{Dataset, FeatureVector, SystemParams};
use crate::evaluator::{wrap_phase, PhaseConfig, TAU_MARGIN};
use crate::rng::SplitMix64;

/// Batch-norm variance floor inside the normalization denominator.
pub const BN_EPSILON: f64 = 1e-3;
/// Momentum for the running mean/variance update.
pub const BN_MOMENTUM: f64 = 0.99;

#[derive(Debug)]
pub enum IrsNetError {
    Dimension { what: &'static str, expected: usize, got: usize },
    Config(String),
    /// Loss or gradient turned non-finite; training aborted.
    NonFinite { epoch: usize, step: u64 },
    Io { path: PathBuf, source: std::io::Error },
    Parse { path: PathBuf, message: String },
}

impl fmt::Display for IrsNetError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IrsNetError::Dimension { what, expected, got } => {
                write!(f, "{what}: expected {expected}, got {got}")
            }
            IrsNetError::Config(msg) => write!(f, "bad configuration: {msg}"),
            IrsNetError::NonFinite { epoch, step } => {
                write!(f, "non-finite loss or gradient at epoch {epoch}, step {step}")
            }
            IrsNetError::Io { path, source } => {
                write!(f, "i/o error on {}: {source}", path.display())
            }
            IrsNetError::Parse { path, message } => {
                write!(f, "bad checkpoint {}: {message}", path.display())
            }
        }
    }
}

impl std::error::Error for IrsNetError {}

/// Interference power tiers used by the layer-width table, in watts
/// (1, ~3.16, 10, ~31.6 mW).
const TIER_0_DBM: f64 = 1e-3;
const TIER_5_DBM: f64 = 3.1622776601683794e-3;
const TIER_10_DBM: f64 = 1e-2;
const TIER_15_DBM: f64 = 3.162277660168379e-2;

fn power_matches(p: f64, tier: f64) -> bool {
    (p - tier).abs() <= 1e-9 * tier
}

/// Hidden-layer width multipliers for a given system configuration.
///
/// Widths are `floor(multiplier * feature_len)` per hidden layer. Matched
/// configurations follow the published sizing table; anything outside it
/// falls back to the broadest interference row.
pub fn hidden_multipliers(antennas: usize, elements: usize, interferer_power: f64) -> [f64; 5] {
    const WIDE: [f64; 5] = [2.5, 3.0, 2.5, 2.0, 0.5];
    const NARROW: [f64; 5] = [3.5, 4.5, 4.5, 4.0, 1.0];
    const INTERF: [f64; 5] = [1.25, 2.75, 2.75, 2.05, 0.75];
    const INTERF_SLIM: [f64; 5] = [1.05, 1.35, 1.45, 1.25, 0.5];

    let m = antennas;
    let n = elements;
    if interferer_power == 0.0 {
        if matches!((m, n), (2, 16) | (2, 32) | (8, 16) | (4, 16) | (4, 32) | (8, 32)) {
            return WIDE;
        }
        if matches!((m, n), (8, 8) | (2, 8) | (4, 8)) {
            return NARROW;
        }
        return INTERF;
    }
    if power_matches(interferer_power, TIER_10_DBM)
        && matches!(m, 2 | 4 | 8)
        && matches!(n, 8 | 16 | 32)
    {
        return INTERF;
    }
    if m == 8 {
        let p = interferer_power;
        if (n == 16 && power_matches(p, TIER_0_DBM))
            || (n == 8 && power_matches(p, TIER_5_DBM))
            || (n == 8 && power_matches(p, TIER_15_DBM))
            || (n == 16 && power_matches(p, TIER_15_DBM))
        {
            return INTERF;
        }
        if (n == 8 && power_matches(p, TIER_0_DBM))
            || (n == 32 && power_matches(p, TIER_5_DBM))
            || (n == 16 && power_matches(p, TIER_5_DBM))
            || (n == 32 && power_matches(p, TIER_15_DBM))
        {
            return INTERF_SLIM;
        }
    }
    INTERF
}

/// Hidden-layer widths: `floor(n_i * feature_len)` from the sizing table.
pub fn hidden_sizes(
    antennas: usize,
    elements: usize,
    interferer_power: f64,
    feature_len: usize,
) -> Vec<usize> {
    hidden_multipliers(antennas, elements, interferer_power)
        .iter()
        .map(|&mult| (mult * feature_len as f64).floor() as usize)
        .collect()
}

/// Shape descriptor: input width, hidden widths, element count (fixing the
/// output at `2N + 1`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub feature_len: usize,
    pub hidden: Vec<usize>,
    pub elements: usize,
}

impl Architecture {
    pub fn output_width(&self) -> usize {
        2 * self.elements + 1
    }

    pub fn validate(&self) -> Result<(), IrsNetError> {
        if self.feature_len == 0 || self.elements == 0 {
            return Err(IrsNetError::Config("degenerate architecture".into()));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(IrsNetError::Config("hidden layers must be nonempty".into()));
        }
        Ok(())
    }

    /// Layer in/out widths, hidden layers then output.
    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut fan_in = self.feature_len;
        for &h in &self.hidden {
            dims.push((fan_in, h));
            fan_in = h;
        }
        dims.push((fan_in, self.output_width()));
        dims
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerParams {
    /// Row-major `fan_in x fan_out`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchNormState {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

/// Full parameter state of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkParams {
    pub version: u32,
    pub arch: Architecture,
    /// Hidden layers then the output layer.
    pub layers: Vec<LayerParams>,
    /// One per hidden layer.
    pub batch_norm: Vec<BatchNormState>,
    /// Optional per-component divisor applied to the network input.
    pub feature_scale: Option<Vec<f64>>,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
    pub seed: u64,
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Xavier-uniform initialization from a seeded stream; batch-norm scale 1,
/// shift 0, running mean 0, running variance 1. Layer `i` draws from the
/// derived substream `derive(seed, i)`, weights in row-major order.
pub fn init_network(
    feature_len: usize,
    hidden: &[usize],
    elements: usize,
    seed: u64,
) -> NetworkParams {
    let arch =
        Architecture { feature_len, hidden: hidden.to_vec(), elements };
    let mut layers = Vec::new();
    for (i, (fan_in, fan_out)) in arch.layer_dims().into_iter().enumerate() {
        let mut rng = SplitMix64::new(SplitMix64::derive(seed, i as u64));
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weights = (0..fan_in * fan_out).map(|_| rng.next_range(-bound, bound)).collect();
        layers.push(LayerParams { weights, bias: vec![0.0; fan_out] });
    }
    let batch_norm = arch
        .hidden
        .iter()
        .map(|&h| BatchNormState {
            gamma: vec![1.0; h],
            beta: vec![0.0; h],
            running_mean: vec![0.0; h],
            running_var: vec![1.0; h],
        })
        .collect();
    NetworkParams {
        version: CHECKPOINT_VERSION,
        arch,
        layers,
        batch_norm,
        feature_scale: None,
        bn_momentum: BN_MOMENTUM,
        bn_epsilon: BN_EPSILON,
        seed,
    }
}

impl NetworkParams {
    pub fn with_feature_scale(mut self, scale: Vec<f64>) -> Self {
        assert_eq!(scale.len(), self.arch.feature_len, "feature scale length");
        self.feature_scale = Some(scale);
        self
    }

    /// Number of trainable scalars (weights, biases, norm scales/shifts).
    pub fn trainable_len(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum::<usize>()
            + self.batch_norm.iter().map(|b| b.gamma.len() + b.beta.len()).sum::<usize>()
    }

    /// Flattens trainables in the canonical order (per layer: weights then
    /// bias; then per norm layer: gamma then beta).
    pub fn pack_trainable(&self, out: &mut Vec<f64>) {
        out.clear();
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        for b in &self.batch_norm {
            out.extend_from_slice(&b.gamma);
            out.extend_from_slice(&b.beta);
        }
    }

    pub fn unpack_trainable(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.trainable_len(), "flat parameter length");
        let mut at = 0;
        let mut take = |dst: &mut [f64]| {
            dst.copy_from_slice(&flat[at..at + dst.len()]);
            at += dst.len();
        };
        for l in &mut self.layers {
            take(&mut l.weights);
            take(&mut l.bias);
        }
        for b in &mut self.batch_norm {
            take(&mut b.gamma);
            take(&mut b.beta);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Training,
    Inference,
}

/// Batched forward pass. Training mode normalizes with batch statistics and
/// requires at least two samples; inference mode uses the stored running
/// statistics and accepts any batch size. Neither mutates the parameters.
pub fn forward(
    params: &NetworkParams,
    features: &[FeatureVector],
    mode: Mode,
) -> Result<Vec<PhaseConfig>, IrsNetError> {
    let batch = features.len();
    if batch == 0 {
        return Err(IrsNetError::Dimension { what: "batch", expected: 1, got: 0 });
    }
    if mode == Mode::Training && batch < 2 {
        return Err(IrsNetError::Dimension { what: "training batch", expected: 2, got: batch });
    }
    let f_len = params.arch.feature_len;
    for f in features {
        if f.flat().len() != f_len {
            return Err(IrsNetError::Dimension {
                what: "feature length",
                expected: f_len,
                got: f.flat().len(),
            });
        }
    }

    let mut x = Vec::with_capacity(batch * f_len);
    match &params.feature_scale {
        Some(s) => {
            for f in features {
                x.extend(f.flat().iter().zip(s).map(|(v, d)| v / d));
            }
        }
        None => {
            for f in features {
                x.extend_from_slice(f.flat());
            }
        }
    }

    let dims = params.arch.layer_dims();
    let mut cur = x;
    let mut cur_width = f_len;
    for (li, (fan_in, fan_out)) in dims.iter().enumerate() {
        debug_assert_eq!(cur_width, *fan_in);
        let layer = &params.layers[li];
        let mut z = vec![0.0; batch * fan_out];
        unsafe {
            matrixmultiply::dgemm(
                batch,
                *fan_in,
                *fan_out,
                1.0,
                cur.as_ptr(),
                *fan_in as isize,
                1,
                layer.weights.as_ptr(),
                *fan_out as isize,
                1,
                0.0,
                z.as_mut_ptr(),
                *fan_out as isize,
                1,
            );
        }
        for r in 0..batch {
            for c in 0..*fan_out {
                z[r * fan_out + c] += layer.bias[c];
            }
        }
        let last = li + 1 == dims.len();
        if last {
            for v in &mut z {
                *v = sigmoid(*v);
            }
        } else {
            for v in &mut z {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            let bn = &params.batch_norm[li];
            match mode {
                Mode::Training => {
                    // Batch statistics, population variance, matching the
                    // trainable graph bit for bit.
                    for c in 0..*fan_out {
                        let mut acc = 0.0;
                        for r in 0..batch {
                            acc += z[r * fan_out + c];
                        }
                        let mu = acc / batch as f64;
                        let mut var_acc = 0.0;
                        for r in 0..batch {
                            let d = z[r * fan_out + c] - mu;
                            var_acc += d * d;
                        }
                        let var = var_acc / batch as f64;
                        let inv_s = 1.0 / (var + params.bn_epsilon).sqrt();
                        for r in 0..batch {
                            let xhat = (z[r * fan_out + c] - mu) * inv_s;
                            z[r * fan_out + c] = bn.gamma[c] * xhat + bn.beta[c];
                        }
                    }
                }
                Mode::Inference => {
                    for c in 0..*fan_out {
                        let inv_s = 1.0 / (bn.running_var[c] + params.bn_epsilon).sqrt();
                        for r in 0..batch {
                            let xhat = (z[r * fan_out + c] - bn.running_mean[c]) * inv_s;
                            z[r * fan_out + c] = bn.gamma[c] * xhat + bn.beta[c];
                        }
                    }
                }
            }
        }
        cur = z;
        cur_width = *fan_out;
    }

    let n = params.arch.elements;
    let width = params.arch.output_width();
    let mut configs = Vec::with_capacity(batch);
    for r in 0..batch {
        let row = &cur[r * width..(r + 1) * width];
        let et = row[..n].iter().map(|&s| wrap_phase(s * std::f64::consts::TAU)).collect();
        let it = row[n..2 * n].iter().map(|&s| wrap_phase(s * std::f64::consts::TAU)).collect();
        let tau = row[2 * n].clamp(TAU_MARGIN, 1.0 - TAU_MARGIN);
        configs.push(PhaseConfig { et_phases: et, it_phases: it, tau });
    }
    Ok(configs)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Adam accumulator state over the flattened trainable vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam update over the flattened parameters.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
) -> Result<(), IrsNetError> {
    assert_eq!(params.len(), grads.len(), "gradient length");
    assert_eq!(params.len(), state.first_moment.len(), "state length");
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(IrsNetError::NonFinite { epoch: 0, step: state.step });
    }
    state.step += 1;
    let t = state.step;
    let bc1 = 1.0 - state.beta1.powi(t as i32);
    let bc2 = 1.0 - state.beta2.powi(t as i32);
    for k in 0..params.len() {
        let g = grads[k];
        state.first_moment[k] = state.beta1 * state.first_moment[k] + (1.0 - state.beta1) * g;
        state.second_moment[k] =
            state.beta2 * state.second_moment[k] + (1.0 - state.beta2) * g * g;
        let m_hat = state.first_moment[k] / bc1;
        let v_hat = state.second_moment[k] / bc2;
        params[k] -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(())
}

/// Staircase exponential decay: `initial * rate^floor(step / steps)`.
pub fn lr_schedule(step: u64, initial: f64, decay_rate: f64, decay_steps: u64) -> f64 {
    initial * decay_rate.powi((step / decay_steps) as i32)
}

/// Training hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub initial_lr: f64,
    pub decay_rate: f64,
    pub decay_steps: u64,
    /// Stop after this many consecutive epochs without a training-loss
    /// decrease.
    pub patience: usize,
    pub seed: u64,
    /// Divide network inputs by their analytic per-component deviation.
    pub normalize_features: bool,
}

impl TrainConfig {
    /// Full-scale reference settings: batch 3000, up to 500 epochs, initial
    /// rate 1e-3 halving every 50k steps, patience 20.
    pub fn full_scale(seed: u64) -> Self {
        TrainConfig {
            batch_size: 3000,
            max_epochs: 500,
            initial_lr: 1e-3,
            decay_rate: 0.5,
            decay_steps: 50_000,
            patience: 20,
            seed,
            normalize_features: true,
        }
    }

    /// Desk-scale preset sized for a 1e5-sample training set: capped at
    /// 100 epochs with minibatches of 500, which gives the small sample
    /// budget twenty thousand optimizer steps instead of three thousand at
    /// the same cost per epoch.
    pub fn desk_scale(seed: u64) -> Self {
        TrainConfig { max_epochs: 100, batch_size: 500, ..Self::full_scale(seed) }
    }

    pub fn validate(&self) -> Result<(), IrsNetError> {
        if self.batch_size == 0 {
            return Err(IrsNetError::Config("batch_size must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(IrsNetError::Config("max_epochs must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(IrsNetError::Config("patience must be at least 1".into()));
        }
        // A zero rate freezes the parameters, which the early-stopping
        // machinery relies on in tests; negative rates are rejected.
        if !(self.initial_lr >= 0.0 && self.initial_lr.is_finite()) {
            return Err(IrsNetError::Config("initial_lr must be finite and >= 0".into()));
        }
        if !(self.decay_rate >= 0.0 && self.decay_rate.is_finite()) {
            return Err(IrsNetError::Config("decay_rate must be finite and >= 0".into()));
        }
        if self.decay_steps == 0 {
            return Err(IrsNetError::Config("decay_steps must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate at the first step of the epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxEpochs,
    /// Training loss failed to decrease for `patience` consecutive epochs.
    EarlyStopped { epoch: usize },
    /// Loss or gradient turned non-finite; the best checkpoint so far is
    /// returned.
    NonFiniteAbort { epoch: usize, step: u64 },
}

pub struct TrainOutput {
    /// Checkpoint with the best validation loss.
    pub params: NetworkParams,
    pub history: Vec<EpochStats>,
    pub stop: StopReason,
}

/// Unsupervised training: minibatch negative-mean-throughput loss through
/// the recorded graph, Adam updates on the staircase schedule, running
/// batch-norm statistics, per-epoch validation, early stopping on the
/// training loss, model selection on the validation loss.
///
/// The minibatch partition comes from one seeded shuffle and is reused
/// every epoch, so frozen parameters imply identical epoch losses (which
/// the early-stopping contract relies on). A trailing batch of size 1 is
/// dropped (batch norm needs two samples).
pub fn train(
    train_set: &Dataset,
    val_set: &Dataset,
    params: NetworkParams,
    cfg: &TrainConfig,
    system: &SystemParams,
) -> Result<TrainOutput, IrsNetError> {
    cfg.validate()?;
    params.arch.validate()?;
    let f_len = params.arch.feature_len;
    for (ds, what) in [(train_set, "training set"), (val_set, "validation set")] {
        if ds.feature_len() != f_len {
            return Err(IrsNetError::Dimension {
                what: "dataset feature length",
                expected: f_len,
                got: ds.feature_len(),
            });
        }
        if ds.features.is_empty() {
            return Err(IrsNetError::Config(format!("{what} is empty")));
        }
        if ds.elements != params.arch.elements {
            return Err(IrsNetError::Dimension {
                what: "dataset elements",
                expected: params.arch.elements,
                got: ds.elements,
            });
        }
    }
    if system.antennas != train_set.antennas || system.elements != train_set.elements {
        return Err(IrsNetError::Config("system dimensions do not match the dataset".into()));
    }
    if system.interferer_power > 0.0 && !train_set.interference {
        return Err(IrsNetError::Config(
            "interferer power set but the dataset is noise-limited".into(),
        ));
    }

    let mut params = params;
    let scale = params.feature_scale.clone();
    let mut graphs: HashMap<usize, LossGraph> = HashMap::new();

    let mut flat = Vec::new();
    params.pack_trainable(&mut flat);
    let mut grads = Vec::with_capacity(flat.len());
    let mut adam = AdamState::new(flat.len());

    let mut best_train = f64::INFINITY;
    let mut stale_epochs = 0usize;
    let mut best_val = f64::INFINITY;
    let mut best_params = params.clone();
    let mut history = Vec::new();
    let mut step: u64 = 0;

    let n_train = train_set.features.len();
    let mut order: Vec<usize> = (0..n_train).collect();
    shuffle(&mut order, SplitMix64::derive(cfg.seed, 0));

    for epoch in 1..=cfg.max_epochs {
        let epoch_lr = lr_schedule(step, cfg.initial_lr, cfg.decay_rate, cfg.decay_steps);

        let mut loss_acc = 0.0;
        let mut sample_count = 0usize;
        let mut batch_feats: Vec<FeatureVector> = Vec::with_capacity(cfg.batch_size);
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            batch_feats.clear();
            batch_feats.extend(chunk.iter().map(|&i| train_set.features[i].clone()));

            let graph = graphs.entry(chunk.len()).or_insert_with(|| {
                LossGraph::build(&params.arch, train_set.interference, system, chunk.len())
            });
            graph.bind_network(&params);
            graph.bind_batch(&batch_feats, scale.as_deref());

            let loss = graph
                .tape
                .forward(graph.loss)
                .map_err(|e| IrsNetError::Config(format!("forward failed: {e}")))?;
            if !loss.is_finite() {
                return Ok(TrainOutput {
                    params: best_params,
                    history,
                    stop: StopReason::NonFiniteAbort { epoch, step },
                });
            }
            graph
                .tape
                .backward(graph.loss)
                .map_err(|e| IrsNetError::Config(format!("backward failed: {e}")))?;
            graph.read_gradients(&mut grads);

            let lr = lr_schedule(step, cfg.initial_lr, cfg.decay_rate, cfg.decay_steps);
            if adam_step(&mut flat, &grads, &mut adam, lr).is_err() {
                return Ok(TrainOutput {
                    params: best_params,
                    history,
                    stop: StopReason::NonFiniteAbort { epoch, step },
                });
            }
            params.unpack_trainable(&flat);

            for (li, bn) in params.batch_norm.iter_mut().enumerate() {
                let (mu, var) = graph.batch_stats(li);
                for c in 0..bn.running_mean.len() {
                    bn.running_mean[c] =
                        params.bn_momentum * bn.running_mean[c] + (1.0 - params.bn_momentum) * mu[c];
                    bn.running_var[c] =
                        params.bn_momentum * bn.running_var[c] + (1.0 - params.bn_momentum) * var[c];
                }
            }

            step += 1;
            loss_acc += loss * chunk.len() as f64;
            sample_count += chunk.len();
        }
        if sample_count == 0 {
            return Err(IrsNetError::Config("no usable minibatch (need 2+ samples)".into()));
        }
        let train_loss = loss_acc / sample_count as f64;
        let val_loss = validation_loss(&params, val_set, system)?;
        history.push(EpochStats { epoch, train_loss, val_loss, lr: epoch_lr });

        if val_loss < best_val {
            best_val = val_loss;
            best_params = params.clone();
        }
        if train_loss < best_train {
            best_train = train_loss;
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs >= cfg.patience {
                return Ok(TrainOutput {
                    params: best_params,
                    history,
                    stop: StopReason::EarlyStopped { epoch },
                });
            }
        }
    }
    Ok(TrainOutput { params: best_params, history, stop: StopReason::MaxEpochs })
}

/// Negative mean throughput of inference-mode decisions over a dataset.
pub fn validation_loss(
    params: &NetworkParams,
    ds: &Dataset,
    system: &SystemParams,
) -> Result<f64, IrsNetError> {
    let configs = forward(params, &ds.features, Mode::Inference)?;
    let mut acc = 0.0;
    for (f, cfg) in ds.features.iter().zip(&configs) {
        acc += crate::evaluator::throughput(f, cfg, system)
            .map_err(|e| IrsNetError::Config(format!("evaluation failed: {e}")))?;
    }
    Ok(-(acc / ds.features.len() as f64))
}

fn shuffle(order: &mut [usize], seed: u64) {
    let mut rng = SplitMix64::new(seed);
    for i in (1..order.len()).rev() {
        let j = rng.next_below(i as u64 + 1) as usize;
        order.swap(i, j);
    }
}

pub fn save_checkpoint(params: &NetworkParams, path: &Path) -> Result<(), IrsNetError> {
    let json = serde_json::to_string_pretty(params)
        .map_err(|e| IrsNetError::Parse { path: path.to_path_buf(), message: e.to_string() })?;
    std::fs::write(path, json.as_bytes())
        .map_err(|source| IrsNetError::Io { path: path.to_path_buf(), source })
}

/// Strict load: unknown or missing fields are rejected, never defaulted,
/// and every array length is validated against the architecture.
pub fn load_checkpoint(path: &Path) -> Result<NetworkParams, IrsNetError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| IrsNetError::Io { path: path.to_path_buf(), source })?;
    let params: NetworkParams = serde_json::from_str(&text)
        .map_err(|e| IrsNetError::Parse { path: path.to_path_buf(), message: e.to_string() })?;
    if params.version != CHECKPOINT_VERSION {
        return Err(IrsNetError::Parse {
            path: path.to_path_buf(),
            message: format!("unsupported version {}", params.version),
        });
    }
    params.arch.validate()?;
    let dims = params.arch.layer_dims();
    if params.layers.len() != dims.len() {
        return Err(IrsNetError::Parse {
            path: path.to_path_buf(),
            message: format!("expected {} layers, found {}", dims.len(), params.layers.len()),
        });
    }
    for (i, ((fan_in, fan_out), layer)) in dims.iter().zip(&params.layers).enumerate() {
        if layer.weights.len() != fan_in * fan_out || layer.bias.len() != *fan_out {
            return Err(IrsNetError::Parse {
                path: path.to_path_buf(),
                message: format!("layer {i} has inconsistent array lengths"),
            });
        }
    }
    if params.batch_norm.len() != params.arch.hidden.len() {
        return Err(IrsNetError::Parse {
            path: path.to_path_buf(),
            message: "batch_norm count does not match hidden layers".into(),
        });
    }
    for (i, (bn, &h)) in params.batch_norm.iter().zip(&params.arch.hidden).enumerate() {
        if bn.gamma.len() != h
            || bn.beta.len() != h
            || bn.running_mean.len() != h
            || bn.running_var.len() != h
        {
            return Err(IrsNetError::Parse {
                path: path.to_path_buf(),
                message: format!("norm layer {i} has inconsistent array lengths"),
            });
        }
        if bn.running_var.iter().any(|&v| v <= 0.0) {
            return Err(IrsNetError::Parse {
                path: path.to_path_buf(),
                message: format!("norm layer {i} running variance must be positive"),
            });
        }
    }
    if let Some(scale) = &params.feature_scale {
        if scale.len() != params.arch.feature_len {
            return Err(IrsNetError::Parse {
                path: path.to_path_buf(),
                message: "feature_scale length does not match the architecture".into(),
            });
        }
    }
    Ok(params)
}

//! Encoder/decoder tree pairs and their online training loop.
//!
//! The encoder maps `x ∈ R^d` to `h ∈ R^k`, the decoder maps `h` back to
//! `x̂ ∈ R^d`, and both are trained jointly on `½‖x − x̂‖²` one instance at a
//! time with diagonal AdaGrad. Trees start shallow and every leaf of both trees
//! is split on a fixed epoch schedule until the configured depth is reached.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_io::Dataset;
use crate::error::{Error, Result};
use crate::linalg;
use crate::soft_tree::{ForwardTrace, LeafKind, ParamGrads, SoftTree, TreeInit};

/// Added to `sqrt(G)` in the AdaGrad denominator.
pub const ADAGRAD_EPSILON: f64 = 1e-8;

/// Anything that maps an input to a same-sized reconstruction.
pub trait Reconstruct: Sync {
    fn input_dim(&self) -> usize;

    fn reconstruction(&self, x: &[f64]) -> Result<Vec<f64>>;
}

/// Scale in which reconstruction error is reported. Both use per-dimension
/// RMSE; the word scale additionally requires per-word max-count normalisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ErrorScale {
    #[default]
    Pixel,
    WordMaxCount,
}

/// Root-mean-squared reconstruction error per dimension.
///
/// Instances are reconstructed in parallel; the per-instance sums are reduced
/// sequentially in instance order, so the result does not depend on thread count.
pub fn evaluate<M: Reconstruct + ?Sized>(model: &M, data: &Dataset, scale: ErrorScale) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Input("cannot evaluate on an empty dataset".into()));
    }
    if data.dim() != model.input_dim() {
        return Err(Error::Structural(format!(
            "model expects {}-dimensional data, dataset has {}",
            model.input_dim(),
            data.dim()
        )));
    }
    if scale == ErrorScale::WordMaxCount && data.dim_scale().is_none() {
        return Err(Error::Input("word-scale error needs max-count normalised data".into()));
    }
    let per_instance: Vec<f64> = data
        .as_flat()
        .par_chunks_exact(data.dim())
        .map(|x| model.reconstruction(x).map(|x_hat| linalg::squared_distance(x, &x_hat)))
        .collect::<Result<_>>()?;
    let total: f64 = per_instance.iter().sum();
    Ok((total / (data.len() * data.dim()) as f64).sqrt())
}

/// Hyperparameters of the training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub total_epochs: usize,
    pub grow_every: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub l2_strength: f64,
    pub noise_scale: f64,
    /// Standard deviation of freshly created gate weights.
    pub gate_init_scale: f64,
    /// Standard deviation of leaf parameters in the initial trees.
    pub leaf_init_scale: f64,
    pub seed: u64,
    pub leaf_kind: LeafKind,
    pub latent_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_epochs: 240,
            grow_every: 40,
            max_depth: 6,
            learning_rate: 0.01,
            l2_strength: 1e-4,
            noise_scale: 0.01,
            gate_init_scale: 0.01,
            leaf_init_scale: 0.1,
            seed: 0,
            leaf_kind: LeafKind::Constant,
            latent_dim: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.total_epochs < 1 {
            return fail("total_epochs must be at least 1".into());
        }
        if self.grow_every < 1 {
            return fail("grow_every must be at least 1".into());
        }
        if self.max_depth < 2 {
            return fail(format!("max_depth must be at least 2, got {}", self.max_depth));
        }
        if self.latent_dim < 1 {
            return fail("latent dimension must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        for (name, v) in [
            ("l2_strength", self.l2_strength),
            ("noise_scale", self.noise_scale),
            ("gate_init_scale", self.gate_init_scale),
            ("leaf_init_scale", self.leaf_init_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        Ok(())
    }

    /// Tree depth in effect during `epoch` (1-based) under the growth schedule.
    pub fn depth_at_epoch(&self, epoch: usize) -> usize {
        (2 + (epoch - 1) / self.grow_every).min(self.max_depth)
    }

    fn tree_init(&self) -> TreeInit {
        TreeInit {
            gate_scale: self.gate_init_scale,
            leaf_scale: self.leaf_init_scale,
        }
    }
}

/// Intermediate values of one encode/decode pass.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub hidden: Vec<f64>,
    pub output: Vec<f64>,
    pub encoder_trace: ForwardTrace,
    pub decoder_trace: ForwardTrace,
}

/// Gradients of `½‖x − x̂‖²` (plus the optional L2 term) for both trees.
#[derive(Debug, Clone)]
pub struct PairGradients {
    /// Data loss before any update.
    pub loss: f64,
    pub encoder: ParamGrads,
    pub decoder: ParamGrads,
    /// `∂E/∂h`, the error passed from the decoder back into the encoder.
    pub hidden: Vec<f64>,
}

/// Encoder tree chained into a decoder tree.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderPair {
    pub encoder: SoftTree,
    pub decoder: SoftTree,
}

impl AutoencoderPair {
    pub fn new(encoder: SoftTree, decoder: SoftTree) -> Result<Self> {
        if encoder.output_dim() != decoder.input_dim() {
            return Err(Error::Structural(format!(
                "encoder emits {} dimensions but decoder reads {}",
                encoder.output_dim(),
                decoder.input_dim()
            )));
        }
        if decoder.output_dim() != encoder.input_dim() {
            return Err(Error::Structural(format!(
                "decoder emits {} dimensions, expected {}",
                decoder.output_dim(),
                encoder.input_dim()
            )));
        }
        Ok(Self { encoder, decoder })
    }

    /// Fresh depth-2 trees for `input_dim`-dimensional data, seeded from `cfg.seed`.
    pub fn initialize(input_dim: usize, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if input_dim == 0 {
            return Err(Error::Input("input dimension must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let k = cfg.latent_dim;
        let encoder = SoftTree::random(input_dim, k, 2, cfg.leaf_kind, cfg.tree_init(), &mut rng)?;
        let decoder = SoftTree::random(k, input_dim, 2, cfg.leaf_kind, cfg.tree_init(), &mut rng)?;
        Self::new(encoder, decoder)
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn depth(&self) -> usize {
        self.encoder.depth().max(self.decoder.depth())
    }

    pub fn reconstruct(&self, x: &[f64]) -> Result<Reconstruction> {
        let encoder_trace = self.encoder.forward(x)?;
        let hidden = encoder_trace.output().to_vec();
        let decoder_trace = self.decoder.forward(&hidden)?;
        let output = decoder_trace.output().to_vec();
        Ok(Reconstruction {
            hidden,
            output,
            encoder_trace,
            decoder_trace,
        })
    }

    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.encoder.predict(x)
    }

    /// `½‖x − x̂‖²`, without any regularisation term.
    pub fn instance_loss(&self, x: &[f64]) -> Result<f64> {
        let rec = self.reconstruct(x)?;
        Ok(0.5 * linalg::squared_distance(x, &rec.output))
    }

    /// Chained gradients for one instance. The root responsibility of the
    /// decoder is `x̂ − x`; its input gradient becomes the encoder's root
    /// responsibility. `l2_strength · θ` is added to every parameter gradient.
    pub fn gradients(&self, x: &[f64], l2_strength: f64) -> Result<PairGradients> {
        let rec = self.reconstruct(x)?;
        let delta: Vec<f64> = rec.output.iter().zip(x).map(|(xh, xi)| xh - xi).collect();
        let loss = 0.5 * delta.iter().map(|v| v * v).sum::<f64>();
        let back = self.decoder.backward(&rec.decoder_trace, &delta)?;
        let mut decoder = back.params;
        let mut encoder = self.encoder.backward_parameters(&rec.encoder_trace, &back.input)?;
        decoder.add_l2(&self.decoder, l2_strength);
        encoder.add_l2(&self.encoder, l2_strength);
        Ok(PairGradients {
            loss,
            encoder,
            decoder,
            hidden: back.input,
        })
    }

    /// Splits every leaf of both trees.
    pub fn grow(&self, gate_init_scale: f64, noise_scale: f64, rng: &mut ChaCha8Rng) -> Self {
        Self {
            encoder: self.encoder.split_all_leaves(gate_init_scale, noise_scale, rng),
            decoder: self.decoder.split_all_leaves(gate_init_scale, noise_scale, rng),
        }
    }
}

impl Reconstruct for AutoencoderPair {
    fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    fn reconstruction(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.decoder.predict(&self.encoder.predict(x)?)
    }
}

/// `G += g²; θ −= lr · g / (√G + ε)`, elementwise.
pub fn adagrad_update(accumulator: &mut [f64], param: &mut [f64], grad: &[f64], learning_rate: f64, epsilon: f64) {
    debug_assert!(accumulator.len() == param.len() && param.len() == grad.len());
    for ((acc, p), &g) in accumulator.iter_mut().zip(param.iter_mut()).zip(grad) {
        *acc += g * g;
        *p -= learning_rate * g / (acc.sqrt() + epsilon);
    }
}

/// Squared-gradient accumulators for one tree, one block per parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeAccumulators {
    blocks: Vec<Vec<f64>>,
}

impl TreeAccumulators {
    pub fn for_tree(tree: &SoftTree) -> Self {
        Self {
            blocks: tree.param_blocks().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    /// Accumulators for `grown`, which was produced by splitting the leaves of
    /// a tree with `old_internal` gates. Surviving gates keep their history;
    /// every new parameter starts from zero.
    pub fn after_growth(&self, old_internal: usize, grown: &SoftTree) -> Self {
        let mut next = Self::for_tree(grown);
        for (dst, src) in next.blocks.iter_mut().zip(&self.blocks).take(old_internal) {
            dst.copy_from_slice(src);
        }
        next
    }

    pub fn blocks(&self) -> &[Vec<f64>] {
        &self.blocks
    }

    fn apply(&mut self, tree: &mut SoftTree, grads: &ParamGrads, learning_rate: f64, epsilon: f64) {
        for ((acc, param), grad) in self.blocks.iter_mut().zip(tree.param_blocks_mut()).zip(grads.blocks()) {
            adagrad_update(acc, param, grad, learning_rate, epsilon);
        }
    }
}

/// Diagonal AdaGrad state for both trees of a pair.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub encoder: TreeAccumulators,
    pub decoder: TreeAccumulators,
    pub epsilon: f64,
}

impl OptimizerState {
    pub fn new(pair: &AutoencoderPair) -> Self {
        Self {
            encoder: TreeAccumulators::for_tree(&pair.encoder),
            decoder: TreeAccumulators::for_tree(&pair.decoder),
            epsilon: ADAGRAD_EPSILON,
        }
    }

    fn after_growth(&self, old: &AutoencoderPair, grown: &AutoencoderPair) -> Self {
        Self {
            encoder: self.encoder.after_growth(old.encoder.internal_count(), &grown.encoder),
            decoder: self.decoder.after_growth(old.decoder.internal_count(), &grown.decoder),
            epsilon: self.epsilon,
        }
    }
}

/// One online update on instance `x`. Returns the loss before the update.
pub fn train_step(pair: &mut AutoencoderPair, x: &[f64], opt: &mut OptimizerState, cfg: &TrainConfig) -> Result<f64> {
    let grads = pair.gradients(x, cfg.l2_strength)?;
    if !(grads.loss.is_finite() && grads.encoder.is_finite() && grads.decoder.is_finite()) {
        return Err(Error::Diverged {
            epoch: 0,
            instance: 0,
            detail: format!("non-finite gradient (loss {})", grads.loss),
        });
    }
    opt.decoder
        .apply(&mut pair.decoder, &grads.decoder, cfg.learning_rate, opt.epsilon);
    opt.encoder
        .apply(&mut pair.encoder, &grads.encoder, cfg.learning_rate, opt.epsilon);
    Ok(grads.loss)
}

/// Statistics recorded after one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Per-dimension RMSE over the pre-update reconstructions of the epoch.
    pub train_error: f64,
    /// Per-dimension RMSE on the held-out set with parameters frozen at epoch end.
    pub test_error: Option<f64>,
    /// Tree depth during the epoch (for baselines: the training stage).
    pub depth: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Hooks invoked by [`train`].
pub trait TrainObserver {
    fn on_epoch(&mut self, _record: &EpochRecord, _pair: &AutoencoderPair) -> Result<()> {
        Ok(())
    }

    /// Called with the pre-growth pair right before its leaves are split.
    fn before_growth(&mut self, _epoch: usize, _pair: &AutoencoderPair) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

/// Whether leaves are split at the end of `epoch` (1-based).
fn grows_after(epoch: usize, depth: usize, cfg: &TrainConfig) -> bool {
    epoch.is_multiple_of(cfg.grow_every) && epoch < cfg.total_epochs && depth < cfg.max_depth
}

/// Online training with layer-wise growth.
///
/// Each epoch visits the training set in a fresh seeded order, records the
/// mean pre-update error and the post-epoch test error, then, every
/// `grow_every` epochs and while below `max_depth`, splits every leaf of both
/// trees. All parameters stay trainable after growth.
pub fn train(
    pair: &mut AutoencoderPair,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    if train_set.dim() != pair.input_dim() {
        return Err(Error::Structural(format!(
            "pair expects {}-dimensional data, training set has {}",
            pair.input_dim(),
            train_set.dim()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut opt = OptimizerState::new(pair);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = TrainHistory::default();
    let scale = if train_set.dim_scale().is_some() {
        ErrorScale::WordMaxCount
    } else {
        ErrorScale::Pixel
    };

    for epoch in 1..=cfg.total_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (position, &i) in order.iter().enumerate() {
            loss_sum += train_step(pair, train_set.row(i), &mut opt, cfg).map_err(|e| match e {
                Error::Diverged { detail, .. } => Error::Diverged {
                    epoch,
                    instance: position,
                    detail: format!("{detail}; training instance #{i}"),
                },
                other => other,
            })?;
        }
        let train_error = (2.0 * loss_sum / (train_set.len() * train_set.dim()) as f64).sqrt();
        let test_error = test_set.map(|t| evaluate(pair, t, scale)).transpose()?;
        let record = EpochRecord {
            epoch,
            train_error,
            test_error,
            depth: pair.depth(),
        };
        observer.on_epoch(&record, pair)?;
        history.records.push(record);

        if grows_after(epoch, pair.depth(), cfg) {
            observer.before_growth(epoch, pair)?;
            let grown = pair.grow(cfg.gate_init_scale, cfg.noise_scale, &mut rng);
            opt = opt.after_growth(pair, &grown);
            *pair = grown;
        }
    }
    Ok(history)
}

//! Perceptron autoencoder baselines: a single tanh layer with a linear
//! decoder, and a two-stage stack that first compresses to 50 dimensions.
//! Both train with the same objective, optimiser and regularisation as the
//! tree pairs so their error curves are directly comparable.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autoencoder::{
    adagrad_update, evaluate, EpochRecord, ErrorScale, Reconstruct, TrainConfig, TrainHistory, ADAGRAD_EPSILON,
};
use crate::data_io::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{self, augment};

/// Width of the first stage of [`StackedAutoencoder`].
pub const STACKED_HIDDEN_DIM: usize = 50;

/// Weight initialisation scale (biases start at zero).
pub const MLP_INIT_SCALE: f64 = 0.01;

/// `h = tanh(W [x; 1])`, `x̂ = W' [h; 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceptronAutoencoder {
    input_dim: usize,
    latent_dim: usize,
    /// Row-major `latent_dim × (input_dim + 1)`.
    encoder: Vec<f64>,
    /// Row-major `input_dim × (latent_dim + 1)`.
    decoder: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradients {
    pub loss: f64,
    pub encoder: Vec<f64>,
    pub decoder: Vec<f64>,
}

impl PerceptronAutoencoder {
    pub fn from_weights(input_dim: usize, latent_dim: usize, encoder: Vec<f64>, decoder: Vec<f64>) -> Result<Self> {
        if encoder.len() != latent_dim * (input_dim + 1) || decoder.len() != input_dim * (latent_dim + 1) {
            return Err(Error::Structural(format!(
                "weight buffers ({}, {}) do not fit a {input_dim}→{latent_dim} perceptron",
                encoder.len(),
                decoder.len()
            )));
        }
        if !(linalg::all_finite(&encoder) && linalg::all_finite(&decoder)) {
            return Err(Error::Input("perceptron weights must be finite".into()));
        }
        Ok(Self {
            input_dim,
            latent_dim,
            encoder,
            decoder,
        })
    }

    /// Normal weights with standard deviation `scale`, zero biases.
    pub fn random<R: Rng + ?Sized>(input_dim: usize, latent_dim: usize, scale: f64, rng: &mut R) -> Self {
        let mut draw = |rows: usize, cols: usize| -> Vec<f64> {
            let mut m = Vec::with_capacity(rows * (cols + 1));
            for _ in 0..rows {
                m.extend((0..cols).map(|_| scale * rng.sample::<f64, _>(StandardNormal)));
                m.push(0.0);
            }
            m
        };
        let encoder = draw(latent_dim, input_dim);
        let decoder = draw(input_dim, latent_dim);
        Self {
            input_dim,
            latent_dim,
            encoder,
            decoder,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn encoder_weights(&self) -> &[f64] {
        &self.encoder
    }

    pub fn decoder_weights(&self) -> &[f64] {
        &self.decoder
    }

    pub fn encoder_weights_mut(&mut self) -> &mut [f64] {
        &mut self.encoder
    }

    pub fn decoder_weights_mut(&mut self) -> &mut [f64] {
        &mut self.decoder
    }

    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::Structural(format!(
                "perceptron expects input of length {}, got {}",
                self.input_dim,
                x.len()
            )));
        }
        let mut h = vec![0.0; self.latent_dim];
        linalg::matvec(&self.encoder, &augment(x), &mut h);
        h.iter_mut().for_each(|v| *v = v.tanh());
        Ok(h)
    }

    pub fn decode(&self, h: &[f64]) -> Result<Vec<f64>> {
        if h.len() != self.latent_dim {
            return Err(Error::Structural(format!(
                "decoder expects code of length {}, got {}",
                self.latent_dim,
                h.len()
            )));
        }
        let mut x_hat = vec![0.0; self.input_dim];
        linalg::matvec(&self.decoder, &augment(h), &mut x_hat);
        Ok(x_hat)
    }

    /// Returns `(h, x̂)`.
    pub fn mlp_reconstruct(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let h = self.encode(x)?;
        let x_hat = self.decode(&h)?;
        Ok((h, x_hat))
    }

    /// Backpropagated gradients of `½‖x − x̂‖²` plus `l2_strength · θ`.
    pub fn gradients(&self, x: &[f64], l2_strength: f64) -> Result<MlpGradients> {
        let (h, x_hat) = self.mlp_reconstruct(x)?;
        let x_aug = augment(x);
        let h_aug = augment(&h);
        let delta_out: Vec<f64> = x_hat.iter().zip(x).map(|(a, b)| a - b).collect();
        let loss = 0.5 * delta_out.iter().map(|v| v * v).sum::<f64>();

        let mut decoder = vec![0.0; self.decoder.len()];
        linalg::rank_one_acc(1.0, &delta_out, &h_aug, &mut decoder);

        let mut delta_hidden = vec![0.0; self.latent_dim + 1];
        linalg::matvec_transpose_acc(&self.decoder, &delta_out, &mut delta_hidden);
        delta_hidden.truncate(self.latent_dim);
        for (dh, hv) in delta_hidden.iter_mut().zip(&h) {
            *dh *= 1.0 - hv * hv;
        }
        let mut encoder = vec![0.0; self.encoder.len()];
        linalg::rank_one_acc(1.0, &delta_hidden, &x_aug, &mut encoder);

        if l2_strength != 0.0 {
            linalg::axpy(l2_strength, &self.encoder, &mut encoder);
            linalg::axpy(l2_strength, &self.decoder, &mut decoder);
        }
        Ok(MlpGradients { loss, encoder, decoder })
    }

    /// Fraction of hidden activations with `|h| > 0.99` over `data`.
    pub fn saturation_fraction(&self, data: &Dataset) -> Result<f64> {
        let mut saturated = 0usize;
        for x in data.rows() {
            saturated += self.encode(x)?.iter().filter(|h| h.abs() > 0.99).count();
        }
        Ok(saturated as f64 / (data.len() * self.latent_dim).max(1) as f64)
    }
}

impl Reconstruct for PerceptronAutoencoder {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn reconstruction(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.mlp_reconstruct(x)?.1)
    }
}

/// AdaGrad accumulators for a perceptron autoencoder.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpOptimizerState {
    pub encoder: Vec<f64>,
    pub decoder: Vec<f64>,
    pub epsilon: f64,
}

impl MlpOptimizerState {
    pub fn new(model: &PerceptronAutoencoder) -> Self {
        Self {
            encoder: vec![0.0; model.encoder.len()],
            decoder: vec![0.0; model.decoder.len()],
            epsilon: ADAGRAD_EPSILON,
        }
    }
}

/// One online update; returns the loss before the update.
pub fn mlp_train_step(
    model: &mut PerceptronAutoencoder,
    x: &[f64],
    opt: &mut MlpOptimizerState,
    cfg: &TrainConfig,
) -> Result<f64> {
    let grads = model.gradients(x, cfg.l2_strength)?;
    if !(grads.loss.is_finite() && linalg::all_finite(&grads.encoder) && linalg::all_finite(&grads.decoder)) {
        return Err(Error::Diverged {
            epoch: 0,
            instance: 0,
            detail: format!("non-finite perceptron gradient (loss {})", grads.loss),
        });
    }
    adagrad_update(
        &mut opt.decoder,
        &mut model.decoder,
        &grads.decoder,
        cfg.learning_rate,
        opt.epsilon,
    );
    adagrad_update(
        &mut opt.encoder,
        &mut model.encoder,
        &grads.encoder,
        cfg.learning_rate,
        opt.epsilon,
    );
    Ok(grads.loss)
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn error_scale(data: &Dataset) -> ErrorScale {
    if data.dim_scale().is_some() {
        ErrorScale::WordMaxCount
    } else {
        ErrorScale::Pixel
    }
}

/// Online epochs over `data`; `on_epoch(epoch, model, pre_update_rmse)` runs after each one.
fn fit(
    model: &mut PerceptronAutoencoder,
    data: &Dataset,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    mut on_epoch: impl FnMut(usize, &PerceptronAutoencoder, f64) -> Result<()>,
) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    let mut opt = MlpOptimizerState::new(model);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 1..=cfg.total_epochs {
        order.shuffle(rng);
        let mut loss_sum = 0.0;
        for (position, &i) in order.iter().enumerate() {
            loss_sum += mlp_train_step(model, data.row(i), &mut opt, cfg).map_err(|e| match e {
                Error::Diverged { detail, .. } => Error::Diverged {
                    epoch,
                    instance: position,
                    detail,
                },
                other => other,
            })?;
        }
        let rmse = (2.0 * loss_sum / (data.len() * data.dim()) as f64).sqrt();
        on_epoch(epoch, model, rmse)?;
    }
    Ok(())
}

/// Trains a single-layer perceptron autoencoder with latent width `cfg.latent_dim`.
pub fn train_perceptron(
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<(PerceptronAutoencoder, TrainHistory)> {
    cfg.validate()?;
    let mut model = PerceptronAutoencoder::random(
        train_set.dim(),
        cfg.latent_dim,
        MLP_INIT_SCALE,
        &mut stream_rng(cfg.seed, 0),
    );
    let mut history = TrainHistory::default();
    let scale = error_scale(train_set);
    fit(
        &mut model,
        train_set,
        cfg,
        &mut stream_rng(cfg.seed, 1),
        |epoch, m, train_error| {
            history.records.push(EpochRecord {
                epoch,
                train_error,
                test_error: test_set.map(|t| evaluate(m, t, scale)).transpose()?,
                depth: 1,
            });
            Ok(())
        },
    )?;
    Ok((model, history))
}

/// Two perceptron autoencoders in sequence: `d → 50 → k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedAutoencoder {
    pub stage1: PerceptronAutoencoder,
    pub stage2: PerceptronAutoencoder,
}

impl StackedAutoencoder {
    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.stage2.encode(&self.stage1.encode(x)?)
    }
}

impl Reconstruct for StackedAutoencoder {
    fn input_dim(&self) -> usize {
        self.stage1.input_dim
    }

    fn reconstruction(&self, x: &[f64]) -> Result<Vec<f64>> {
        let inner = self.stage2.reconstruction(&self.stage1.encode(x)?)?;
        self.stage1.decode(&inner)
    }
}

fn encode_all(model: &PerceptronAutoencoder, data: &Dataset) -> Result<Dataset> {
    let mut codes = Vec::with_capacity(data.len() * model.latent_dim);
    for x in data.rows() {
        codes.extend(model.encode(x)?);
    }
    Dataset::new(model.latent_dim, codes)
}

/// Layer-wise training of the stacked baseline. Stage one learns `d → 50` on
/// the raw data; stage two learns `50 → k` on stage-one codes. The history has
/// `2 · total_epochs` records: stage-one records (depth 1) measure stage-one
/// reconstructions, stage-two records (depth 2) measure the full
/// `dec1(dec2(enc2(enc1(x))))` reconstruction on both sets after each epoch.
/// There is no end-to-end fine-tuning.
pub fn stacked_train(
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<(StackedAutoencoder, TrainHistory)> {
    cfg.validate()?;
    let d = train_set.dim();
    let scale = error_scale(train_set);
    let mut history = TrainHistory::default();

    let mut stage1 = PerceptronAutoencoder::random(d, STACKED_HIDDEN_DIM, MLP_INIT_SCALE, &mut stream_rng(cfg.seed, 0));
    fit(
        &mut stage1,
        train_set,
        cfg,
        &mut stream_rng(cfg.seed, 1),
        |epoch, m, train_error| {
            history.records.push(EpochRecord {
                epoch,
                train_error,
                test_error: test_set.map(|t| evaluate(m, t, scale)).transpose()?,
                depth: 1,
            });
            Ok(())
        },
    )?;

    let codes = encode_all(&stage1, train_set)?;
    let mut stage2 = PerceptronAutoencoder::random(
        STACKED_HIDDEN_DIM,
        cfg.latent_dim,
        MLP_INIT_SCALE,
        &mut stream_rng(cfg.seed, 2),
    );
    let epochs = cfg.total_epochs;
    fit(&mut stage2, &codes, cfg, &mut stream_rng(cfg.seed, 3), |epoch, m, _| {
        let stacked = StackedAutoencoder {
            stage1: stage1.clone(),
            stage2: m.clone(),
        };
        history.records.push(EpochRecord {
            epoch: epochs + epoch,
            train_error: evaluate(&stacked, train_set, scale)?,
            test_error: test_set.map(|t| evaluate(&stacked, t, scale)).transpose()?,
            depth: 2,
        });
        Ok(())
    })?;

    Ok((StackedAutoencoder { stage1, stage2 }, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_model_outputs_zero() {
        let model = PerceptronAutoencoder::from_weights(3, 2, vec![0.0; 8], vec![0.0; 9]).unwrap();
        let (h, x_hat) = model.mlp_reconstruct(&[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(h, vec![0.0, 0.0]);
        assert_eq!(x_hat, vec![0.0; 3]);
    }

    #[test]
    fn bias_only_decoder_is_constant() {
        // decoder rows are [w_h1, w_h2, bias]
        let decoder = vec![0.0, 0.0, 0.3, 0.0, 0.0, -0.7];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = PerceptronAutoencoder::random(2, 2, 1.0, &mut rng).encoder;
        let model = PerceptronAutoencoder::from_weights(2, 2, enc, decoder).unwrap();
        for x in [[0.0, 0.0], [5.0, -3.0]] {
            assert_eq!(model.mlp_reconstruct(&x).unwrap().1, vec![0.3, -0.7]);
        }
    }

    #[test]
    fn perfect_reconstruction_is_a_fixed_point() {
        let x = [0.2, 0.9];
        let decoder = vec![0.0, x[0], 0.0, x[1]];
        let mut model = PerceptronAutoencoder::from_weights(2, 1, vec![0.1, -0.3, 0.05], decoder).unwrap();
        let before = model.clone();
        let cfg = TrainConfig {
            l2_strength: 0.0,
            ..TrainConfig::default()
        };
        let mut opt = MlpOptimizerState::new(&model);
        assert_eq!(mlp_train_step(&mut model, &x, &mut opt, &cfg).unwrap(), 0.0);
        assert_eq!(model, before);
    }

    #[test]
    fn shape_errors() {
        assert!(PerceptronAutoencoder::from_weights(3, 2, vec![0.0; 7], vec![0.0; 9]).is_err());
        let model = PerceptronAutoencoder::from_weights(3, 2, vec![0.0; 8], vec![0.0; 9]).unwrap();
        assert!(matches!(model.mlp_reconstruct(&[1.0]), Err(Error::Structural(_))));
    }

    #[test]
    fn saturation_fraction_counts_large_activations() {
        // h = tanh(10 x), x ∈ {0, 1}
        let model = PerceptronAutoencoder::from_weights(1, 1, vec![10.0, 0.0], vec![0.0, 0.0]).unwrap();
        let data = Dataset::from_rows(&[[0.0], [1.0], [1.0], [0.0]]).unwrap();
        assert_eq!(model.saturation_fraction(&data).unwrap(), 0.5);
    }
}

//! Training regimes and evaluation.
//!
//! Four ways to fit the same pieces:
//!
//! - [`train_decoder`]: the decoder alone. Every mini-batch updates the
//!   decoder weights *and* the latent codes of exactly the samples in the
//!   batch, so each sample's code receives one update per epoch.
//! - [`train_autoencoder`]: plain joint encoder+decoder training.
//! - [`train_encoder_on_frozen_decoder`]: fit an encoder to reproduce the
//!   representations a pre-trained, frozen decoder dictates.
//! - [`train_denoising_encoder`]: the same, but each epoch draws fresh
//!   input noise and uses the noisy batch as both input and target, which
//!   teaches the encoder to project off-manifold points onto the decoder's
//!   manifold.
//!
//! Epoch order is a pure function of `(shuffle_seed, epoch)`; all floating
//! point accumulation is in fixed order, so a config plus its seeds pins
//! the entire trajectory bit for bit.

use crate::analysis::{representation_score, RepScore};
use crate::error::{Error, Result};
use crate::latent::{infer_latents, init_latents, InferConfig, LatentTable};
use crate::loss::LossKind;
use crate::network::Network;
use crate::optim::{OptimKind, Optimizer};
use crate::rng::{Distribution, Rng};
use crate::tensor::Tensor;
use std::fmt::Write as _;
use std::time::Instant;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: LossKind,
    pub weight_optim: OptimKind,
    pub weight_lr: f64,
    pub weight_decay: f64,
    pub latent_lr: f64,
    pub latent_momentum: f64,
    pub latent_init_scale: f64,
    /// Input noise level; used only by the denoising trainer.
    pub noise_sd: f64,
    /// Clamp noised inputs back to [0, 1] (image data).
    pub clamp_unit: bool,
    /// Record a full-pass training loss every this many epochs.
    pub eval_cadence: usize,
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            loss: LossKind::Mse,
            weight_optim: OptimKind::adam_default(),
            weight_lr: 1e-3,
            weight_decay: 1e-5,
            latent_lr: 1e-2,
            latent_momentum: 0.9,
            latent_init_scale: 0.1,
            noise_sd: 0.0,
            clamp_unit: false,
            eval_cadence: 10,
            shuffle_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.epochs < 1 {
            problems.push("epochs must be >= 1".to_string());
        }
        if self.batch_size < 1 {
            problems.push("batch_size must be >= 1".to_string());
        }
        if self.weight_lr <= 0.0 || self.latent_lr <= 0.0 {
            problems.push("learning rates must be positive".to_string());
        }
        if self.weight_decay < 0.0 {
            problems.push("weight_decay must be >= 0".to_string());
        }
        if !(0.0..1.0).contains(&self.latent_momentum) {
            problems.push(format!("latent momentum {} outside [0, 1)", self.latent_momentum));
        }
        if self.noise_sd < 0.0 {
            problems.push("noise_sd must be >= 0".to_string());
        }
        if self.eval_cadence < 1 {
            problems.push("eval_cadence must be >= 1".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    fn hash(&self) -> u64 {
        let mut h: u64 = 0xCBF2_9CE4_8422_2325;
        for b in format!("{self:?}").bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
        h
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Test => write!(f, "test"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub pcc_mean: Option<f64>,
    /// Wall time since the start of the run. Kept out of the CSV so that
    /// equal seeds produce byte-identical metrics files.
    pub seconds: f64,
}

/// Per-epoch metrics plus the experiment identity that produced them.
#[derive(Clone, Debug, Default)]
pub struct MetricsLog {
    pub records: Vec<EpochRecord>,
    pub seed: u64,
    pub config_hash: u64,
}

impl MetricsLog {
    fn new(seed: u64, config_hash: u64) -> Self {
        MetricsLog { records: Vec::new(), seed, config_hash }
    }

    /// Append a record; epochs must be unique and increasing per split.
    pub fn push(&mut self, rec: EpochRecord) -> Result<()> {
        if let Some(prev) = self.records.iter().rev().find(|r| r.split == rec.split) {
            if prev.epoch >= rec.epoch {
                return Err(Error::contract(format!(
                    "{} epoch {} recorded after epoch {}",
                    rec.split, rec.epoch, prev.epoch
                )));
            }
        }
        self.records.push(rec);
        Ok(())
    }

    pub fn final_loss(&self, split: Split) -> Option<f64> {
        self.records.iter().rev().find(|r| r.split == split).map(|r| r.loss)
    }

    /// CSV with deterministic content: `epoch,split,loss,pcc_mean`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,split,loss,pcc_mean\n");
        for r in &self.records {
            let pcc = r.pcc_mean.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{}", r.epoch, r.split, r.loss, pcc);
        }
        out
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// True when the `window`-point moving average of the training-loss
    /// series never increases (up to `rel_slack` relative wiggle).
    pub fn train_ma_non_increasing(&self, window: usize, rel_slack: f64) -> bool {
        let losses: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.split == Split::Train)
            .map(|r| r.loss)
            .collect();
        if losses.len() <= window {
            return true;
        }
        let ma: Vec<f64> =
            losses.windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect();
        ma.windows(2).all(|p| p[1] <= p[0] * (1.0 + rel_slack) + f64::MIN_POSITIVE)
    }
}

/// Deterministic epoch ordering: a pure function of `(seed, epoch)`.
pub fn shuffle_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    Rng::with_stream(seed, epoch as u64).shuffled_indices(n)
}

fn batch_shape(batch: usize, per_sample: &[usize]) -> Vec<usize> {
    let mut s = vec![batch];
    s.extend_from_slice(per_sample);
    s
}

fn check_finite(loss: f64, epoch: usize, batch: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence {
            step: epoch,
            context: format!("non-finite loss in epoch {epoch}, batch {batch}"),
        })
    }
}

/// Mean per-sample loss of the decoder on its current latent table.
fn decoder_full_loss(decoder: &Network, table: &LatentTable, x: &Tensor, loss: LossKind) -> Result<f64> {
    let n = x.shape()[0];
    let chunk = 256;
    let mut losses = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let rows: Vec<usize> = (start..(start + chunk).min(n)).collect();
        let zb = table.gather(&rows).reshaped(&batch_shape(rows.len(), decoder.input_shape()))?;
        let (y, _) = decoder.forward(&zb)?;
        let xb = x.select_rows(&rows);
        let (per, _) = loss.per_sample(&y, &xb)?;
        losses.extend(per);
        start += chunk;
    }
    Ok(losses.iter().sum::<f64>() / n as f64)
}

/// Mean loss of an encoder+decoder pipeline on `x` against `targets`.
fn pipeline_loss(
    encoder: &Network,
    decoder: &Network,
    x: &Tensor,
    targets: &Tensor,
    loss: LossKind,
) -> Result<f64> {
    let n = x.shape()[0];
    let chunk = 256;
    let mut losses = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let rows: Vec<usize> = (start..(start + chunk).min(n)).collect();
        let xb = x.select_rows(&rows);
        let tb = targets.select_rows(&rows);
        let (z, _) = encoder.forward(&xb)?;
        let zin = z.reshaped(&batch_shape(rows.len(), decoder.input_shape()))?;
        let (y, _) = decoder.forward(&zin)?;
        let (per, _) = loss.per_sample(&y, &tb)?;
        losses.extend(per);
        start += chunk;
    }
    Ok(losses.iter().sum::<f64>() / n as f64)
}

fn check_decoder_output(decoder: &Network, x: &Tensor) -> Result<()> {
    if &x.shape()[1..] != decoder.output_shape() {
        return Err(Error::shape(format!(
            "data samples have shape {:?}, decoder produces {:?}",
            &x.shape()[1..],
            decoder.output_shape()
        )));
    }
    Ok(())
}

/// Joint training of decoder weights and per-sample codes.
///
/// Returns the trained latent table and the metrics log; the decoder is
/// updated in place.
pub fn train_decoder(
    x: &Tensor,
    decoder: &mut Network,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<(LatentTable, MetricsLog)> {
    cfg.validate()?;
    check_decoder_output(decoder, x)?;
    let n = x.shape()[0];
    let m = decoder.input_len();
    let mut table = init_latents(n, m, rng, cfg.latent_init_scale)?;
    table.set_hyper(cfg.latent_lr, cfg.latent_momentum);
    let mut opt = Optimizer::new(cfg.weight_optim, cfg.weight_lr, cfg.weight_decay, decoder)?;
    let mut log = MetricsLog::new(cfg.shuffle_seed, cfg.hash());
    let started = Instant::now();

    for epoch in 1..=cfg.epochs {
        let order = shuffle_order(cfg.shuffle_seed, epoch, n);
        for (batch_idx, rows) in order.chunks(cfg.batch_size).enumerate() {
            let zb = table.gather(rows).reshaped(&batch_shape(rows.len(), decoder.input_shape()))?;
            let (y, cache) = decoder.forward(&zb)?;
            let xb = x.select_rows(rows);
            let (loss, grad) = cfg.loss.compute(&y, &xb)?;
            check_finite(loss, epoch, batch_idx)?;
            let (grads, dz) = decoder.backward(&cache, &grad)?;
            opt.step(decoder, &grads)?;
            // Weight gradients are batch means; each code's gradient is
            // that of its own per-sample loss (mean over the sample's
            // elements only), matching test-time inference. The two differ
            // by exactly the batch size.
            let mut dz = dz.reshaped(&[rows.len(), m])?;
            dz.scale(rows.len() as f64);
            table.latent_step(rows, &dz)?;
        }
        if epoch % cfg.eval_cadence == 0 || epoch == cfg.epochs {
            let train_loss = decoder_full_loss(decoder, &table, x, cfg.loss)?;
            log.push(EpochRecord {
                epoch,
                split: Split::Train,
                loss: train_loss,
                pcc_mean: None,
                seconds: started.elapsed().as_secs_f64(),
            })?;
        }
    }
    Ok((table, log))
}

/// Standard joint autoencoder training; both networks updated in place.
pub fn train_autoencoder(
    x: &Tensor,
    encoder: &mut Network,
    decoder: &mut Network,
    cfg: &TrainConfig,
) -> Result<MetricsLog> {
    cfg.validate()?;
    check_decoder_output(decoder, x)?;
    if encoder.output_len() != decoder.input_len() {
        return Err(Error::shape(format!(
            "encoder emits {} values, decoder consumes {}",
            encoder.output_len(),
            decoder.input_len()
        )));
    }
    let n = x.shape()[0];
    let mut enc_opt = Optimizer::new(cfg.weight_optim, cfg.weight_lr, cfg.weight_decay, encoder)?;
    let mut dec_opt = Optimizer::new(cfg.weight_optim, cfg.weight_lr, cfg.weight_decay, decoder)?;
    let mut log = MetricsLog::new(cfg.shuffle_seed, cfg.hash());
    let started = Instant::now();

    for epoch in 1..=cfg.epochs {
        let order = shuffle_order(cfg.shuffle_seed, epoch, n);
        for (batch_idx, rows) in order.chunks(cfg.batch_size).enumerate() {
            let xb = x.select_rows(rows);
            let (z, enc_cache) = encoder.forward(&xb)?;
            let zin = z.reshaped(&batch_shape(rows.len(), decoder.input_shape()))?;
            let (y, dec_cache) = decoder.forward(&zin)?;
            let (loss, grad) = cfg.loss.compute(&y, &xb)?;
            check_finite(loss, epoch, batch_idx)?;
            let (dec_grads, dz) = decoder.backward(&dec_cache, &grad)?;
            let (enc_grads, _) = encoder.backward(&enc_cache, &dz.reshaped(z.shape())?)?;
            dec_opt.step(decoder, &dec_grads)?;
            enc_opt.step(encoder, &enc_grads)?;
        }
        if epoch % cfg.eval_cadence == 0 || epoch == cfg.epochs {
            let train_loss = pipeline_loss(encoder, decoder, x, x, cfg.loss)?;
            log.push(EpochRecord {
                epoch,
                split: Split::Train,
                loss: train_loss,
                pcc_mean: None,
                seconds: started.elapsed().as_secs_f64(),
            })?;
        }
    }
    Ok(log)
}

fn check_frozen(decoder: &Network) -> Result<()> {
    if !decoder.is_frozen() {
        return Err(Error::contract(
            "decoder must be frozen (Network::set_frozen) for encoder-only training".to_string(),
        ));
    }
    Ok(())
}

/// Train only the encoder against a frozen, pre-trained decoder: the
/// reconstruction loss is evaluated through the decoder, but only encoder
/// parameters move. `table` is the latent table the decoder was trained
/// with; it pins the sample alignment.
pub fn train_encoder_on_frozen_decoder(
    x: &Tensor,
    table: &LatentTable,
    encoder: &mut Network,
    decoder: &Network,
    cfg: &TrainConfig,
) -> Result<MetricsLog> {
    cfg.validate()?;
    check_frozen(decoder)?;
    if table.len() != x.shape()[0] {
        return Err(Error::contract(format!(
            "latent table holds {} rows but the data has {} samples",
            table.len(),
            x.shape()[0]
        )));
    }
    train_encoder_impl(x, encoder, decoder, cfg, None)
}

/// Denoising variant: each batch perturbs its samples with fresh Gaussian
/// noise and uses the noisy batch as both input and target, so the encoder
/// learns to project noisy points onto the frozen decoder's manifold.
pub fn train_denoising_encoder(
    x: &Tensor,
    encoder: &mut Network,
    decoder: &Network,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<MetricsLog> {
    cfg.validate()?;
    check_frozen(decoder)?;
    if cfg.noise_sd <= 0.0 {
        return Err(Error::Config("denoising training requires noise_sd > 0".to_string()));
    }
    train_encoder_impl(x, encoder, decoder, cfg, Some(rng))
}

fn train_encoder_impl(
    x: &Tensor,
    encoder: &mut Network,
    decoder: &Network,
    cfg: &TrainConfig,
    mut noise_rng: Option<&mut Rng>,
) -> Result<MetricsLog> {
    check_decoder_output(decoder, x)?;
    if encoder.output_len() != decoder.input_len() {
        return Err(Error::shape(format!(
            "encoder emits {} values, decoder consumes {}",
            encoder.output_len(),
            decoder.input_len()
        )));
    }
    let n = x.shape()[0];
    let mut enc_opt = Optimizer::new(cfg.weight_optim, cfg.weight_lr, cfg.weight_decay, encoder)?;
    let mut log = MetricsLog::new(cfg.shuffle_seed, cfg.hash());
    let started = Instant::now();

    for epoch in 1..=cfg.epochs {
        let order = shuffle_order(cfg.shuffle_seed, epoch, n);
        for (batch_idx, rows) in order.chunks(cfg.batch_size).enumerate() {
            let mut xb = x.select_rows(rows);
            if let Some(rng) = noise_rng.as_deref_mut() {
                let noise =
                    rng.sample(Distribution::Normal { mean: 0.0, sd: cfg.noise_sd }, xb.shape())?;
                xb.add_scaled(&noise, 1.0);
                if cfg.clamp_unit {
                    xb = xb.map(|v| v.clamp(0.0, 1.0));
                }
            }
            let (z, enc_cache) = encoder.forward(&xb)?;
            let zin = z.reshaped(&batch_shape(rows.len(), decoder.input_shape()))?;
            let (y, dec_cache) = decoder.forward(&zin)?;
            let (loss, grad) = cfg.loss.compute(&y, &xb)?;
            check_finite(loss, epoch, batch_idx)?;
            let dz = decoder.backward_input_only(&dec_cache, &grad)?;
            let (enc_grads, _) = encoder.backward(&enc_cache, &dz.reshaped(z.shape())?)?;
            enc_opt.step(encoder, &enc_grads)?;
        }
        if epoch % cfg.eval_cadence == 0 || epoch == cfg.epochs {
            // Reported on the clean data, so curves are comparable.
            let train_loss = pipeline_loss(encoder, decoder, x, x, cfg.loss)?;
            log.push(EpochRecord {
                epoch,
                split: Split::Train,
                loss: train_loss,
                pcc_mean: None,
                seconds: started.elapsed().as_secs_f64(),
            })?;
        }
    }
    Ok(log)
}

/// What to evaluate.
pub enum EvalModel<'a> {
    /// Decoder alone; test codes are recovered by gradient descent.
    DecoderOnly { decoder: &'a Network, infer: InferConfig },
    /// Encoder (or full autoencoder): a single forward pass.
    EncoderDecoder { encoder: &'a Network, decoder: &'a Network },
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub loss: f64,
    /// Per-dimension correlation against ground truth, when provided.
    pub rep_score: Option<RepScore>,
    /// The representations the model assigned to the evaluation samples.
    pub latents: Tensor,
}

/// Mean reconstruction loss on `x`, plus representation scoring against
/// `z_true` when available.
pub fn evaluate(
    model: &EvalModel,
    x: &Tensor,
    loss: LossKind,
    z_true: Option<&Tensor>,
    rng: &mut Rng,
) -> Result<EvalReport> {
    let n = x.shape()[0];
    let (latents, mean_loss) = match model {
        EvalModel::DecoderOnly { decoder, infer } => {
            check_decoder_output(decoder, x)?;
            let (z, losses) = infer_latents(decoder, x, loss, infer, rng)?;
            let mean = losses.iter().sum::<f64>() / n as f64;
            (z, mean)
        }
        EvalModel::EncoderDecoder { encoder, decoder } => {
            check_decoder_output(decoder, x)?;
            let (z, _) = encoder.forward(x)?;
            let z = z.reshaped(&[n, decoder.input_len()])?;
            let mean = pipeline_loss(encoder, decoder, x, x, loss)?;
            (z, mean)
        }
    };
    let rep_score = match z_true {
        Some(zt) => Some(representation_score(zt, &latents)?),
        None => None,
    };
    Ok(EvalReport { loss: mean_loss, rep_score, latents })
}

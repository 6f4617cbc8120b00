//! Fine-tuning on similarity-labelled pairs and the synthetic corpus.
//!
//! Loss is the squared error between the model's similarity and the gold
//! label, averaged over a batch. Updates use AdamW with a linear warm-up
//! over the first `warmup_fraction` of steps followed by linear decay to
//! zero. Biases and layer-norm parameters are not weight-decayed.

mod data;
mod synth;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use data::{load_pairs, read_pairs, save_pairs, write_pairs, PairDataset, PairRecord, Split};
pub use synth::{
    adjective_pairs, default_triplets, generate_synthetic_corpus, negation_sentences,
    ADJECTIVE_TRIPLETS, PROBE_NOUN,
};

use crate::encoder::{EncoderConfig, EncoderError, Head, SiameseEncoder, TokenSeq, Vocab};
use crate::metrics::{spearman, MetricsError};
use crate::numerics::optim::{AdamW, AdamWConfig};
use crate::numerics::{NumericsError, Tape, Tensor};
use crate::seed::derive_seed;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("line {line}: {detail}")]
    Format { line: usize, detail: String },
    #[error("line {line}: label {label} outside [0, 1]")]
    Label { line: usize, label: f64 },
    #[error("pair ({a:?}, {b:?}) appears in the {split:?} split and an earlier split")]
    Overlap { split: Split, a: String, b: String },
    #[error("no records to {0}")]
    Empty(&'static str),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(
        "loss became non-finite in epoch {epoch}, batch {batch} (learning rate {learning_rate:e})"
    )]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        learning_rate: f64,
    },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Learning rate commonly used when fine-tuning large pretrained encoders;
/// randomly initialized toy encoders need [`TrainConfig::default`]'s larger
/// rate.
pub const PRETRAINED_LEARNING_RATE: f64 = 2e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 16,
            learning_rate: 1e-3,
            weight_decay: 0.1,
            warmup_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(TrainError::Config(
                "warmup_fraction must lie in [0, 1)".into(),
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(
                "learning_rate must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Learning rate at 0-based `step` of `total`.
pub fn learning_rate_at(config: &TrainConfig, step: usize, total: usize) -> f64 {
    let warmup = (config.warmup_fraction * total as f64).floor() as usize;
    let base = config.learning_rate;
    if step < warmup {
        base * (step + 1) as f64 / warmup as f64
    } else {
        base * (total - step) as f64 / (total - warmup).max(1) as f64
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: SiameseEncoder,
    /// Mean per-example loss of each epoch, measured before each batch's
    /// update.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

/// Fresh model whose vocabulary covers every sentence in `texts`.
pub fn init_model<'t>(
    config: EncoderConfig,
    texts: impl IntoIterator<Item = &'t str>,
) -> Result<SiameseEncoder, TrainError> {
    Ok(SiameseEncoder::new(config, Vocab::build(texts))?)
}

/// Prediction and per-parameter gradients of one example's squared error.
fn example_gradient(
    model: &SiameseEncoder,
    a: &TokenSeq,
    b: &TokenSeq,
    label: f64,
) -> Result<(f64, Option<Vec<Tensor>>), TrainError> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, true);
    let ea = model.embedding_on_tape(&mut tape, &bound, a)?;
    let eb = model.embedding_on_tape(&mut tape, &bound, b)?;
    let norm = |v| tape.value(v).data().iter().map(|x| x * x).sum::<f64>();
    if !(norm(ea).is_finite() && norm(eb).is_finite()) {
        return Ok((f64::NAN, None));
    }
    let pred = match model.config().head {
        Head::Dot => tape.dot(ea, eb)?,
        Head::Cosine => {
            if norm(ea) == 0.0 || norm(eb) == 0.0 {
                // cosine with a zero vector is the constant 0
                return Ok((label * label, None));
            }
            let na = tape.l2_normalize(ea)?;
            let nb = tape.l2_normalize(eb)?;
            tape.dot(na, nb)?
        }
    };
    let p = tape.value(pred).data()[0];
    let residual = p - label;
    let grads = tape.backward(pred, 0)?;
    let scale = 2.0 * residual;
    let per_param = bound
        .vars()
        .iter()
        .zip(model.params())
        .map(|(&v, param)| match grads.get(v) {
            Some(g) => g.scale(scale),
            None => Tensor::zeros(param.shape()),
        })
        .collect();
    Ok((residual * residual, Some(per_param)))
}

/// Trains a copy of `model` on `records`; the input model is untouched.
pub fn train(
    model: &SiameseEncoder,
    records: &[PairRecord],
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if records.is_empty() {
        return Err(TrainError::Empty("train on"));
    }
    let mut model = model.clone();
    let examples: Vec<(TokenSeq, TokenSeq, f64)> = records
        .iter()
        .map(|r| (model.tokenize(&r.a), model.tokenize(&r.b), r.label))
        .collect();
    let specs = model.param_specs();
    let decay: Vec<bool> = specs.iter().map(|s| s.kind.decays()).collect();
    let lens: Vec<usize> = model.params().iter().map(Tensor::len).collect();
    let mut optimizer = AdamW::new(
        AdamWConfig {
            weight_decay: config.weight_decay,
            ..AdamWConfig::default()
        },
        &lens,
    );
    let batches_per_epoch = examples.len().div_ceil(config.batch_size);
    let total_steps = batches_per_epoch * config.epochs;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "train-order"));
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut step = 0;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            let lr = learning_rate_at(config, step, total_steps);
            let frozen = &model;
            let results: Vec<(f64, Option<Vec<Tensor>>)> = batch
                .par_iter()
                .map(|&i| {
                    let (a, b, y) = &examples[i];
                    example_gradient(frozen, a, b, *y)
                })
                .collect::<Result<_, _>>()?;
            let mut grads: Vec<Vec<f64>> = lens.iter().map(|&n| vec![0.0; n]).collect();
            let inv = 1.0 / batch.len() as f64;
            for (loss, per_param) in &results {
                if !loss.is_finite() {
                    return Err(TrainError::NonFiniteLoss {
                        epoch,
                        batch: batch_idx,
                        learning_rate: lr,
                    });
                }
                epoch_loss += loss;
                if let Some(per_param) = per_param {
                    for (acc, g) in grads.iter_mut().zip(per_param) {
                        for (x, y) in acc.iter_mut().zip(g.data()) {
                            *x += y * inv;
                        }
                    }
                }
            }
            let mut params: Vec<&mut Tensor> = model.params_mut().iter_mut().collect();
            optimizer.step(&mut params, &grads, &decay, lr);
            step += 1;
            if model.params().iter().any(|p| !p.is_finite()) {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                    learning_rate: lr,
                });
            }
        }
        epoch_losses.push(epoch_loss / examples.len() as f64);
    }
    Ok(TrainOutcome {
        model,
        epoch_losses,
        steps: step,
    })
}

/// Model similarity for every record.
pub fn predict(model: &SiameseEncoder, records: &[PairRecord]) -> Result<Vec<f64>, TrainError> {
    records
        .iter()
        .map(|r| Ok(model.similarity_text(&r.a, &r.b)?))
        .collect()
}

/// Spearman correlation between predictions and labels.
pub fn evaluate_spearman(
    model: &SiameseEncoder,
    records: &[PairRecord],
) -> Result<f64, TrainError> {
    if records.is_empty() {
        return Err(TrainError::Empty("evaluate"));
    }
    let preds = predict(model, records)?;
    let labels: Vec<f64> = records.iter().map(|r| r.label).collect();
    Ok(spearman(&preds, &labels)?)
}

/// Mean squared error of the model's similarities.
pub fn mean_squared_error(
    model: &SiameseEncoder,
    records: &[PairRecord],
) -> Result<f64, TrainError> {
    if records.is_empty() {
        return Err(TrainError::Empty("evaluate"));
    }
    let preds = predict(model, records)?;
    Ok(preds
        .iter()
        .zip(records)
        .map(|(p, r)| (p - r.label).powi(2))
        .sum::<f64>()
        / records.len() as f64)
}

#[cfg(test)]
mod tests;

//! Adam training with linear warmup/decay, deterministic under a seed.
//!
//! Batch members are evaluated in parallel with private gradient tapes;
//! gradients merge in sentence order before the update step, so the loss
//! curve is bitwise identical with or without the `parallel` feature.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chunk_graph::AdjacencyMatrix;
use crate::corpus::{EmbeddingTable, TaggedSentence};
use crate::error::{Error, Result};
use crate::par;
use crate::tensor::Matrix;

use super::{encoder_input, input_ref, TaggerModel};

/// Optimization hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Fraction of total steps spent linearly warming the learning rate
    /// up; the remainder decays linearly to zero.
    pub warmup_ratio: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 16,
            learning_rate: 1e-3,
            seed: 42,
            warmup_ratio: 0.1,
        }
    }
}

/// A tagged dataset with pre-built graphs and, for the precomputed
/// encoder, the matching embedding table.
#[derive(Clone, Copy)]
pub struct DataSet<'a> {
    pub data: &'a [TaggedSentence],
    pub graphs: &'a [AdjacencyMatrix],
    pub embeddings: Option<&'a EmbeddingTable>,
}

impl<'a> DataSet<'a> {
    pub fn new(
        data: &'a [TaggedSentence],
        graphs: &'a [AdjacencyMatrix],
        embeddings: Option<&'a EmbeddingTable>,
    ) -> Result<Self> {
        if data.len() != graphs.len() {
            return Err(Error::Shape(format!(
                "{} sentences but {} graphs",
                data.len(),
                graphs.len()
            )));
        }
        if let Some(table) = embeddings {
            if table.len() != data.len() {
                return Err(Error::Shape(format!(
                    "{} sentences but {} embedding blocks",
                    data.len(),
                    table.len()
                )));
            }
        }
        Ok(DataSet {
            data,
            graphs,
            embeddings,
        })
    }
}

#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
    pub dev_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
    /// (epoch, accuracy) of the best dev score, when a dev set is given.
    pub best_dev: Option<(usize, f64)>,
}

impl TrainLog {
    pub fn final_train_accuracy(&self) -> f64 {
        self.epochs.last().map(|e| e.train_accuracy).unwrap_or(0.0)
    }
}

/// (mean loss, token count, per-slot gradients) of one sentence.
type SentenceGrads = (f64, usize, Vec<(usize, Matrix)>);

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

struct Adam {
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    step: u64,
}

impl Adam {
    fn new(shapes: &[(usize, usize)]) -> Self {
        Adam {
            m: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            step: 0,
        }
    }

    fn update(&mut self, values: &mut [&mut crate::tensor::Parameter], grads: &[Matrix], lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
        for (slot, param) in values.iter_mut().enumerate() {
            let g = &grads[slot];
            let m = &mut self.m[slot];
            let v = &mut self.v[slot];
            for i in 0..g.data().len() {
                let gi = g.data()[i];
                m.data_mut()[i] = ADAM_BETA1 * m.data()[i] + (1.0 - ADAM_BETA1) * gi;
                v.data_mut()[i] = ADAM_BETA2 * v.data()[i] + (1.0 - ADAM_BETA2) * gi * gi;
                let mhat = m.data()[i] / bc1;
                let vhat = v.data()[i] / bc2;
                param.value.data_mut()[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
            }
        }
    }
}

/// Linear warmup to the base rate followed by linear decay to zero.
fn schedule(base: f64, step: u64, total: u64, warmup: u64) -> f64 {
    if warmup > 0 && step <= warmup {
        base * step as f64 / warmup as f64
    } else {
        let denom = (total - warmup).max(1) as f64;
        base * (total - step) as f64 / denom
    }
}

/// Minimizes mean per-token cross-entropy. When a dev set is given, the
/// parameters with the highest dev accuracy are restored into the model
/// at the end.
pub fn train(
    model: &mut TaggerModel,
    train_set: DataSet,
    dev_set: Option<DataSet>,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    if train_set.data.is_empty() {
        return Err(Error::Invalid("cannot train on an empty dataset".into()));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::Invalid("epochs and batch size must be positive".into()));
    }

    let num_sentences = train_set.data.len();
    let batches_per_epoch = num_sentences.div_ceil(cfg.batch_size);
    let total_steps = (cfg.epochs * batches_per_epoch) as u64;
    let warmup_steps = (total_steps as f64 * cfg.warmup_ratio).round() as u64;

    let shapes: Vec<(usize, usize)> = model.params().iter().map(|p| p.value.shape()).collect();
    let mut adam = Adam::new(&shapes);
    let num_layers = model.num_layers();
    let dim = model.dim();

    // Init used `seed`; the shuffle/dropout stream is offset so the two
    // draws never overlap.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));

    let mut log = TrainLog::default();
    let mut best_snapshot: Option<Vec<Matrix>> = None;
    let mut step: u64 = 0;

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..num_sentences).collect();
        order.shuffle(&mut rng);

        let mut epoch_loss_weighted = 0.0;
        let mut epoch_tokens = 0usize;

        for batch in order.chunks(cfg.batch_size) {
            // Dropout masks are drawn sequentially before dispatch so the
            // RNG stream is independent of evaluation order.
            let jobs: Vec<(usize, Option<Vec<Matrix>>)> = batch
                .iter()
                .map(|&si| {
                    let masks = if model.dropout > 0.0 {
                        let n = train_set.data[si].len();
                        Some(draw_dropout_masks(n, dim, num_layers, model.dropout, &mut rng))
                    } else {
                        None
                    };
                    (si, masks)
                })
                .collect();

            let results: Vec<Result<SentenceGrads>> =
                par::map(&jobs, |(si, masks)| {
                    sentence_gradients(model, train_set, *si, masks.as_deref())
                });

            let mut grads: Vec<Matrix> =
                shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect();
            let mut batch_tokens = 0usize;
            let mut loss_weighted = 0.0;
            let mut per_sentence = Vec::with_capacity(results.len());
            for r in results {
                per_sentence.push(r?);
            }
            for (loss, tokens, _) in &per_sentence {
                batch_tokens += tokens;
                loss_weighted += loss * *tokens as f64;
            }
            // Token-weighted merge: each sentence tape holds the gradient
            // of its own mean loss.
            for (_, tokens, sentence_grads) in &per_sentence {
                let weight = *tokens as f64 / batch_tokens as f64;
                for (slot, g) in sentence_grads {
                    grads[*slot].add_scaled(g, weight);
                }
            }

            let batch_loss = loss_weighted / batch_tokens as f64;
            step += 1;
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step: step as usize,
                });
            }
            let lr = schedule(cfg.learning_rate, step, total_steps, warmup_steps);
            let mut params = model.params_mut();
            adam.update(&mut params, &grads, lr);

            epoch_loss_weighted += loss_weighted;
            epoch_tokens += batch_tokens;
        }

        let loss = epoch_loss_weighted / epoch_tokens as f64;
        let train_accuracy = evaluate(model, train_set)?;
        let dev_accuracy = match dev_set {
            Some(ds) => Some(evaluate(model, ds)?),
            None => None,
        };
        if let Some(acc) = dev_accuracy {
            let improved = log.best_dev.map(|(_, best)| acc > best).unwrap_or(true);
            if improved {
                log.best_dev = Some((epoch, acc));
                best_snapshot = Some(model.params().iter().map(|p| p.value.clone()).collect());
            }
        }
        log.epochs.push(EpochStats {
            epoch,
            loss,
            train_accuracy,
            dev_accuracy,
        });
    }

    if let Some(snapshot) = best_snapshot {
        for (param, value) in model.params_mut().into_iter().zip(snapshot) {
            param.value = value;
        }
    }
    Ok(log)
}

fn draw_dropout_masks(
    n: usize,
    dim: usize,
    num_layers: usize,
    rate: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Matrix> {
    let keep_scale = 1.0 / (1.0 - rate);
    (0..num_layers)
        .map(|_| {
            let mut m = Matrix::zeros(n, dim);
            for v in m.data_mut() {
                *v = if rng.gen::<f64>() < rate { 0.0 } else { keep_scale };
            }
            m
        })
        .collect()
}

/// Loss (mean over tokens), token count and per-slot gradients for one
/// sentence.
fn sentence_gradients(
    model: &TaggerModel,
    set: DataSet,
    index: usize,
    dropout_masks: Option<&[Matrix]>,
) -> Result<SentenceGrads> {
    let tagged = &set.data[index];
    let targets: Vec<usize> = tagged
        .tags()
        .iter()
        .map(|t| model.tagset.index_of(t))
        .collect();
    let input = encoder_input(model, tagged.sentence(), set.embeddings, index)?;
    let (mut tape, _, loss) = model.build_tape(
        &input_ref(&input),
        &set.graphs[index],
        dropout_masks,
        Some(&targets),
    )?;
    let loss = loss.expect("targets supplied");
    let loss_value = tape.scalar(loss);
    tape.backward(loss);
    Ok((loss_value, tagged.len(), tape.param_grads()))
}

/// Token accuracy in evaluation mode. Predicting the reserved OTHER tag
/// never counts as correct.
pub fn evaluate(model: &TaggerModel, set: DataSet) -> Result<f64> {
    if set.data.is_empty() {
        return Err(Error::Invalid("cannot evaluate on an empty dataset".into()));
    }
    let jobs: Vec<usize> = (0..set.data.len()).collect();
    let other = model.tagset.other_index();
    let results: Vec<Result<(usize, usize)>> = par::map(&jobs, |&i| {
        let tagged = &set.data[i];
        let input = encoder_input(model, tagged.sentence(), set.embeddings, i)?;
        let (pred, _) = model.tag(&input_ref(&input), &set.graphs[i])?;
        let mut correct = 0;
        for (p, gold_tag) in pred.iter().zip(tagged.tags()) {
            let g = model.tagset.index_of(gold_tag);
            if *p == g && *p != other {
                correct += 1;
            }
        }
        Ok((correct, tagged.len()))
    });
    let mut correct = 0usize;
    let mut total = 0usize;
    for r in results {
        let (c, t) = r?;
        correct += c;
        total += t;
    }
    Ok(correct as f64 / total as f64)
}

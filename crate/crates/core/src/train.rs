//! The training loop: deterministic shuffling, Adam updates, per-epoch
//! train/validation curves, and best-validation model tracking.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{Mode, Model};
use crate::optim::{adam_step, TrainConfig};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// One epoch's curve entry.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

/// Result of [`train`]: the per-epoch curves plus the snapshot that scored
/// the best validation accuracy (ties keep the earlier epoch).
pub struct TrainOutcome {
    pub curves: Vec<CurveRow>,
    pub best_model: Model,
    pub best_epoch: usize,
    pub best_val_acc: f64,
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

fn accuracy_count(logits: &Tensor, labels: &[usize]) -> usize {
    let c = logits.shape()[1];
    logits
        .data()
        .chunks(c)
        .zip(labels)
        .filter(|(row, &label)| argmax(row) == label)
        .count()
}

/// Mean loss and accuracy over a dataset in eval mode.
pub fn evaluate(model: &mut Model, data: &Dataset, batch_size: usize) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::invalid("evaluate: empty dataset".to_string()));
    }
    let indices: Vec<usize> = (0..data.len()).collect();
    let mut loss_sum = 0.0;
    let mut hits = 0usize;
    for chunk in indices.chunks(batch_size) {
        let (batch, labels) = data.batch(chunk);
        let mut tape = Tape::no_grad();
        let out = model.forward_loss(&mut tape, &batch, &labels, Mode::Eval)?;
        loss_sum += out.loss.item() * chunk.len() as f64;
        hits += accuracy_count(&out.logits, &labels);
    }
    Ok((loss_sum / data.len() as f64, hits as f64 / data.len() as f64))
}

/// Per-class scores (softmax probabilities) and predictions over a dataset,
/// in dataset order. Used by the evaluation CLI path.
pub fn predict_dataset(
    model: &mut Model,
    data: &Dataset,
    batch_size: usize,
) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let indices: Vec<usize> = (0..data.len()).collect();
    let mut scores = Vec::with_capacity(data.len());
    let mut preds = Vec::with_capacity(data.len());
    for chunk in indices.chunks(batch_size) {
        let (batch, _) = data.batch(chunk);
        let logits = model.predict_logits(&batch)?;
        let mut tape = Tape::no_grad();
        let probs = crate::ops::softmax(&mut tape, &logits, 1)?;
        let c = probs.shape()[1];
        for row in probs.data().chunks(c) {
            preds.push(argmax(row));
            scores.push(row.to_vec());
        }
    }
    Ok((scores, preds))
}

/// Trains in place. Shuffling is driven by a ChaCha20 stream reseeded from
/// (cfg.seed, epoch index), so a fixed seed reproduces the run bit for bit.
pub fn train(
    model: &mut Model,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(Error::invalid("train: empty training set".to_string()));
    }
    if val_set.is_empty() {
        return Err(Error::invalid("train: empty validation set".to_string()));
    }
    let mut curves = Vec::with_capacity(cfg.epochs);
    let mut best_model = model.clone();
    let mut best_epoch = 0usize;
    let mut best_val_acc = f64::NEG_INFINITY;

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        if cfg.shuffle {
            let mut rng = ChaCha20Rng::seed_from_u64(
                cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            );
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        let mut hits = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let (batch, labels) = train_set.batch(chunk);
            let mut tape = Tape::new();
            let out = model.forward_loss(&mut tape, &batch, &labels, Mode::Train)?;
            loss_sum += out.loss.item() * chunk.len() as f64;
            hits += accuracy_count(&out.logits, &labels);
            let grads = tape.backward(&out.loss);
            let mut step_err = None;
            model.visit_params_mut(&mut |p| {
                if step_err.is_some() {
                    return;
                }
                let g = grads.grad_of(&p.tensor);
                if let Err(e) = adam_step(p, g.data(), cfg) {
                    step_err = Some(e);
                }
            });
            if let Some(e) = step_err {
                return Err(e);
            }
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let train_acc = hits as f64 / train_set.len() as f64;
        let (val_loss, val_acc) = evaluate(model, val_set, cfg.batch_size)?;
        curves.push(CurveRow { epoch, train_loss, train_acc, val_loss, val_acc });
        if val_acc > best_val_acc {
            best_val_acc = val_acc;
            best_epoch = epoch;
            best_model = model.clone();
        }
    }
    Ok(TrainOutcome { curves, best_model, best_epoch, best_val_acc })
}

/// Writes the curve CSV: `epoch,train_loss,train_acc,val_loss,val_acc`,
/// six decimal places.
pub fn write_curves(rows: &[CurveRow], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "epoch,train_loss,train_acc,val_loss,val_acc")?;
    for r in rows {
        writeln!(
            f,
            "{},{:.6},{:.6},{:.6},{:.6}",
            r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc
        )?;
    }
    Ok(())
}

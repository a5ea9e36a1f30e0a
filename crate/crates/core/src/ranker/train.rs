//! Mini-batch Adam training for the click model.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::features::ClickRecord;
use super::model::{
    draw_dropout_masks, prepare_records, GradBlock, Gradients, PreparedRecord, TwoTowerModel,
};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 256,
            epochs: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("no training records")]
    EmptyDataset,
    #[error("loss became non-finite ({loss}) at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize, loss: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean per-record loss of each epoch, in order.
    pub epoch_losses: Vec<f64>,
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Runs `cfg.epochs` passes of shuffled mini-batch Adam over `records`.
///
/// The epoch rng is reseeded from `cfg.seed` at the start of every epoch,
/// so the shuffle order and dropout draws repeat; a zero learning rate
/// therefore reproduces the same loss in every epoch, which makes
/// optimizer regressions easy to spot.
pub fn train(
    model: &mut TwoTowerModel,
    records: &[ClickRecord],
    cfg: &TrainConfig,
) -> Result<TrainReport, TrainError> {
    if records.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    assert!(cfg.batch_size > 0, "batch size must be positive");
    let prepared = prepare_records(records);
    let mut states: BTreeMap<&'static str, AdamState> = BTreeMap::new();
    let mut step_t: u64 = 0;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..prepared.len()).collect();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<PreparedRecord> =
                chunk.iter().map(|&i| prepared[i].clone()).collect();
            let masks = draw_dropout_masks(&mut rng, model, batch.len());
            let (loss, grads) = model.train_step_grads(&batch, Some(&masks));
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, step, loss });
            }
            loss_sum += loss * batch.len() as f64;
            step_t += 1;
            apply_adam(model, &grads, &mut states, cfg, step_t);
        }
        epoch_losses.push(loss_sum / prepared.len() as f64);
    }
    Ok(TrainReport { epoch_losses })
}

/// One Adam update. Embedding tables are updated lazily: only rows the
/// batch touched move, with bias correction from the global step count;
/// moments of untouched rows stay frozen rather than decaying.
fn apply_adam(
    model: &mut TwoTowerModel,
    grads: &Gradients,
    states: &mut BTreeMap<&'static str, AdamState>,
    cfg: &TrainConfig,
    t: u64,
) {
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for (&name, grad) in &grads.blocks {
        let len = model.block(name).expect("gradient for unknown block").len();
        let state = states.entry(name).or_insert_with(|| AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
        });
        let params = model.block_mut(name).unwrap();
        let mut update = |i: usize, g: f64| {
            state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
            state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
            let mhat = state.m[i] / bc1;
            let vhat = state.v[i] / bc2;
            params[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        };
        match grad {
            GradBlock::Dense(g) => {
                for (i, gi) in g.iter().enumerate() {
                    update(i, *gi);
                }
            }
            GradBlock::Rows { dim, rows } => {
                for (row, g) in rows {
                    for (j, gj) in g.iter().enumerate() {
                        update(row * dim + j, *gj);
                    }
                }
            }
        }
    }
}

//! Mini-batch training loop: MSE loss, Adam updates, per-epoch history.
//!
//! Each sample runs on its own tape; gradients are folded into the model
//! parameters with weight `1/batch_len`, so a batch optimizes the mean of its
//! sample losses. The traversal order is fully determined by the seed: the
//! train set is reshuffled from a per-epoch sub-seed, batches are consumed in
//! order, and validation always runs in the given index order.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataset::PreparedDataset;
use crate::nn::{LandfallModel, ModelError, TargetKind};
use crate::scale::ScalerStats;
use crate::tensor::{AdamParams, AdamState, Tape, TensorError, Var};
use crate::{derive_seed, SeedStream};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("training needs a non-empty train set")]
    EmptyTrainSet,
    #[error("non-finite loss at epoch {epoch}, batch {batch}; try a lower learning rate")]
    NonFiniteLoss { epoch: usize, batch: usize },
}

/// Optimization hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            learning_rate: 0.001,
            seed: 42,
        }
    }
}

/// Mean losses of one epoch. `val_mse` is absent when no validation samples
/// were supplied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: Option<f64>,
}

/// Builds the scalar MSE loss between a head output and its target.
pub fn mse_loss(tape: &mut Tape, pred: Var, target: &[f64]) -> Result<Var, TensorError> {
    let shape = tape.shape(pred).to_vec();
    let t = tape.input(&shape, target.to_vec(), false)?;
    let diff = tape.sub(pred, t)?;
    let sq = tape.mul(diff, diff)?;
    tape.reduce_mean(sq)
}

/// Forward pass on a throwaway tape; returns the sample's MSE.
fn sample_loss(
    model: &LandfallModel,
    data: &PreparedDataset,
    scaler: &ScalerStats,
    target: TargetKind,
    sample_idx: usize,
) -> Result<f64, TrainError> {
    let mut tape = Tape::new();
    let vars = model.lease(&mut tape);
    let input = scaler.scaled_window(data, sample_idx);
    let x = tape.constant(&input);
    let pred = model.forward(&mut tape, &vars, x)?;
    let wanted = scaler.scaled_target(data, sample_idx, target);
    let loss = mse_loss(&mut tape, pred, &wanted)?;
    Ok(tape.scalar(loss))
}

/// Trains `model` in place and returns the per-epoch loss history.
pub fn train_model(
    model: &mut LandfallModel,
    target: TargetKind,
    data: &PreparedDataset,
    scaler: &ScalerStats,
    train_idx: &[usize],
    val_idx: &[usize],
    config: &TrainConfig,
) -> Result<Vec<EpochStats>, TrainError> {
    if train_idx.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    let params = AdamParams::with_lr(config.learning_rate);
    let mut adam = {
        let refs: Vec<&crate::tensor::Tensor> = model.params().iter().map(|(_, t)| *t).collect();
        AdamState::new(&refs)
    };

    let mut history = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = train_idx.to_vec();
    for epoch in 0..config.epochs {
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(config.seed, SeedStream::Epoch, epoch as u64));
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for (batch_no, batch) in order.chunks(config.batch_size.max(1)).enumerate() {
            model.zero_grads();
            let inv = 1.0 / batch.len() as f64;
            for &sample_idx in batch {
                let mut tape = Tape::new();
                let vars = model.lease(&mut tape);
                let input = scaler.scaled_window(data, sample_idx);
                let x = tape.constant(&input);
                let pred = model.forward(&mut tape, &vars, x)?;
                let wanted = scaler.scaled_target(data, sample_idx, target);
                let loss = mse_loss(&mut tape, pred, &wanted)?;
                let loss_value = tape.scalar(loss);
                if !loss_value.is_finite() {
                    return Err(TrainError::NonFiniteLoss {
                        epoch,
                        batch: batch_no,
                    });
                }
                loss_sum += loss_value;
                tape.backward(loss)?;
                model.accumulate_grads(&tape, &vars, inv)?;
            }
            let mut refs: Vec<&mut crate::tensor::Tensor> = model.params_mut();
            adam.step(&mut refs, &params)?;
        }
        let train_mse = loss_sum / order.len() as f64;

        let val_mse = if val_idx.is_empty() {
            None
        } else {
            let mut sum = 0.0;
            for &sample_idx in val_idx {
                sum += sample_loss(model, data, scaler, target, sample_idx)?;
            }
            Some(sum / val_idx.len() as f64)
        };

        history.push(EpochStats {
            epoch,
            train_mse,
            val_mse,
        });
    }
    Ok(history)
}

/// Raw-space prediction for one sample: degrees for the location head,
/// hours for the time head.
pub fn predict_sample(
    model: &LandfallModel,
    data: &PreparedDataset,
    scaler: &ScalerStats,
    target: TargetKind,
    sample_idx: usize,
) -> Result<Vec<f64>, TrainError> {
    let mut tape = Tape::new();
    let vars = model.lease(&mut tape);
    let input = scaler.scaled_window(data, sample_idx);
    let x = tape.constant(&input);
    let pred = model.forward(&mut tape, &vars, x)?;
    let out = tape.value(pred).to_vec();
    Ok(match target {
        TargetKind::Location => {
            let (lat, lon) = scaler.unscale_location(out[0], out[1]);
            vec![lat, lon]
        }
        TargetKind::Time => out,
    })
}

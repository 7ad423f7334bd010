use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{backward_from, forward, metric_mae, ModelParameters, NetError, OptimizerState, RmsPropConfig};
use crate::features::SequenceWindow;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: RmsPropConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    /// Seed of the per-epoch shuffle.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: RmsPropConfig::default(),
            batch_size: 32,
            max_epochs: 50,
            patience: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<S> {
    /// Parameters from the epoch with the lowest validation MAE.
    pub params: ModelParameters<S>,
    /// Mean per-sample training loss of each epoch.
    pub train_loss: Vec<f64>,
    pub val_mae: Vec<f64>,
    /// 1-based epoch the returned parameters come from.
    pub best_epoch: usize,
    pub best_val_mae: f64,
}

impl<S> TrainOutcome<S> {
    pub fn epochs_run(&self) -> usize {
        self.train_loss.len()
    }
}

fn check_window<S: Scalar>(params: &ModelParameters<S>, w: &SequenceWindow<S>) -> Result<(), NetError> {
    if w.dim != params.input_size || w.target.is_empty() {
        return Err(NetError::ShapeMismatch(format!(
            "window of dimension {} (targets {}) for a model with input size {}",
            w.dim,
            w.target.len(),
            params.input_size
        )));
    }
    Ok(())
}

/// One optimizer step on the mean squared error of `batch`. Returns the
/// batch loss before the update.
pub fn train_step<S: Scalar>(
    params: &mut ModelParameters<S>,
    state: &mut OptimizerState<S>,
    grads: &mut ModelParameters<S>,
    batch: &[&SequenceWindow<S>],
) -> Result<f64, NetError> {
    if batch.is_empty() {
        return Err(NetError::EmptyBatch);
    }
    grads.fill_zero();
    let scale = S::of(2.0 / batch.len() as f64);
    let mut loss = 0.0;
    for w in batch {
        check_window(params, w)?;
        let (y, trace) = forward(params, &w.inputs)?;
        let err = y - w.label();
        loss += (err * err).as_f64();
        backward_from(params, &trace, &w.inputs, scale * err, grads)?;
    }
    let loss = loss / batch.len() as f64;
    if !loss.is_finite() {
        return Err(NetError::NonFinite("training loss".into()));
    }
    state.step(params, grads)?;
    Ok(loss)
}

pub fn predict_all<S: Scalar>(
    params: &ModelParameters<S>,
    windows: &[SequenceWindow<S>],
) -> Result<Vec<S>, NetError> {
    windows
        .iter()
        .map(|w| {
            check_window(params, w)?;
            forward(params, &w.inputs).map(|(y, _)| y)
        })
        .collect()
}

/// MAE of the model's predictions against each window's label.
pub fn evaluate_mae<S: Scalar>(
    params: &ModelParameters<S>,
    windows: &[SequenceWindow<S>],
) -> Result<f64, NetError> {
    let preds = predict_all(params, windows)?;
    let labels: Vec<S> = windows.iter().map(|w| w.label()).collect();
    Ok(metric_mae(&preds, &labels)?.as_f64())
}

/// Mini-batch RMSProp over shuffled training windows with early stopping
/// on validation MAE.
pub fn train<S: Scalar>(
    init: ModelParameters<S>,
    train: &[SequenceWindow<S>],
    val: &[SequenceWindow<S>],
    config: &TrainConfig,
) -> Result<TrainOutcome<S>, NetError> {
    if train.is_empty() || val.is_empty() || config.batch_size == 0 {
        return Err(NetError::EmptyBatch);
    }
    let mut params = init;
    let mut state = OptimizerState::new(&params, config.optimizer);
    let mut grads = params.zeros_like();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut best = (params.clone(), f64::INFINITY, 0);
    let mut train_loss = Vec::new();
    let mut val_mae = Vec::new();
    let mut stale = 0;
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&SequenceWindow<S>> = chunk.iter().map(|&i| &train[i]).collect();
            total += train_step(&mut params, &mut state, &mut grads, &batch)? * batch.len() as f64;
        }
        train_loss.push(total / train.len() as f64);
        let mae = evaluate_mae(&params, val)?;
        val_mae.push(mae);
        if mae < best.1 {
            best = (params.clone(), mae, epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        params: best.0,
        train_loss,
        val_mae,
        best_epoch: best.2,
        best_val_mae: best.1,
    })
}

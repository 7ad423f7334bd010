use serde::{Deserialize, Serialize};

use super::{ModelParameters, NetError};
use crate::scalar::Scalar;

/// RMSProp hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmsPropConfig {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            decay: 0.9,
            epsilon: 1e-8,
        }
    }
}

/// One RMSProp update over flat slices:
/// `acc = decay * acc + (1 - decay) * g^2`, `p -= lr * g / sqrt(acc + eps)`.
pub fn rmsprop_update<S: Scalar>(
    params: &mut [S],
    grads: &[S],
    acc: &mut [S],
    config: &RmsPropConfig,
) -> Result<(), NetError> {
    if params.len() != grads.len() || params.len() != acc.len() {
        return Err(NetError::ShapeMismatch(format!(
            "params {}, grads {}, accumulators {}",
            params.len(),
            grads.len(),
            acc.len()
        )));
    }
    let (lr, rho, eps) = (S::of(config.learning_rate), S::of(config.decay), S::of(config.epsilon));
    let keep = S::one() - rho;
    for ((p, &g), a) in params.iter_mut().zip(grads).zip(acc.iter_mut()) {
        *a = rho * *a + keep * g * g;
        *p -= lr * g / (*a + eps).sqrt();
    }
    Ok(())
}

/// Squared-gradient moving averages, one per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<S> {
    pub config: RmsPropConfig,
    pub accumulators: ModelParameters<S>,
}

impl<S: Scalar> OptimizerState<S> {
    pub fn new(params: &ModelParameters<S>, config: RmsPropConfig) -> Self {
        Self {
            config,
            accumulators: params.zeros_like(),
        }
    }

    pub fn step(
        &mut self,
        params: &mut ModelParameters<S>,
        grads: &ModelParameters<S>,
    ) -> Result<(), NetError> {
        params.check_same_shape(grads)?;
        params.check_same_shape(&self.accumulators)?;
        for ((p, g), a) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.accumulators.tensors_mut())
        {
            rmsprop_update(p, g, a, &self.config)?;
        }
        Ok(())
    }
}

pub fn rmsprop_step<S: Scalar>(
    params: &mut ModelParameters<S>,
    grads: &ModelParameters<S>,
    state: &mut OptimizerState<S>,
) -> Result<(), NetError> {
    state.step(params, grads)
}

use super::NetError;
use crate::scalar::Scalar;

fn check<S>(predictions: &[S], targets: &[S]) -> Result<S, NetError>
where
    S: Scalar,
{
    if predictions.len() != targets.len() {
        return Err(NetError::ShapeMismatch(format!(
            "{} predictions vs {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    if predictions.is_empty() {
        return Err(NetError::EmptyBatch);
    }
    Ok(S::of(predictions.len() as f64))
}

/// Mean squared error.
pub fn loss_mse<S: Scalar>(predictions: &[S], targets: &[S]) -> Result<S, NetError> {
    let n = check(predictions, targets)?;
    let sum: S = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (*t - *p) * (*t - *p))
        .sum();
    Ok(sum / n)
}

/// Mean absolute error.
pub fn metric_mae<S: Scalar>(predictions: &[S], targets: &[S]) -> Result<S, NetError> {
    let n = check(predictions, targets)?;
    let sum: S = predictions.iter().zip(targets).map(|(p, t)| (*t - *p).abs()).sum();
    Ok(sum / n)
}

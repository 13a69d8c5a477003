use super::tensor::Tensor;
use crate::error::{dim_err, Result};

/// Mean squared error over all elements.
pub fn mse_loss(predicted: &Tensor, target: &Tensor) -> Result<f64> {
    Ok(mse_with_grad(predicted, target)?.0)
}

/// MSE together with its gradient with respect to `predicted`.
pub fn mse_with_grad(predicted: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if predicted.shape() != target.shape() {
        return dim_err(format!(
            "mse shape mismatch: {:?} vs {:?}",
            predicted.shape(),
            target.shape()
        ));
    }
    let n = predicted.len() as f64;
    let mut loss = 0.0;
    let grad: Vec<f64> = predicted
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| {
            let d = p - t;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((loss / n, Tensor::new(predicted.shape().to_vec(), grad)?))
}

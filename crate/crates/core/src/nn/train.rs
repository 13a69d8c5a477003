use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::layers::{ForwardCtx, Mode};
use super::loss::mse_with_grad;
use super::network::Module;
use super::optim::{AdamState, TrainingConfig};
use super::tensor::Tensor;
use crate::error::{dim_err, Error, Result};

/// Gathers batch rows `indices` of a batch tensor.
pub fn gather_rows(t: &Tensor, indices: &[usize]) -> Tensor {
    let n = t.item_len();
    let mut shape = t.shape().to_vec();
    shape[0] = indices.len();
    let mut data = Vec::with_capacity(indices.len() * n);
    for &i in indices {
        data.extend_from_slice(&t.data()[i * n..(i + 1) * n]);
    }
    Tensor::new(shape, data).expect("gathered rows match shape")
}

/// Minibatch boundaries; a trailing batch of one sample is merged into the
/// previous batch so batch-norm always sees at least two samples.
pub fn batch_ranges(n: usize, batch_size: usize) -> Vec<std::ops::Range<usize>> {
    let bs = batch_size.max(1);
    let mut out: Vec<std::ops::Range<usize>> = (0..n).step_by(bs).map(|s| s..(s + bs).min(n)).collect();
    if out.len() > 1 && out.last().is_some_and(|r| r.len() == 1) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().end = last.end;
    }
    out
}

/// Trains `module` to map `inputs` onto `targets` under MSE with Adam.
///
/// Samples are reshuffled every epoch from `rng`, which also drives dropout.
/// Returns the mean training loss of each epoch. `on_epoch` receives
/// `(epoch, loss)` after every epoch.
pub fn fit<M: Module + ?Sized>(
    module: &mut M,
    inputs: &Tensor,
    targets: &Tensor,
    config: &TrainingConfig,
    adam: &mut AdamState,
    rng: &mut ChaCha8Rng,
    on_epoch: &mut dyn FnMut(usize, f64),
) -> Result<Vec<f64>> {
    config.validate()?;
    let n = inputs.batch();
    if targets.batch() != n {
        return dim_err(format!("{n} inputs but {} targets", targets.batch()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut curve = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for range in batch_ranges(n, config.batch_size) {
            let idx = &order[range];
            let x = gather_rows(inputs, idx);
            let y = gather_rows(targets, idx);
            module.zero_grad();
            let out = {
                let mut ctx = ForwardCtx { mode: Mode::Train, rng };
                match module.forward(x, &mut ctx) {
                    Err(Error::NonFinite(_)) => return Err(Error::Divergence { epoch, loss: f64::NAN }),
                    other => other?,
                }
            };
            let out = out.reshape(y.shape())?;
            let (loss, grad) = mse_with_grad(&out, &y)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            module.backward(grad, false)?;
            adam.step(module.params_mut(), config)?;
            total += loss * idx.len() as f64;
        }
        let mean = total / n as f64;
        if !mean.is_finite() {
            return Err(Error::Divergence { epoch, loss: mean });
        }
        on_epoch(epoch, mean);
        curve.push(mean);
    }
    Ok(curve)
}

/// Eval-mode forward pass over a large batch, `chunk` samples at a time.
pub fn predict_batch<M: Module + ?Sized>(
    module: &mut M,
    inputs: &Tensor,
    chunk: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor> {
    let n = inputs.batch();
    let mut data = Vec::new();
    let mut item_shape = Vec::new();
    for start in (0..n).step_by(chunk.max(1)) {
        let idx: Vec<usize> = (start..(start + chunk.max(1)).min(n)).collect();
        let mut ctx = ForwardCtx { mode: Mode::Eval, rng };
        let out = module.forward(gather_rows(inputs, &idx), &mut ctx)?;
        item_shape = out.shape()[1..].to_vec();
        data.extend_from_slice(out.data());
    }
    let mut shape = vec![n];
    shape.extend(item_shape);
    Tensor::new(shape, data)
}

/// Eval-mode MSE of `module` over a dataset.
pub fn evaluate_mse<M: Module + ?Sized>(
    module: &mut M,
    inputs: &Tensor,
    targets: &Tensor,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let pred = predict_batch(module, inputs, 256, rng)?.reshape(targets.shape())?;
    Ok(mse_with_grad(&pred, targets)?.0)
}

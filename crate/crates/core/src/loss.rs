//! Training objectives.
//!
//! The self-supervised objective compares the full-resolution prediction
//! against the complement image on `J^c` only. Each image's squared error is
//! normalized by its `|J^c|`, then averaged over the batch; this rescales the
//! mini-batch mean by a positive constant, so the minimizer is unchanged.

use crate::error::{domain_err, shape_err, Result};
use crate::image::Image;
use crate::nn::{Scalar, Tensor};

/// Masked L2 loss over a batch and its gradient with respect to `prediction`.
///
/// `prediction`, `target` and `mask` are one-channel batch tensors of equal
/// shape; `mask` must be binary. Positions where the mask is 0 contribute
/// neither loss nor gradient.
pub fn masked_l2<T: Scalar>(prediction: &Tensor<T>, target: &Tensor<T>, mask: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    if prediction.shape() != target.shape() || prediction.shape() != mask.shape() {
        return Err(shape_err!(
            "loss operands differ: prediction {:?}, target {:?}, mask {:?}",
            prediction.shape(),
            target.shape(),
            mask.shape()
        ));
    }
    if prediction.channels != 1 {
        return Err(shape_err!("loss expects one channel, got {}", prediction.channels));
    }
    if mask.data.iter().any(|&m| m != T::ZERO && m != T::ONE) {
        return Err(domain_err!("mask must be binary"));
    }
    let batch = prediction.batch;
    let mut grad = Tensor::zeros(1, batch, prediction.height, prediction.width);
    let mut total = 0.0;
    for b in 0..batch {
        let (p, t, m) = (prediction.image(0, b), target.image(0, b), mask.image(0, b));
        let kept = m.iter().filter(|&&v| v == T::ONE).count();
        if kept == 0 {
            return Err(domain_err!("mask of batch item {b} selects no pixels"));
        }
        let mut sum = 0.0;
        let scale = 2.0 / (kept as f64 * batch as f64);
        let g = &mut grad.data[b * p.len()..(b + 1) * p.len()];
        for i in 0..p.len() {
            if m[i] == T::ONE {
                let r = (p[i] - t[i]).to_f64();
                sum += r * r;
                g[i] = T::from_f64(scale * r);
            }
        }
        total += sum / kept as f64;
    }
    Ok((total / batch as f64, grad))
}

/// Masked L2 loss on image batches (`prediction * mask - complement`)^2,
/// per-image mean over `J^c`, then batch mean.
pub fn masked_l2_loss(predictions: &[Image], complements: &[Image], masks: &[Image]) -> Result<f64> {
    if predictions.len() != complements.len() || predictions.len() != masks.len() || predictions.is_empty() {
        return Err(shape_err!(
            "batch sizes differ or are empty: {} / {} / {}",
            predictions.len(),
            complements.len(),
            masks.len()
        ));
    }
    let p = crate::nn::SrDenoiser::<f64>::batch_tensor(predictions)?;
    let t = crate::nn::SrDenoiser::<f64>::batch_tensor(complements)?;
    let m = crate::nn::SrDenoiser::<f64>::batch_tensor(masks)?;
    Ok(masked_l2(&p, &t, &m)?.0)
}

/// Plain mean squared error between a prediction batch and a second noisy
/// observation batch: the paired-observation objective.
pub fn n2n_loss(predictions: &[Image], second_noisy: &[Image]) -> Result<f64> {
    if predictions.len() != second_noisy.len() || predictions.is_empty() {
        return Err(shape_err!("batch sizes differ or are empty"));
    }
    let mut total = 0.0;
    for (p, y) in predictions.iter().zip(second_noisy) {
        total += crate::metrics::mse(y, p)?;
    }
    Ok(total / predictions.len() as f64)
}

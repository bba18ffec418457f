//! Reconstruction losses with analytic gradients.
//!
//! Both losses reduce by the mean over every element (batch included), so
//! the returned gradient is the gradient of that scalar mean. The binary
//! cross entropy takes logits and fuses the sigmoid into the numerically
//! stable form `max(l, 0) - l*t + ln(1 + exp(-|l|))`; apply a sigmoid
//! separately when an actual reconstruction is needed.

use crate::error::{Error, Result};
use crate::layer::sigmoid;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    Bce,
}

impl LossKind {
    /// Mean loss over all elements and its gradient with respect to `pred`.
    pub fn compute(&self, pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
        match self {
            LossKind::Mse => mse_loss(pred, target),
            LossKind::Bce => bce_with_logits_loss(pred, target),
        }
    }

    /// Per-sample mean losses and the gradient of each sample's own loss
    /// (normalized by the per-sample element count, not the batch size).
    /// Rows are independent: this is what test-time latent inference uses.
    pub fn per_sample(&self, pred: &Tensor, target: &Tensor) -> Result<(Vec<f64>, Tensor)> {
        check_shapes(pred, target)?;
        if *self == LossKind::Bce {
            validate_bce_targets(target)?;
        }
        let batch = pred.shape()[0];
        let per = pred.len() / batch.max(1);
        let mut losses = vec![0.0; batch];
        let mut grad = Tensor::zeros(pred.shape());
        for b in 0..batch {
            let p = &pred.data()[b * per..(b + 1) * per];
            let t = &target.data()[b * per..(b + 1) * per];
            let g = &mut grad.data_mut()[b * per..(b + 1) * per];
            let mut acc = 0.0;
            match self {
                LossKind::Mse => {
                    for i in 0..per {
                        let d = p[i] - t[i];
                        acc += d * d;
                        g[i] = 2.0 * d / per as f64;
                    }
                }
                LossKind::Bce => {
                    for i in 0..per {
                        acc += bce_term(p[i], t[i]);
                        g[i] = (sigmoid(p[i]) - t[i]) / per as f64;
                    }
                }
            }
            losses[b] = acc / per as f64;
        }
        Ok((losses, grad))
    }
}

fn check_shapes(pred: &Tensor, target: &Tensor) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(format!(
            "prediction shape {:?} does not match target shape {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    Ok(())
}

fn validate_bce_targets(target: &Tensor) -> Result<()> {
    if let Some(v) = target.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::invalid(format!("bce target {v} outside [0, 1]")));
    }
    Ok(())
}

fn bce_term(logit: f64, t: f64) -> f64 {
    logit.max(0.0) - logit * t + (-logit.abs()).exp().ln_1p()
}

/// Mean squared error: `mean((pred - target)^2)` and `2 (pred - target) / count`.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    check_shapes(pred, target)?;
    let count = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(pred.shape());
    for ((g, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let d = p - t;
        loss += d * d;
        *g = 2.0 * d / count;
    }
    Ok((loss / count, grad))
}

/// Fused sigmoid + binary cross entropy on logits, mean over elements.
/// Targets must lie in `[0, 1]`.
pub fn bce_with_logits_loss(logits: &Tensor, targets: &Tensor) -> Result<(f64, Tensor)> {
    check_shapes(logits, targets)?;
    validate_bce_targets(targets)?;
    let count = logits.len() as f64;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(logits.shape());
    for ((g, &l), &t) in grad.data_mut().iter_mut().zip(logits.data()).zip(targets.data()) {
        loss += bce_term(l, t);
        *g = (sigmoid(l) - t) / count;
    }
    Ok((loss / count, grad))
}

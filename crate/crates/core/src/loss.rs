//! Boundary-weighted BCE + IoU per decoder output and the deep-supervision total.

use crate::config::ModelConfig;
use crate::error::{DsuError, Result};
use crate::model::DecoderOutputs;
use crate::ops::avg_pool2d;
use crate::tensor::{Scalar, Tensor};

pub const WEIGHT_WINDOW: usize = 31;
pub const WEIGHT_GAIN: f64 = 5.0;

/// `1 + 5·|avgpool31(gt) − gt|`, padded zeros counted in the window mean.
pub fn pixel_weight_map<T: Scalar>(gt: &Tensor<T>) -> Result<Tensor<T>> {
    let pooled = avg_pool2d(gt, WEIGHT_WINDOW, 1, WEIGHT_WINDOW / 2)?;
    Ok(pooled.zip_map(gt, |p, g| T::from_f64c(1.0 + WEIGHT_GAIN * (p.as_f64() - g.as_f64()).abs())))
}

fn check_pair<T: Scalar>(logits: &Tensor<T>, gt: &Tensor<T>, w: &Tensor<T>) -> Result<()> {
    if logits.shape() != gt.shape() || gt.shape() != w.shape() {
        return Err(DsuError::Shape(format!(
            "loss inputs differ: logits {:?}, gt {:?}, weights {:?}",
            logits.shape(),
            gt.shape(),
            w.shape()
        )));
    }
    if let Some(i) = logits.data().iter().position(|v| !v.is_finite()) {
        return Err(DsuError::NonFinite(format!("logit at index {i}")));
    }
    Ok(())
}

fn sigmoid64(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Loss value and its gradient with respect to the logits.
#[derive(Debug, Clone)]
pub struct LossGrad<T: Scalar> {
    pub value: f64,
    pub grad: Tensor<T>,
}

/// `Σ w·bce / Σ w` in the stable logit form.
pub fn weighted_bce<T: Scalar>(logits: &Tensor<T>, gt: &Tensor<T>, w: &Tensor<T>) -> Result<LossGrad<T>> {
    check_pair(logits, gt, w)?;
    let (z, g, w) = (logits.data(), gt.data(), w.data());
    let wsum: f64 = w.iter().map(|v| v.as_f64()).sum();
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(z.len());
    for i in 0..z.len() {
        let (zi, gi, wi) = (z[i].as_f64(), g[i].as_f64(), w[i].as_f64());
        total += wi * (zi.max(0.0) - zi * gi + (-zi.abs()).exp().ln_1p());
        grad.push(T::from_f64c(wi * (sigmoid64(zi) - gi) / wsum));
    }
    Ok(LossGrad { value: total / wsum, grad: Tensor::from_vec(logits.shape(), grad)? })
}

/// `1 − (I + 1)/(U − I + 1)` with `I = Σ w·p·g` and `U = Σ w·(p + g)`.
pub fn weighted_iou<T: Scalar>(logits: &Tensor<T>, gt: &Tensor<T>, w: &Tensor<T>) -> Result<LossGrad<T>> {
    check_pair(logits, gt, w)?;
    let (z, g, w) = (logits.data(), gt.data(), w.data());
    let p: Vec<f64> = z.iter().map(|v| sigmoid64(v.as_f64())).collect();
    let (mut inter, mut union) = (0.0, 0.0);
    for i in 0..p.len() {
        let (gi, wi) = (g[i].as_f64(), w[i].as_f64());
        inter += wi * p[i] * gi;
        union += wi * (p[i] + gi);
    }
    let num = inter + 1.0;
    let den = union - inter + 1.0;
    let grad = (0..p.len())
        .map(|i| {
            let (gi, wi) = (g[i].as_f64(), w[i].as_f64());
            let dp = -wi * (gi * den - num * (1.0 - gi)) / (den * den);
            T::from_f64c(dp * p[i] * (1.0 - p[i]))
        })
        .collect();
    Ok(LossGrad { value: 1.0 - num / den, grad: Tensor::from_vec(logits.shape(), grad)? })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LevelLoss {
    pub bce: f64,
    pub iou: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    /// `[D1, D2, D3]`.
    pub levels: [LevelLoss; 3],
    pub total: f64,
}

/// Correctly rounded sum of `xs` (Shewchuk partials with half-even correction).
fn exact_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for mut x in xs {
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }
    let Some(mut n) = partials.len().checked_sub(1) else {
        return 0.0;
    };
    let mut hi = partials[n];
    let mut lo = 0.0;
    while n > 0 {
        let x = hi;
        n -= 1;
        let y = partials[n];
        hi = x + y;
        lo = y - (hi - x);
        if lo != 0.0 {
            break;
        }
    }
    if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = hi + y;
        if y == x - hi {
            hi = x;
        }
    }
    hi
}

impl LossBreakdown {
    /// Weighted total of given per-level losses, `Σ w_k·L_k` rounded once.
    pub fn combine(levels: [LevelLoss; 3], weights: [f64; 3]) -> Self {
        let terms = levels.iter().zip(weights).flat_map(|(l, w)| {
            let p = w * l.total;
            [p, w.mul_add(l.total, -p)]
        });
        Self { levels, total: exact_sum(terms) }
    }
}

/// Deep-supervised loss with gradients for the three logit maps.
pub fn total_loss<T: Scalar>(
    outputs: &DecoderOutputs<T>,
    gt: &Tensor<T>,
    config: &ModelConfig,
) -> Result<(LossBreakdown, [Tensor<T>; 3])> {
    let boundary = pixel_weight_map(gt)?;
    let ones = Tensor::full(gt.shape(), T::one());
    let wb = if config.weighted_bce { &boundary } else { &ones };
    let wi = if config.weighted_iou { &boundary } else { &ones };
    let mut levels = [LevelLoss::default(); 3];
    let mut grads = Vec::with_capacity(3);
    for (k, logits) in outputs.maps.iter().enumerate() {
        let b = weighted_bce(logits, gt, wb)?;
        let i = weighted_iou(logits, gt, wi)?;
        levels[k] = LevelLoss { bce: b.value, iou: i.value, total: b.value + i.value };
        let s = T::from_f64c(config.loss_weights[k]);
        grads.push(b.grad.zip_map(&i.grad, |x, y| (x + y) * s));
    }
    let breakdown = LossBreakdown::combine(levels, config.loss_weights);
    if !breakdown.total.is_finite() {
        return Err(DsuError::NonFinite("total loss".into()));
    }
    Ok((breakdown, grads.try_into().expect("three maps")))
}

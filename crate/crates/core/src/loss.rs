//! Mask-aware losses on per-pixel class probabilities.
//!
//! The soft IoU loss sums `1 − IoU_k` over all classes, where `IoU_k` is
//! the batch mean over examples of `Σ p·g / Σ (p + g − p·g)` taken over that
//! example's valid pixels. The cross-entropy baseline averages
//! `−Σ_k g_k ln(p_k + ε)` over valid pixels.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::ndtensor::{softmax_backward, softmax_channels, Scalar, Tensor};

/// Guard added inside the logarithm of the cross-entropy loss.
pub const CE_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    Iou,
    CrossEntropy,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Iou => "iou",
            LossKind::CrossEntropy => "ce",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iou" => Ok(LossKind::Iou),
            "ce" | "cross_entropy" => Ok(LossKind::CrossEntropy),
            other => Err(Error::Config(format!("unknown loss kind `{other}` (expected iou or ce)"))),
        }
    }
}

/// One-hot reference classes plus the per-pixel validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundMask<T> {
    onehot: Tensor<T>,
    valid: Tensor<T>,
}

impl<T: Scalar> GroundMask<T> {
    /// `onehot` is `(N, C, H, W)`, `valid` is `(N, H, W)`, both 0/1. Valid
    /// pixels must have exactly one hot class and invalid pixels none.
    pub fn new(onehot: Tensor<T>, valid: Tensor<T>) -> Result<Self> {
        let [n, c, h, w] = onehot.dims::<4>("onehot")?;
        valid.expect_shape(&[n, h, w], "valid")?;
        let plane = h * w;
        for i in 0..n {
            for p in 0..plane {
                let v = valid.data()[i * plane + p];
                if v != T::zero() && v != T::one() {
                    return Err(Error::Data(format!("validity flag {v} is not 0 or 1")));
                }
                let mut hot = 0;
                for k in 0..c {
                    let g = onehot.data()[(i * c + k) * plane + p];
                    if g == T::one() {
                        hot += 1;
                    } else if g != T::zero() {
                        return Err(Error::Data(format!("one-hot entry {g} is not 0 or 1")));
                    }
                }
                let want = if v == T::one() { 1 } else { 0 };
                if hot != want {
                    return Err(Error::Data(format!(
                        "example {i} pixel {p}: {hot} hot classes at a pixel with validity {v}"
                    )));
                }
            }
        }
        Ok(GroundMask { onehot, valid })
    }

    /// Builds the mask from class indices (`n·h·w`, row-major per example)
    /// and validity flags. Labels at invalid pixels are ignored.
    pub fn from_labels(
        labels: &[u8],
        valid: &[bool],
        shape: [usize; 3],
        classes: usize,
    ) -> Result<Self> {
        let [n, h, w] = shape;
        let plane = h * w;
        if labels.len() != n * plane || valid.len() != n * plane {
            return Err(Error::dim(
                "pixels",
                format!("expected {} labels and flags, got {} and {}", n * plane, labels.len(), valid.len()),
            ));
        }
        let mut onehot = Tensor::zeros(&[n, classes, h, w]);
        let mut mask = Tensor::zeros(&[n, h, w]);
        for i in 0..n {
            for p in 0..plane {
                if !valid[i * plane + p] {
                    continue;
                }
                let k = labels[i * plane + p] as usize;
                if k >= classes {
                    return Err(Error::Data(format!("class index {k} >= {classes}")));
                }
                onehot.data_mut()[(i * classes + k) * plane + p] = T::one();
                mask.data_mut()[i * plane + p] = T::one();
            }
        }
        Ok(GroundMask { onehot, valid: mask })
    }

    pub fn onehot(&self) -> &Tensor<T> {
        &self.onehot
    }

    pub fn valid(&self) -> &Tensor<T> {
        &self.valid
    }

    pub fn valid_pixels(&self) -> usize {
        self.valid.data().iter().filter(|&&v| v == T::one()).count()
    }
}

#[derive(Debug, Clone)]
pub struct LossResult<T> {
    pub value: T,
    /// Gradient of `value` with respect to the loss input.
    pub grad: Tensor<T>,
    /// Batch-mean IoU per class; empty for cross-entropy.
    pub per_class_iou: Vec<T>,
}

fn check_pred<T: Scalar>(pred: &Tensor<T>, truth: &GroundMask<T>) -> Result<[usize; 4]> {
    pred.expect_shape(truth.onehot.shape(), "prediction")?;
    let dims = pred.dims::<4>("prediction")?;
    if let Some(bad) = pred
        .data()
        .iter()
        .find(|&&p| !(p >= T::zero() && p <= T::one()))
    {
        return Err(Error::Data(format!("probability {bad} outside [0, 1]")));
    }
    Ok(dims)
}

/// Soft IoU loss with its analytic gradient with respect to `pred`.
///
/// Examples without valid pixels are skipped. A class that is empty in
/// both `pred` and `truth` for an example (zero union) counts as IoU 1 with
/// zero gradient.
pub fn iou_loss<T: Scalar>(pred: &Tensor<T>, truth: &GroundMask<T>) -> Result<LossResult<T>> {
    let [n, c, h, w] = check_pred(pred, truth)?;
    let plane = h * w;
    let (p, g, v) = (pred.data(), truth.onehot.data(), truth.valid.data());

    let counted: Vec<usize> = (0..n)
        .filter(|&i| v[i * plane..][..plane].iter().any(|&x| x == T::one()))
        .collect();
    if counted.is_empty() {
        return Err(Error::EmptyBatch("no example has a valid pixel".into()));
    }
    let m = counted.len() as f64;

    let mut grad = Tensor::zeros(pred.shape());
    let mut per_class_iou = Vec::with_capacity(c);
    for k in 0..c {
        let mut iou_sum = 0.0f64;
        for &i in &counted {
            let base = (i * c + k) * plane;
            let mask = &v[i * plane..][..plane];
            let (mut inter, mut union) = (0.0f64, 0.0f64);
            for q in 0..plane {
                if mask[q] == T::one() {
                    let (pq, gq) = (p[base + q].as_f64(), g[base + q].as_f64());
                    inter += pq * gq;
                    union += pq + gq - pq * gq;
                }
            }
            if union > 0.0 {
                iou_sum += inter / union;
                let out = &mut grad.data_mut()[base..][..plane];
                let u2 = union * union;
                for q in 0..plane {
                    if mask[q] == T::one() {
                        let gq = g[base + q].as_f64();
                        let d_iou = (gq * union - inter * (1.0 - gq)) / u2;
                        out[q] = T::from_f64(-d_iou / m);
                    }
                }
            } else {
                iou_sum += 1.0;
            }
        }
        per_class_iou.push(iou_sum / m);
    }
    let value = per_class_iou.iter().map(|iou| 1.0 - iou).sum::<f64>();
    Ok(LossResult {
        value: T::from_f64(value),
        grad,
        per_class_iou: per_class_iou.into_iter().map(T::from_f64).collect(),
    })
}

/// Mean cross-entropy over valid pixels, with gradient w.r.t. `pred`.
pub fn cross_entropy_loss<T: Scalar>(
    pred: &Tensor<T>,
    truth: &GroundMask<T>,
) -> Result<LossResult<T>> {
    let [n, c, h, w] = check_pred(pred, truth)?;
    let plane = h * w;
    let total = truth.valid_pixels();
    if total == 0 {
        return Err(Error::EmptyBatch("no valid pixels in batch".into()));
    }
    let scale = 1.0 / total as f64;
    let (p, g, v) = (pred.data(), truth.onehot.data(), truth.valid.data());
    let mut grad = Tensor::zeros(pred.shape());
    let mut value = 0.0f64;
    for i in 0..n {
        for k in 0..c {
            let base = (i * c + k) * plane;
            for q in 0..plane {
                if v[i * plane + q] != T::one() {
                    continue;
                }
                let gq = g[base + q].as_f64();
                if gq != 0.0 {
                    let shifted = p[base + q].as_f64() + CE_EPSILON;
                    value -= gq * shifted.ln();
                    grad.data_mut()[base + q] = T::from_f64(-gq / shifted * scale);
                }
            }
        }
    }
    Ok(LossResult {
        value: T::from_f64(value * scale),
        grad,
        per_class_iou: Vec::new(),
    })
}

pub fn compute_loss<T: Scalar>(
    kind: LossKind,
    pred: &Tensor<T>,
    truth: &GroundMask<T>,
) -> Result<LossResult<T>> {
    match kind {
        LossKind::Iou => iou_loss(pred, truth),
        LossKind::CrossEntropy => cross_entropy_loss(pred, truth),
    }
}

/// Applies a channel softmax to `logits`, evaluates the loss, and returns the
/// gradient with respect to the logits.
pub fn loss_through_softmax<T: Scalar>(
    logits: &Tensor<T>,
    truth: &GroundMask<T>,
    kind: LossKind,
) -> Result<LossResult<T>> {
    let probs = softmax_channels(logits)?;
    let mut result = compute_loss(kind, &probs, truth)?;
    result.grad = softmax_backward(&probs, &result.grad)?;
    Ok(result)
}

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|x| if x > T::zero() { x } else { T::zero() })
}

/// Passes the gradient where the forward input was strictly positive.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    grad_out.expect_shape(input.shape(), "grad_out")?;
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

fn channel_layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 || shape[1] == 0 {
        return Err(Error::dim(
            "channel",
            format!("softmax needs at least one channel, got shape {shape:?}"),
        ));
    }
    Ok((shape[0], shape[1], shape[2..].iter().product()))
}

/// Softmax over axis 1, computed per position with max subtraction.
pub fn softmax_channels<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, inner) = channel_layout(input.shape())?;
    let src = input.data();
    let mut out = vec![T::zero(); src.len()];
    let mut scratch = vec![T::zero(); c];
    for i in 0..n {
        let base = i * c * inner;
        for p in 0..inner {
            let mut peak = T::neg_infinity();
            for k in 0..c {
                peak = peak.max(src[base + k * inner + p]);
            }
            let mut total = T::zero();
            for k in 0..c {
                let e = (src[base + k * inner + p] - peak).exp();
                scratch[k] = e;
                total += e;
            }
            for k in 0..c {
                out[base + k * inner + p] = scratch[k] / total;
            }
        }
    }
    Tensor::new(input.shape().to_vec(), out)
}

/// Vector-Jacobian product of softmax: `p ⊙ (g − Σ_k p_k g_k)` per position.
pub fn softmax_backward<T: Scalar>(probs: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    grad_out.expect_shape(probs.shape(), "grad_out")?;
    let (n, c, inner) = channel_layout(probs.shape())?;
    let (p, g) = (probs.data(), grad_out.data());
    let mut out = vec![T::zero(); p.len()];
    for i in 0..n {
        let base = i * c * inner;
        for q in 0..inner {
            let mut dot = T::zero();
            for k in 0..c {
                let at = base + k * inner + q;
                dot += p[at] * g[at];
            }
            for k in 0..c {
                let at = base + k * inner + q;
                out[at] = p[at] * (g[at] - dot);
            }
        }
    }
    Tensor::new(probs.shape().to_vec(), out)
}

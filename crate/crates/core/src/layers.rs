//! Stateful layers: parameters, gradient accumulators and the activations a
//! backward pass needs, wrapped around the [`ndtensor`](crate::ndtensor)
//! kernels.

use rand::Rng;

use crate::error::{Error, Result};
use crate::ndtensor::{
    self, concat_channels, maxpool3d, maxpool3d_backward, relu, relu_backward, softmax_backward,
    softmax_channels, split_channels, temporal_max, temporal_max_backward, upsample2d_backward,
    upsample2d_nearest, ArgmaxMap, Scalar, Tensor,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerKind {
    Conv3d {
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        padding: [usize; 3],
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 2],
        padding: [usize; 2],
    },
    ReLU,
    MaxPool3d {
        window: [usize; 3],
        stride: [usize; 3],
    },
    Upsample2d {
        factor: usize,
    },
    /// Two-input layer; use [`Layer::forward_pair`] / [`Layer::backward_pair`].
    ConcatSkip,
    SoftmaxHead,
    /// Max over the time axis of a `(N, C, T, H, W)` volume.
    TemporalCollapse,
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv3d { .. } => "Conv3d",
            LayerKind::Conv2d { .. } => "Conv2d",
            LayerKind::ReLU => "ReLU",
            LayerKind::MaxPool3d { .. } => "MaxPool3d",
            LayerKind::Upsample2d { .. } => "Upsample2d",
            LayerKind::ConcatSkip => "ConcatSkip",
            LayerKind::SoftmaxHead => "SoftmaxHead",
            LayerKind::TemporalCollapse => "TemporalCollapse",
        }
    }
}

/// A learnable tensor and its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param<T> {
    name: &'static str,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    fn new(name: &'static str, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Param { name, value, grad }
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    /// Mutable value alongside the read-only gradient.
    pub fn value_and_grad(&mut self) -> (&mut Tensor<T>, &Tensor<T>) {
        (&mut self.value, &self.grad)
    }
}

#[derive(Debug, Clone)]
enum Cache<T> {
    Input(Tensor<T>),
    Output(Tensor<T>),
    Argmax(ArgmaxMap),
    Split(usize),
    Upsampled,
}

#[derive(Debug, Clone)]
pub struct Layer<T> {
    id: String,
    kind: LayerKind,
    params: Vec<Param<T>>,
    cache: Option<Cache<T>>,
    input_grad: bool,
}

fn he_uniform<T: Scalar, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| T::from_f64(rng.random_range(-bound..bound)))
}

impl<T: Scalar> Layer<T> {
    fn plain(id: impl Into<String>, kind: LayerKind) -> Self {
        Layer {
            id: id.into(),
            kind,
            params: Vec::new(),
            cache: None,
            input_grad: true,
        }
    }

    /// He-uniform weights, zero bias.
    pub fn conv3d<R: Rng + ?Sized>(
        id: impl Into<String>,
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        padding: [usize; 3],
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel.iter().product::<usize>();
        let shape = [out_channels, in_channels, kernel[0], kernel[1], kernel[2]];
        let mut layer = Self::plain(
            id,
            LayerKind::Conv3d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            },
        );
        layer.params = vec![
            Param::new("weight", he_uniform(&shape, fan_in, rng)),
            Param::new("bias", Tensor::zeros(&[out_channels])),
        ];
        layer
    }

    /// Stride-1 2D convolution, He-uniform weights, zero bias.
    pub fn conv2d<R: Rng + ?Sized>(
        id: impl Into<String>,
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 2],
        padding: [usize; 2],
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel[0] * kernel[1];
        let shape = [out_channels, in_channels, kernel[0], kernel[1]];
        let mut layer = Self::plain(
            id,
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                padding,
            },
        );
        layer.params = vec![
            Param::new("weight", he_uniform(&shape, fan_in, rng)),
            Param::new("bias", Tensor::zeros(&[out_channels])),
        ];
        layer
    }

    pub fn relu(id: impl Into<String>) -> Self {
        Self::plain(id, LayerKind::ReLU)
    }

    pub fn maxpool3d(id: impl Into<String>, window: [usize; 3], stride: [usize; 3]) -> Self {
        Self::plain(id, LayerKind::MaxPool3d { window, stride })
    }

    pub fn upsample2d(id: impl Into<String>, factor: usize) -> Self {
        Self::plain(id, LayerKind::Upsample2d { factor })
    }

    pub fn concat_skip(id: impl Into<String>) -> Self {
        Self::plain(id, LayerKind::ConcatSkip)
    }

    pub fn softmax_head(id: impl Into<String>) -> Self {
        Self::plain(id, LayerKind::SoftmaxHead)
    }

    pub fn temporal_collapse(id: impl Into<String>) -> Self {
        Self::plain(id, LayerKind::TemporalCollapse)
    }

    /// Disables the input gradient (the backward pass then returns zeros),
    /// for layers fed directly by data.
    pub fn without_input_grad(mut self) -> Self {
        self.input_grad = false;
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn kind(&self) -> &LayerKind {
        &self.kind
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }

    fn evaluate(&self, input: &Tensor<T>, keep: bool) -> Result<(Tensor<T>, Option<Cache<T>>)> {
        let keep_input = |x: &Tensor<T>| keep.then(|| Cache::Input(x.clone()));
        match &self.kind {
            LayerKind::Conv3d { stride, padding, .. } => {
                let out = ndtensor::conv3d_forward(
                    input,
                    &self.params[0].value,
                    &self.params[1].value,
                    *stride,
                    *padding,
                )?;
                Ok((out, keep_input(input)))
            }
            LayerKind::Conv2d { padding, .. } => {
                let out = ndtensor::conv2d_forward(
                    input,
                    &self.params[0].value,
                    &self.params[1].value,
                    [1, 1],
                    *padding,
                )?;
                Ok((out, keep_input(input)))
            }
            LayerKind::ReLU => Ok((relu(input), keep_input(input))),
            LayerKind::MaxPool3d { window, stride } => {
                let (out, map) = maxpool3d(input, *window, *stride)?;
                Ok((out, keep.then_some(Cache::Argmax(map))))
            }
            LayerKind::Upsample2d { factor } => {
                let out = upsample2d_nearest(input, *factor)?;
                Ok((out, keep.then_some(Cache::Upsampled)))
            }
            LayerKind::ConcatSkip => Err(Error::Argument(
                "ConcatSkip takes two inputs; use forward_pair".into(),
            )),
            LayerKind::SoftmaxHead => {
                let out = softmax_channels(input)?;
                let cache = keep.then(|| Cache::Output(out.clone()));
                Ok((out, cache))
            }
            LayerKind::TemporalCollapse => {
                let (out, map) = temporal_max(input)?;
                Ok((out, keep.then_some(Cache::Argmax(map))))
            }
        }
    }

    /// Runs the layer and caches what [`Layer::backward`] needs.
    pub fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (out, cache) = self.evaluate(input, true).map_err(|e| e.in_layer(&self.id))?;
        self.cache = cache;
        Ok(out)
    }

    /// Inference-only forward pass; leaves the layer untouched.
    pub fn apply(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.evaluate(input, false)
            .map(|(out, _)| out)
            .map_err(|e| e.in_layer(&self.id))
    }

    pub fn forward_pair(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        let out = self.apply_pair(a, b)?;
        self.cache = Some(Cache::Split(a.shape()[1]));
        Ok(out)
    }

    pub fn apply_pair(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        if self.kind != LayerKind::ConcatSkip {
            return Err(Error::Argument(format!("{} takes a single input", self.kind.name()))
                .in_layer(&self.id));
        }
        concat_channels(a, b).map_err(|e| e.in_layer(&self.id))
    }

    fn missing_forward(&self) -> Error {
        Error::State("backward called before forward".into()).in_layer(&self.id)
    }

    /// Returns the input gradient and adds parameter gradients into the
    /// accumulators.
    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.as_ref().ok_or_else(|| self.missing_forward())?;
        let result = match (&self.kind, cache) {
            (LayerKind::Conv3d { stride, padding, .. }, Cache::Input(input)) => {
                let grads = ndtensor::conv::conv3d_backward_opt(
                    input,
                    &self.params[0].value,
                    grad_out,
                    *stride,
                    *padding,
                    self.input_grad,
                );
                grads.and_then(|g| {
                    self.params[0].grad.add_assign(&g.kernel)?;
                    self.params[1].grad.add_assign(&g.bias)?;
                    Ok(g.input)
                })
            }
            (LayerKind::Conv2d { padding, .. }, Cache::Input(input)) => {
                let grads = ndtensor::conv::conv2d_backward_opt(
                    input,
                    &self.params[0].value,
                    grad_out,
                    [1, 1],
                    *padding,
                    self.input_grad,
                );
                grads.and_then(|g| {
                    self.params[0].grad.add_assign(&g.kernel)?;
                    self.params[1].grad.add_assign(&g.bias)?;
                    Ok(g.input)
                })
            }
            (LayerKind::ReLU, Cache::Input(input)) => relu_backward(input, grad_out),
            (LayerKind::MaxPool3d { .. }, Cache::Argmax(map)) => maxpool3d_backward(grad_out, map),
            (LayerKind::TemporalCollapse, Cache::Argmax(map)) => temporal_max_backward(grad_out, map),
            (LayerKind::Upsample2d { factor }, Cache::Upsampled) => {
                upsample2d_backward(grad_out, *factor)
            }
            (LayerKind::SoftmaxHead, Cache::Output(probs)) => softmax_backward(probs, grad_out),
            (LayerKind::ConcatSkip, _) => Err(Error::Argument(
                "ConcatSkip returns two gradients; use backward_pair".into(),
            )),
            _ => Err(Error::Internal("cache does not match layer kind".into())),
        };
        result.map_err(|e| e.in_layer(&self.id))
    }

    pub fn backward_pair(&mut self, grad_out: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        match self.cache {
            Some(Cache::Split(leading)) => {
                split_channels(grad_out, leading).map_err(|e| e.in_layer(&self.id))
            }
            Some(_) => Err(Error::Argument(format!(
                "{} has a single input; use backward",
                self.kind.name()
            ))
            .in_layer(&self.id)),
            None => Err(self.missing_forward()),
        }
    }
}

/// Zeroes every gradient accumulator in `params`.
pub fn zero_grads<'a, T: Scalar>(params: impl IntoIterator<Item = &'a mut Param<T>>) {
    for p in params {
        p.grad.fill(T::zero());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    fn sample(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| r.random_range(-1.0..1.0))
    }

    #[test]
    fn relu_layer_zeroes_negative_input() {
        let mut layer = Layer::<f64>::relu("r");
        let y = layer.forward(&Tensor::filled(&[1, 2, 3], -1.5)).unwrap();
        assert_eq!(y.max_abs(), 0.0);
    }

    #[test]
    fn unit_conv_layer_passes_input_through() {
        let mut layer = Layer::<f64>::conv3d("c", 1, 1, [1; 3], [1; 3], [0; 3], &mut rng());
        layer.params_mut()[0].value.fill(1.0);
        let x = sample(&[1, 1, 2, 3, 3], 1);
        assert_eq!(layer.forward(&x).unwrap(), x);
    }

    #[test]
    fn forward_is_deterministic() {
        let layer = Layer::<f32>::conv3d("c", 2, 3, [3; 3], [1; 3], [1; 3], &mut rng());
        let x = sample(&[1, 2, 4, 5, 5], 2).cast::<f32>();
        let a = layer.apply(&x).unwrap();
        let b = layer.apply(&x).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn he_uniform_respects_bound_and_zero_bias() {
        let layer = Layer::<f64>::conv3d("c", 4, 8, [3; 3], [1; 3], [1; 3], &mut rng());
        let bound = (6.0f64 / (4.0 * 27.0)).sqrt();
        assert!(layer.params()[0].value.max_abs() <= bound);
        assert_eq!(layer.params()[1].value.max_abs(), 0.0);
        for p in layer.params() {
            assert_eq!(p.value.shape(), p.grad.shape());
        }
    }

    #[test]
    fn backward_before_forward_is_a_state_error() {
        let mut layer = Layer::<f64>::relu("first");
        let err = layer.backward(&Tensor::zeros(&[1])).unwrap_err();
        assert!(matches!(err.root(), Error::State(_)));
        assert!(err.to_string().contains("first"));
    }

    #[test]
    fn zero_upstream_leaves_grads_unchanged() {
        let mut layer = Layer::<f64>::conv3d("c", 2, 2, [3; 3], [1; 3], [1; 3], &mut rng());
        let x = sample(&[1, 2, 3, 4, 4], 3);
        let y = layer.forward(&x).unwrap();
        let gi = layer.backward(&Tensor::zeros(y.shape())).unwrap();
        assert_eq!(gi.max_abs(), 0.0);
        assert!(layer.params().iter().all(|p| p.grad.max_abs() == 0.0));
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut layer = Layer::<f64>::conv3d("c", 2, 3, [3; 3], [1; 3], [1; 3], &mut rng());
        let x = sample(&[1, 2, 3, 4, 4], 4);
        let y = layer.forward(&x).unwrap();
        let g = sample(y.shape(), 5);
        layer.backward(&g).unwrap();
        let once: Vec<Tensor<f64>> = layer.params().iter().map(|p| p.grad.clone()).collect();
        layer.backward(&g).unwrap();
        for (p, first) in layer.params().iter().zip(&once) {
            let doubled = first.map(|v| 2.0 * v);
            assert_eq!(p.grad, doubled);
        }
    }

    #[test]
    fn zero_grads_resets_and_is_idempotent() {
        let mut fresh = Layer::<f64>::conv2d("c", 2, 2, [3; 2], [1; 2], &mut rng());
        let mut used = fresh.clone();
        let x = sample(&[2, 2, 4, 4], 6);
        let g = sample(&[2, 2, 4, 4], 7);
        used.forward(&x).unwrap();
        used.backward(&g).unwrap();
        used.backward(&g).unwrap();
        zero_grads(used.params_mut());
        assert!(used.params().iter().all(|p| p.grad.max_abs() == 0.0));
        used.zero_grads();
        assert!(used.params().iter().all(|p| p.grad.max_abs() == 0.0));

        used.backward(&g).unwrap();
        fresh.forward(&x).unwrap();
        fresh.backward(&g).unwrap();
        for (a, b) in used.params().iter().zip(fresh.params()) {
            assert_eq!(a.grad, b.grad);
        }
    }

    #[test]
    fn concat_layer_requires_pair_calls() {
        let mut layer = Layer::<f64>::concat_skip("cat");
        assert!(layer.forward(&Tensor::zeros(&[1, 1, 2, 2])).is_err());
        let a = sample(&[1, 2, 2, 2], 8);
        let b = sample(&[1, 3, 2, 2], 9);
        let y = layer.forward_pair(&a, &b).unwrap();
        let (ga, gb) = layer.backward_pair(&y).unwrap();
        assert_eq!((ga, gb), (a, b));
    }

    #[test]
    fn shape_errors_carry_layer_id() {
        let mut layer = Layer::<f64>::conv3d("enc0.conv0", 3, 2, [3; 3], [1; 3], [1; 3], &mut rng());
        let err = layer.forward(&Tensor::zeros(&[1, 2, 3, 3, 3])).unwrap_err();
        assert!(err.to_string().starts_with("layer enc0.conv0"));
        assert!(matches!(err.root(), Error::Dimension { .. }));
    }
}

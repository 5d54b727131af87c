//! The encoder-decoder 3D FCN.
//!
//! Encoder level `i` runs two same-padded 3×3×3 convolutions (each followed
//! by ReLU) at `channel_schedule[i]` channels; levels are separated by 2×2×2
//! max pooling, so the time axis shrinks by floor division (23 → 11 → 5 → 2
//! for the default configuration). Every level's output is collapsed over
//! time by a max and serves as a 2D skip feature. The decoder is 2D: each
//! stage upsamples by two, concatenates the matching skip feature and runs
//! two 3×3 convolutions. A 1×1 convolution and a channel softmax produce the
//! per-pixel class probabilities.

mod weights;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::{Layer, Param};
use crate::ndtensor::{Scalar, Tensor};

pub use weights::{load_weights, load_weights_expecting, read_weight_manifest};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchitectureConfig {
    pub levels: usize,
    pub base_channels: usize,
    pub channel_schedule: Vec<usize>,
    pub input_bands: usize,
    pub time_steps: usize,
    pub num_classes: usize,
    pub tile_size: usize,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        ArchitectureConfig::doubling(4, 16)
    }
}

impl ArchitectureConfig {
    /// Channels `base, 2·base, 4·base, …` over `levels` levels; everything
    /// else at its default.
    pub fn doubling(levels: usize, base_channels: usize) -> Self {
        ArchitectureConfig {
            levels,
            base_channels,
            channel_schedule: (0..levels).map(|i| base_channels << i).collect(),
            input_bands: 6,
            time_steps: 23,
            num_classes: 3,
            tile_size: 128,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.levels == 0 {
            return fail("levels must be at least 1".into());
        }
        if self.channel_schedule.len() != self.levels {
            return fail(format!(
                "channel schedule has {} entries for {} levels",
                self.channel_schedule.len(),
                self.levels
            ));
        }
        if self.channel_schedule.contains(&0) {
            return fail("channel schedule entries must be positive".into());
        }
        if self.channel_schedule[0] != self.base_channels {
            return fail(format!(
                "channel schedule starts at {}, base_channels is {}",
                self.channel_schedule[0], self.base_channels
            ));
        }
        if self.input_bands == 0 || self.num_classes == 0 {
            return fail("input_bands and num_classes must be positive".into());
        }
        let step = 1usize << (self.levels - 1);
        if self.tile_size == 0 || !self.tile_size.is_multiple_of(step) {
            return fail(format!(
                "tile size {} is not divisible by 2^(levels-1) = {step}",
                self.tile_size
            ));
        }
        if self.time_steps < step {
            return fail(format!(
                "{} time steps cannot be pooled {} times",
                self.time_steps,
                self.levels - 1
            ));
        }
        Ok(())
    }

    /// Time extent at each encoder level.
    pub fn temporal_extents(&self) -> Vec<usize> {
        (0..self.levels).map(|i| self.time_steps >> i).collect()
    }

    /// Spatial extent (rows = cols) at each encoder level.
    pub fn spatial_extents(&self) -> Vec<usize> {
        (0..self.levels).map(|i| self.tile_size >> i).collect()
    }

    pub fn input_shape(&self, batch: usize) -> [usize; 5] {
        [batch, self.input_bands, self.time_steps, self.tile_size, self.tile_size]
    }
}

#[derive(Debug, Clone)]
struct EncoderLevel<T> {
    pool: Option<Layer<T>>,
    body: Vec<Layer<T>>,
    collapse: Layer<T>,
}

#[derive(Debug, Clone)]
struct DecoderStage<T> {
    /// Encoder level whose skip feature this stage consumes.
    level: usize,
    upsample: Layer<T>,
    concat: Layer<T>,
    body: Vec<Layer<T>>,
}

/// Borrowed view of one learnable tensor, in canonical order.
#[derive(Debug, Clone, Copy)]
pub struct ParamEntry<'a, T> {
    pub layer_id: &'a str,
    pub name: &'static str,
    pub value: &'a Tensor<T>,
    pub grad: &'a Tensor<T>,
}

impl<T> ParamEntry<'_, T> {
    pub fn qualified_name(&self) -> String {
        format!("{}.{}", self.layer_id, self.name)
    }
}

#[derive(Debug, Clone)]
pub struct NetworkModel<T> {
    config: ArchitectureConfig,
    encoder: Vec<EncoderLevel<T>>,
    decoder: Vec<DecoderStage<T>>,
    head: Layer<T>,
    softmax: Layer<T>,
}

impl<T: Scalar> NetworkModel<T> {
    /// Builds the network with weights drawn from a generator seeded by
    /// `seed`. Layer construction order fixes the parameter order.
    pub fn build(config: &ArchitectureConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ch = &config.channel_schedule;

        let mut encoder = Vec::with_capacity(config.levels);
        for (i, &width) in ch.iter().enumerate() {
            let in_ch = if i == 0 { config.input_bands } else { ch[i - 1] };
            let pool = (i > 0).then(|| Layer::maxpool3d(format!("enc{i}.pool"), [2; 3], [2; 3]));
            let mut first = Layer::conv3d(format!("enc{i}.conv0"), in_ch, width, [3; 3], [1; 3], [1; 3], &mut rng);
            if i == 0 {
                first = first.without_input_grad();
            }
            let body = vec![
                first,
                Layer::relu(format!("enc{i}.relu0")),
                Layer::conv3d(format!("enc{i}.conv1"), width, width, [3; 3], [1; 3], [1; 3], &mut rng),
                Layer::relu(format!("enc{i}.relu1")),
            ];
            encoder.push(EncoderLevel {
                pool,
                body,
                collapse: Layer::temporal_collapse(format!("enc{i}.collapse")),
            });
        }

        let mut decoder = Vec::with_capacity(config.levels.saturating_sub(1));
        for level in (0..config.levels - 1).rev() {
            let in_ch = ch[level + 1] + ch[level];
            let width = ch[level];
            decoder.push(DecoderStage {
                level,
                upsample: Layer::upsample2d(format!("dec{level}.up"), 2),
                concat: Layer::concat_skip(format!("dec{level}.cat")),
                body: vec![
                    Layer::conv2d(format!("dec{level}.conv0"), in_ch, width, [3; 2], [1; 2], &mut rng),
                    Layer::relu(format!("dec{level}.relu0")),
                    Layer::conv2d(format!("dec{level}.conv1"), width, width, [3; 2], [1; 2], &mut rng),
                    Layer::relu(format!("dec{level}.relu1")),
                ],
            });
        }

        let head = Layer::conv2d("head.conv", ch[0], config.num_classes, [1; 2], [0; 2], &mut rng);
        Ok(NetworkModel {
            config: config.clone(),
            encoder,
            decoder,
            head,
            softmax: Layer::softmax_head("head.softmax"),
        })
    }

    pub fn config(&self) -> &ArchitectureConfig {
        &self.config
    }

    /// Every layer in canonical order.
    pub fn layers(&self) -> Vec<&Layer<T>> {
        let mut out = Vec::new();
        for level in &self.encoder {
            out.extend(level.pool.iter());
            out.extend(level.body.iter());
            out.push(&level.collapse);
        }
        for stage in &self.decoder {
            out.push(&stage.upsample);
            out.push(&stage.concat);
            out.extend(stage.body.iter());
        }
        out.push(&self.head);
        out.push(&self.softmax);
        out
    }

    fn layers_mut(&mut self) -> Vec<&mut Layer<T>> {
        let mut out = Vec::new();
        for level in &mut self.encoder {
            out.extend(level.pool.iter_mut());
            out.extend(level.body.iter_mut());
            out.push(&mut level.collapse);
        }
        for stage in &mut self.decoder {
            out.push(&mut stage.upsample);
            out.push(&mut stage.concat);
            out.extend(stage.body.iter_mut());
        }
        out.push(&mut self.head);
        out.push(&mut self.softmax);
        out
    }

    /// The ordered parameter set.
    pub fn param_set(&self) -> Vec<ParamEntry<'_, T>> {
        self.layers()
            .into_iter()
            .flat_map(|layer| {
                layer.params().iter().map(move |p| ParamEntry {
                    layer_id: layer.id(),
                    name: p.name(),
                    value: &p.value,
                    grad: &p.grad,
                })
            })
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers_mut()
            .into_iter()
            .flat_map(|layer| layer.params_mut().iter_mut())
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.param_set().iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for layer in self.layers_mut() {
            layer.zero_grads();
        }
    }

    fn check_input(&self, cube: &Tensor<T>) -> Result<()> {
        let [n, ..] = cube.dims::<5>("cube")?;
        let expected = self.config.input_shape(n);
        let names = ["example", "band", "time", "row", "col"];
        for (axis, (&got, &want)) in cube.shape().iter().zip(&expected).enumerate() {
            if got != want {
                return Err(Error::dim(
                    names[axis],
                    format!("model expects extent {want}, input has {got}"),
                ));
            }
        }
        if n == 0 {
            return Err(Error::dim("example", "empty batch"));
        }
        Ok(())
    }

    /// Training forward pass: returns `(N, classes, S, S)` probabilities and
    /// caches activations for [`NetworkModel::backward`].
    pub fn forward(&mut self, cube: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(cube)?;
        let mut skips = Vec::with_capacity(self.encoder.len());
        let mut x = cube.clone();
        for level in &mut self.encoder {
            if let Some(pool) = &mut level.pool {
                x = pool.forward(&x)?;
            }
            for layer in &mut level.body {
                x = layer.forward(&x)?;
            }
            skips.push(level.collapse.forward(&x)?);
        }
        let mut y = skips.pop().expect("at least one level");
        for stage in &mut self.decoder {
            y = stage.upsample.forward(&y)?;
            y = stage.concat.forward_pair(&y, &skips[stage.level])?;
            for layer in &mut stage.body {
                y = layer.forward(&y)?;
            }
        }
        let logits = self.head.forward(&y)?;
        self.softmax.forward(&logits)
    }

    /// Inference forward pass; does not touch cached state.
    pub fn predict(&self, cube: &Tensor<T>) -> Result<Tensor<T>> {
        self.softmax.apply(&self.logits(cube)?)
    }

    /// Pre-softmax class scores, inference only.
    pub fn logits(&self, cube: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(cube)?;
        let mut skips = Vec::with_capacity(self.encoder.len());
        let mut x = cube.clone();
        for level in &self.encoder {
            if let Some(pool) = &level.pool {
                x = pool.apply(&x)?;
            }
            for layer in &level.body {
                x = layer.apply(&x)?;
            }
            skips.push(level.collapse.apply(&x)?);
        }
        let mut y = skips.pop().expect("at least one level");
        for stage in &self.decoder {
            y = stage.upsample.apply(&y)?;
            y = stage.concat.apply_pair(&y, &skips[stage.level])?;
            for layer in &stage.body {
                y = layer.apply(&y)?;
            }
        }
        self.head.apply(&y)
    }

    /// Back-propagates a gradient on the output probabilities, accumulating
    /// into every parameter gradient.
    pub fn backward(&mut self, grad_probs: &Tensor<T>) -> Result<()> {
        let g = self.softmax.backward(grad_probs)?;
        let mut g = self.head.backward(&g)?;

        let mut skip_grads: Vec<Option<Tensor<T>>> = vec![None; self.encoder.len()];
        for stage in self.decoder.iter_mut().rev() {
            for layer in stage.body.iter_mut().rev() {
                g = layer.backward(&g)?;
            }
            let (g_up, g_skip) = stage.concat.backward_pair(&g)?;
            skip_grads[stage.level] = Some(g_skip);
            g = stage.upsample.backward(&g_up)?;
        }
        let deepest = self.encoder.len() - 1;
        skip_grads[deepest] = Some(g);

        let mut from_above: Option<Tensor<T>> = None;
        for (i, level) in self.encoder.iter_mut().enumerate().rev() {
            let g_skip = skip_grads[i]
                .take()
                .ok_or_else(|| Error::Internal(format!("no gradient for skip {i}")))?;
            let mut g = level.collapse.backward(&g_skip)?;
            if let Some(above) = from_above.take() {
                g.add_assign(&above)?;
            }
            for layer in level.body.iter_mut().rev() {
                g = layer.backward(&g)?;
            }
            if let Some(pool) = &mut level.pool {
                from_above = Some(pool.backward(&g)?);
            }
        }
        Ok(())
    }

    /// Copies parameter values (not gradients) from `other`.
    pub fn copy_weights_from(&mut self, other: &NetworkModel<T>) -> Result<()> {
        if other.config != self.config {
            return Err(Error::Config("cannot copy weights across architectures".into()));
        }
        let src: Vec<Tensor<T>> = other.param_set().iter().map(|p| p.value.clone()).collect();
        for (dst, value) in self.params_mut().into_iter().zip(src) {
            dst.value = value;
        }
        Ok(())
    }

    pub fn snapshot(&self) -> Vec<Tensor<T>> {
        self.param_set().iter().map(|p| p.value.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Tensor<T>]) -> Result<()> {
        let mut params = self.params_mut();
        if params.len() != snapshot.len() {
            return Err(Error::dim("params", "snapshot does not match parameter count"));
        }
        for (p, value) in params.iter_mut().zip(snapshot) {
            value.expect_shape(p.value.shape(), "snapshot")?;
            p.value = value.clone();
        }
        Ok(())
    }

    /// FNV-1a over the parameters as little-endian `f32`, in canonical order.
    pub fn weight_checksum(&self) -> u64 {
        let bytes = crate::manifest::f32_le_bytes(
            self.param_set()
                .iter()
                .flat_map(|p| p.value.data().iter().map(|v| v.as_f64() as f32)),
        );
        crate::manifest::fnv1a(&bytes)
    }

    pub fn save_weights(&self, path: &std::path::Path) -> Result<()> {
        weights::save(self, path)
    }
}

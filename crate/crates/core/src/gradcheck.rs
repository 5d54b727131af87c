//! Central finite-difference verification of every analytic gradient in
//! 64-bit arithmetic.
//!
//! Each check draws a random configuration per seed, evaluates the scalar
//! objective `Σ r ⊙ f(x)` for a random cotangent `r` (or the loss itself),
//! and compares the analytic gradient with central differences. The error of
//! one seed is the normwise relative error `‖a − n‖ / max(‖a‖, ‖n‖)` over
//! all checked coordinates; the check reports the maximum over seeds.

use std::time::{Duration, Instant};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::fcn3d::{ArchitectureConfig, NetworkModel};
use crate::layers::Layer;
use crate::loss::{compute_loss, loss_through_softmax, GroundMask, LossKind};
use crate::ndtensor::Tensor;

pub const LAYER_TOLERANCE: f64 = 1e-4;
pub const NETWORK_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckOptions {
    pub seeds: usize,
    pub base_seed: u64,
    pub epsilon: f64,
    /// Coordinates checked per tensor; larger tensors are subsampled.
    pub max_coords: usize,
    /// Scales every analytic gradient by `1 + perturb`; a harness sanity
    /// fixture that must make the suite fail.
    pub perturb: f64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            seeds: 20,
            base_seed: 0,
            epsilon: 1e-5,
            max_coords: 256,
            perturb: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub seeds: usize,
    pub coords: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub elapsed: Duration,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

/// Normwise relative error; zero when both vectors vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// A set of tensors the objective depends on, with their analytic gradients.
struct Probe {
    inputs: Vec<Tensor<f64>>,
    analytic: Vec<Tensor<f64>>,
}

/// Compares analytic and central-difference gradients of `objective` at
/// `probe.inputs`, returning the relative error and the coordinate count.
fn compare(
    probe: Probe,
    objective: impl Fn(&[Tensor<f64>]) -> Result<f64>,
    opts: &GradcheckOptions,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, usize)> {
    let mut inputs = probe.inputs;
    let mut a = Vec::new();
    let mut n = Vec::new();
    for t in 0..inputs.len() {
        let len = inputs[t].len();
        let coords: Vec<usize> = if len <= opts.max_coords {
            (0..len).collect()
        } else {
            sample(rng, len, opts.max_coords).into_vec()
        };
        for i in coords {
            let x0 = inputs[t].data()[i];
            inputs[t].data_mut()[i] = x0 + opts.epsilon;
            let plus = objective(&inputs)?;
            inputs[t].data_mut()[i] = x0 - opts.epsilon;
            let minus = objective(&inputs)?;
            inputs[t].data_mut()[i] = x0;
            n.push((plus - minus) / (2.0 * opts.epsilon));
            a.push(probe.analytic[t].data()[i] * (1.0 + opts.perturb));
        }
    }
    Ok((relative_error(&a, &n), a.len()))
}

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Objective `Σ r ⊙ layer(x)` over the input and every parameter.
fn check_layer(layer: Layer<f64>, x: Tensor<f64>, opts: &GradcheckOptions, rng: &mut ChaCha8Rng) -> Result<(f64, usize)> {
    let mut layer = layer;
    for p in layer.params_mut() {
        p.value = uniform(p.value.shape(), rng);
    }
    let out = layer.forward(&x)?;
    let r = uniform(out.shape(), rng);
    let gx = layer.backward(&r)?;
    let mut inputs = vec![x];
    let mut analytic = vec![gx];
    for p in layer.params() {
        inputs.push(p.value.clone());
        analytic.push(p.grad.clone());
    }
    let objective = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut l = layer.clone();
        for (p, v) in l.params_mut().iter_mut().zip(&xs[1..]) {
            p.value = v.clone();
        }
        Ok(dot(&l.apply(&xs[0])?, &r))
    };
    compare(Probe { inputs, analytic }, objective, opts, rng)
}

fn dim(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

fn conv3d_case(rng: &mut ChaCha8Rng, opts: &GradcheckOptions) -> Result<(f64, usize)> {
    let (cin, cout) = (dim(rng, 1, 3), dim(rng, 1, 3));
    let kernel = [dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 1, 3)];
    let stride = [dim(rng, 1, 2), dim(rng, 1, 2), dim(rng, 1, 2)];
    let padding = [dim(rng, 0, 1), dim(rng, 0, 1), dim(rng, 0, 1)];
    let ext: Vec<usize> = (0..3).map(|a| kernel[a] + dim(rng, 0, 3)).collect();
    let layer = Layer::conv3d("conv3d", cin, cout, kernel, stride, padding, rng);
    let x = uniform(&[dim(rng, 1, 2), cin, ext[0], ext[1], ext[2]], rng);
    check_layer(layer, x, opts, rng)
}

fn conv2d_case(rng: &mut ChaCha8Rng, opts: &GradcheckOptions) -> Result<(f64, usize)> {
    let (cin, cout) = (dim(rng, 1, 4), dim(rng, 1, 3));
    let k = [1, 3][dim(rng, 0, 1)];
    let pad = if k == 3 { dim(rng, 0, 1) } else { 0 };
    let layer = Layer::conv2d("conv2d", cin, cout, [k, k], [pad, pad], rng);
    let x = uniform(&[dim(rng, 1, 2), cin, k + dim(rng, 0, 4), k + dim(rng, 0, 4)], rng);
    check_layer(layer, x, opts, rng)
}

fn relu_case(rng: &mut ChaCha8Rng, opts: &GradcheckOptions) -> Result<(f64, usize)> {
    let x = uniform(&[dim(rng, 1, 2), dim(rng, 1, 3), dim(rng, 1, 4), dim(rng, 1, 4)], rng);
    check_layer(Layer::relu("relu"), x, opts, rng)
}

fn maxpool_case(rng: &mut ChaCha8Rng, opts: &GradcheckOptions) -> Result<(f64, usize)> {
    let x = uniform(&[dim(rng, 1, 2), dim(rng, 1, 3), dim(rng, 2, 5), dim(rng, 2, 6), dim(rng, 2, 6)], rng);
    check_layer(Layer::maxpool3d("pool", [2; 3], [2; 3]), x, opts, rng)
}

fn upsample_case(rng: &mut ChaCha8Rng, opts: &GradcheckOptions) -> Result<(f64, usize)> {
    let x = uniform(&[dim(rng, 1, 2), dim(rng, 1, 3), dim(rng, 1, 4), dim(rng, 1, 4)], rng);
    check_layer(Layer::upsample2d("up", dim(rng, 2, 3)), x, opts, rng)
}

fn collapse_case(rng: &mut ChaCha8Rng, opts: &GradcheckOptions) -> Result<(f64, usize)> {
    let x = uniform(&[dim(rng, 1, 2), dim(rng, 1, 3), dim(rng, 1, 5), dim(rng, 1, 4), dim(rng, 1, 4)], rng);
    check_layer(Layer::temporal_collapse("collapse"), x, opts, rng)
}

fn softmax_case(rng: &mut ChaCha8Rng, opts: &GradcheckOptions) -> Result<(f64, usize)> {
    let x = uniform(&[dim(rng, 1, 2), dim(rng, 2, 4), dim(rng, 1, 4), dim(rng, 1, 4)], rng);
    check_layer(Layer::softmax_head("softmax"), x, opts, rng)
}

fn concat_case(rng: &mut ChaCha8Rng, opts: &GradcheckOptions) -> Result<(f64, usize)> {
    let (n, h, w) = (dim(rng, 1, 2), dim(rng, 1, 4), dim(rng, 1, 4));
    let a = uniform(&[n, dim(rng, 1, 3), h, w], rng);
    let b = uniform(&[n, dim(rng, 1, 3), h, w], rng);
    let mut layer = Layer::concat_skip("cat");
    let out = layer.forward_pair(&a, &b)?;
    let r = uniform(out.shape(), rng);
    let (ga, gb) = layer.backward_pair(&r)?;
    let probe = Probe {
        inputs: vec![a, b],
        analytic: vec![ga, gb],
    };
    compare(probe, |xs| Ok(dot(&layer.apply_pair(&xs[0], &xs[1])?, &r)), opts, rng)
}

fn random_truth(n: usize, c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Result<GroundMask<f64>> {
    let pixels = n * h * w;
    let labels: Vec<u8> = (0..pixels).map(|_| rng.random_range(0..c) as u8).collect();
    let mut valid: Vec<bool> = (0..pixels).map(|_| rng.random::<f64>() < 0.8).collect();
    valid[0] = true;
    GroundMask::from_labels(&labels, &valid, [n, h, w], c)
}

fn loss_case(kind: LossKind, rng: &mut ChaCha8Rng, opts: &GradcheckOptions) -> Result<(f64, usize)> {
    let (n, c, h, w) = (dim(rng, 1, 3), dim(rng, 2, 4), dim(rng, 1, 4), dim(rng, 1, 4));
    let truth = random_truth(n, c, h, w, rng)?;
    let p = Tensor::from_fn(&[n, c, h, w], |_| rng.random_range(0.05..0.95));
    let analytic = compute_loss(kind, &p, &truth)?.grad;
    let probe = Probe {
        inputs: vec![p],
        analytic: vec![analytic],
    };
    compare(probe, |xs| Ok(compute_loss(kind, &xs[0], &truth)?.value), opts, rng)
}

fn loss_softmax_case(kind: LossKind, rng: &mut ChaCha8Rng, opts: &GradcheckOptions) -> Result<(f64, usize)> {
    let (n, c, h, w) = (dim(rng, 1, 3), dim(rng, 2, 4), dim(rng, 1, 4), dim(rng, 1, 4));
    let truth = random_truth(n, c, h, w, rng)?;
    let z = Tensor::from_fn(&[n, c, h, w], |_| rng.random_range(-2.0..2.0));
    let analytic = loss_through_softmax(&z, &truth, kind)?.grad;
    let probe = Probe {
        inputs: vec![z],
        analytic: vec![analytic],
    };
    compare(probe, |xs| Ok(loss_through_softmax(&xs[0], &truth, kind)?.value), opts, rng)
}

/// The micro end-to-end configuration: two levels, 8-pixel tiles, four
/// time steps, three classes.
pub fn micro_config() -> ArchitectureConfig {
    ArchitectureConfig {
        levels: 2,
        base_channels: 3,
        channel_schedule: vec![3, 4],
        input_bands: 2,
        time_steps: 4,
        num_classes: 3,
        tile_size: 8,
    }
}

fn network_case(kind: LossKind, rng: &mut ChaCha8Rng, opts: &GradcheckOptions) -> Result<(f64, usize)> {
    let config = micro_config();
    let mut model = NetworkModel::<f64>::build(&config, rng.random())?;
    for p in model.params_mut() {
        if p.name() == "bias" {
            p.value = Tensor::from_fn(p.value.shape(), |_| rng.random_range(-0.1..0.1));
        }
    }
    let n = dim(rng, 1, 2);
    let x = uniform(&config.input_shape(n), rng);
    let truth = random_truth(n, config.num_classes, config.tile_size, config.tile_size, rng)?;

    let probs = model.forward(&x)?;
    let loss = compute_loss(kind, &probs, &truth)?;
    model.zero_grads();
    model.backward(&loss.grad)?;
    let entries = model.param_set();
    let inputs: Vec<Tensor<f64>> = entries.iter().map(|e| e.value.clone()).collect();
    let analytic: Vec<Tensor<f64>> = entries.iter().map(|e| e.grad.clone()).collect();

    let objective = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut m = model.clone();
        m.restore(xs)?;
        Ok(compute_loss(kind, &m.predict(&x)?, &truth)?.value)
    };
    let per_tensor = GradcheckOptions {
        max_coords: opts.max_coords.min(24),
        ..opts.clone()
    };
    compare(Probe { inputs, analytic }, objective, &per_tensor, rng)
}

type Case = fn(&mut ChaCha8Rng, &GradcheckOptions) -> Result<(f64, usize)>;

fn cases() -> Vec<(&'static str, f64, Case)> {
    vec![
        ("layer/Conv3d", LAYER_TOLERANCE, conv3d_case as Case),
        ("layer/Conv2d", LAYER_TOLERANCE, conv2d_case),
        ("layer/ReLU", LAYER_TOLERANCE, relu_case),
        ("layer/MaxPool3d", LAYER_TOLERANCE, maxpool_case),
        ("layer/Upsample2d", LAYER_TOLERANCE, upsample_case),
        ("layer/ConcatSkip", LAYER_TOLERANCE, concat_case),
        ("layer/SoftmaxHead", LAYER_TOLERANCE, softmax_case),
        ("layer/TemporalCollapse", LAYER_TOLERANCE, collapse_case),
        ("loss/iou", LAYER_TOLERANCE, |r, o| loss_case(LossKind::Iou, r, o)),
        ("loss/ce", LAYER_TOLERANCE, |r, o| loss_case(LossKind::CrossEntropy, r, o)),
        ("loss/iou+softmax", LAYER_TOLERANCE, |r, o| loss_softmax_case(LossKind::Iou, r, o)),
        ("loss/ce+softmax", LAYER_TOLERANCE, |r, o| loss_softmax_case(LossKind::CrossEntropy, r, o)),
        ("network/iou", NETWORK_TOLERANCE, |r, o| network_case(LossKind::Iou, r, o)),
        ("network/ce", NETWORK_TOLERANCE, |r, o| network_case(LossKind::CrossEntropy, r, o)),
    ]
}

pub fn check_names() -> Vec<&'static str> {
    cases().into_iter().map(|(name, _, _)| name).collect()
}

/// Runs every check whose name contains `filter` (all when `None`).
pub fn run_suite(opts: &GradcheckOptions, filter: Option<&str>) -> Result<Vec<CheckReport>> {
    let mut reports = Vec::new();
    for (index, (name, tolerance, case)) in cases().into_iter().enumerate() {
        if filter.is_some_and(|f| !name.contains(f)) {
            continue;
        }
        let start = Instant::now();
        let mut worst = 0.0f64;
        let mut coords = 0;
        for s in 0..opts.seeds {
            let seed = opts
                .base_seed
                .wrapping_mul(1_000_003)
                .wrapping_add((index * 10_000 + s) as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (err, n) = case(&mut rng, opts)?;
            worst = if err.is_nan() { f64::INFINITY } else { worst.max(err) };
            coords += n;
        }
        reports.push(CheckReport {
            name: name.to_string(),
            seeds: opts.seeds,
            coords,
            max_rel_error: worst,
            tolerance,
            elapsed: start.elapsed(),
        });
    }
    Ok(reports)
}

/// One line per check: `PASS|FAIL name max_rel_error tolerance seeds`.
pub fn format_report(reports: &[CheckReport]) -> String {
    let mut out = String::new();
    for r in reports {
        out.push_str(&format!(
            "{} {:<24} max_rel_error={:.3e} tol={:.0e} seeds={} coords={} time={:.2}s\n",
            if r.passed() { "PASS" } else { "FAIL" },
            r.name,
            r.max_rel_error,
            r.tolerance,
            r.seeds,
            r.coords,
            r.elapsed.as_secs_f64()
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_basics() {
        assert_eq!(relative_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert_eq!(relative_error(&[1.0, 0.0], &[1.0, 0.0]), 0.0);
        assert!((relative_error(&[2.0], &[1.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn quick_suite_passes_and_perturbation_fails() {
        let opts = GradcheckOptions {
            seeds: 2,
            ..GradcheckOptions::default()
        };
        let reports = run_suite(&opts, None).unwrap();
        assert_eq!(reports.len(), check_names().len());
        for r in &reports {
            assert!(r.passed(), "{}", format_report(&reports));
        }
        let bad = GradcheckOptions {
            perturb: 0.01,
            ..opts
        };
        let reports = run_suite(&bad, Some("layer/Conv2d")).unwrap();
        assert!(!reports[0].passed());
    }
}

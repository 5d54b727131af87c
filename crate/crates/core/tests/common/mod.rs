//! Reference computations shared by the oracle and acceptance targets.

#![allow(dead_code)]

use cropseg::ndtensor::conv3d_forward;
use cropseg::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
pub struct Shape {
    pub n: usize,
    pub ci: usize,
    pub co: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl Shape {
    pub fn output(&self) -> [usize; 3] {
        std::array::from_fn(|a| (self.input[a] + 2 * self.padding[a] - self.kernel[a]) / self.stride[a] + 1)
    }
}

pub fn random_shape(rng: &mut ChaCha8Rng) -> Shape {
    loop {
        let input = [rng.random_range(1..=6), rng.random_range(1..=7), rng.random_range(1..=7)];
        let kernel = [rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(1..=3)];
        let stride = [rng.random_range(1..=2), rng.random_range(1..=2), rng.random_range(1..=2)];
        let padding = [rng.random_range(0..=1), rng.random_range(0..=1), rng.random_range(0..=1)];
        if (0..3).all(|a| input[a] + 2 * padding[a] >= kernel[a]) {
            return Shape {
                n: rng.random_range(1..=2),
                ci: rng.random_range(1..=4),
                co: rng.random_range(1..=4),
                input,
                kernel,
                stride,
                padding,
            };
        }
    }
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Seven nested loops over the unpadded input; out-of-range taps skipped.
pub fn conv3d_oracle(s: &Shape, x: &[f64], k: &[f64], b: &[f64]) -> Vec<f64> {
    let [t, h, w] = s.input;
    let [kt, kh, kw] = s.kernel;
    let [ot, oh, ow] = s.output();
    let mut out = Vec::with_capacity(s.n * s.co * ot * oh * ow);
    for n in 0..s.n {
        for co in 0..s.co {
            for z in 0..ot {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut acc = b[co];
                        for ci in 0..s.ci {
                            for dt in 0..kt {
                                for dh in 0..kh {
                                    for dw in 0..kw {
                                        let it = (z * s.stride[0] + dt) as isize - s.padding[0] as isize;
                                        let ih = (y * s.stride[1] + dh) as isize - s.padding[1] as isize;
                                        let iw = (xx * s.stride[2] + dw) as isize - s.padding[2] as isize;
                                        if it < 0 || ih < 0 || iw < 0 {
                                            continue;
                                        }
                                        let (it, ih, iw) = (it as usize, ih as usize, iw as usize);
                                        if it >= t || ih >= h || iw >= w {
                                            continue;
                                        }
                                        let xi = (((n * s.ci + ci) * t + it) * h + ih) * w + iw;
                                        let ki = (((co * s.ci + ci) * kt + dt) * kh + dh) * kw + dw;
                                        acc += x[xi] * k[ki];
                                    }
                                }
                            }
                        }
                        out.push(acc);
                    }
                }
            }
        }
    }
    out
}

pub fn max_relative(a: &[f64], reference: &[f64]) -> f64 {
    assert_eq!(a.len(), reference.len());
    a.iter()
        .zip(reference)
        .map(|(x, r)| {
            let diff = (x - r).abs();
            if diff == 0.0 {
                0.0
            } else {
                diff / r.abs().max(f64::MIN_POSITIVE)
            }
        })
        .fold(0.0, f64::max)
}

/// Runs the 50 seeded configurations and returns the worst relative error.
pub fn conv3d_worst_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let s = random_shape(&mut rng);
        let x = random_tensor(&mut rng, &[s.n, s.ci, s.input[0], s.input[1], s.input[2]]);
        let k = random_tensor(&mut rng, &[s.co, s.ci, s.kernel[0], s.kernel[1], s.kernel[2]]);
        let b = random_tensor(&mut rng, &[s.co]);
        let got = conv3d_forward(&x, &k, &b, s.stride, s.padding).unwrap();
        let [ot, oh, ow] = s.output();
        assert_eq!(got.shape(), &[s.n, s.co, ot, oh, ow], "{s:?}");
        worst = worst.max(max_relative(got.data(), &conv3d_oracle(&s, x.data(), k.data(), b.data())));
    }
    worst
}

use super::{Scalar, Tensor, AXIS_NAMES};
use crate::error::{Error, Result};

/// Gradients of a convolution with respect to its three operands.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    batch: usize,
    cin: usize,
    cout: usize,
    input: [usize; 3],
    kernel: [usize; 3],
    output: [usize; 3],
    stride: [usize; 3],
    pad: [usize; 3],
}

impl Geometry {
    fn new(
        input: [usize; 5],
        kernel: [usize; 5],
        bias_len: usize,
        stride: [usize; 3],
        pad: [usize; 3],
    ) -> Result<Self> {
        let [batch, cin, t, h, w] = input;
        let [cout, kcin, kt, kh, kw] = kernel;
        if kcin != cin {
            return Err(Error::dim(
                "channel",
                format!("kernel expects {kcin} input channels, input has {cin}"),
            ));
        }
        if bias_len != cout {
            return Err(Error::dim(
                "bias",
                format!("bias has {bias_len} entries for {cout} output channels"),
            ));
        }
        if stride.contains(&0) {
            return Err(Error::Argument(format!("stride {stride:?} has a zero component")));
        }
        let extents = [t, h, w];
        let taps = [kt, kh, kw];
        let mut output = [0; 3];
        for a in 0..3 {
            let padded = extents[a] + 2 * pad[a];
            if taps[a] > padded {
                return Err(Error::dim(
                    AXIS_NAMES[a],
                    format!("kernel extent {} exceeds padded input extent {padded}", taps[a]),
                ));
            }
            output[a] = (padded - taps[a]) / stride[a] + 1;
        }
        Ok(Geometry {
            batch,
            cin,
            cout,
            input: extents,
            kernel: taps,
            output,
            stride,
            pad,
        })
    }

    fn input_volume(&self) -> usize {
        self.input.iter().product()
    }

    fn output_volume(&self) -> usize {
        self.output.iter().product()
    }

    fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    fn output_shape(&self) -> Vec<usize> {
        vec![self.batch, self.cout, self.output[0], self.output[1], self.output[2]]
    }

    /// Output indices `o` along axis `a` whose input index `o*s + tap - pad`
    /// lands inside the unpadded input.
    fn valid(&self, a: usize, tap: usize) -> (usize, usize) {
        let (n_in, n_out, s, p) = (self.input[a], self.output[a], self.stride[a], self.pad[a]);
        let lo = if p > tap { (p - tap).div_ceil(s) } else { 0 };
        let hi = if tap >= n_in + p {
            0
        } else {
            n_out.min((n_in + p - tap).div_ceil(s))
        };
        (lo, hi.max(lo))
    }

    fn source(&self, a: usize, o: usize, tap: usize) -> usize {
        o * self.stride[a] + tap - self.pad[a]
    }
}

fn forward_raw<T: Scalar>(g: &Geometry, input: &[T], kernel: &[T], bias: &[T]) -> Vec<T> {
    let (isz, osz, ksz) = (g.input_volume(), g.output_volume(), g.kernel_volume());
    let [_, ih, iw] = g.input;
    let [_, oh, ow] = g.output;
    let [kt, kh, kw] = g.kernel;
    let sw = g.stride[2];
    let mut out = vec![T::zero(); g.batch * g.cout * osz];

    for b in 0..g.batch {
        for co in 0..g.cout {
            let plane = &mut out[(b * g.cout + co) * osz..][..osz];
            plane.fill(bias[co]);
            for ci in 0..g.cin {
                let vol = &input[(b * g.cin + ci) * isz..][..isz];
                let taps = &kernel[(co * g.cin + ci) * ksz..][..ksz];
                for dt in 0..kt {
                    let (t_lo, t_hi) = g.valid(0, dt);
                    for dh in 0..kh {
                        let (h_lo, h_hi) = g.valid(1, dh);
                        for dw in 0..kw {
                            let (w_lo, w_hi) = g.valid(2, dw);
                            if w_lo >= w_hi {
                                continue;
                            }
                            let wgt = taps[(dt * kh + dh) * kw + dw];
                            for to in t_lo..t_hi {
                                let ti = g.source(0, to, dt);
                                for ho in h_lo..h_hi {
                                    let hi = g.source(1, ho, dh);
                                    let orow = &mut plane[(to * oh + ho) * ow..][..ow];
                                    let irow = &vol[(ti * ih + hi) * iw..][..iw];
                                    if sw == 1 {
                                        let start = g.source(2, w_lo, dw);
                                        let span = w_hi - w_lo;
                                        for (o, &x) in
                                            orow[w_lo..w_hi].iter_mut().zip(&irow[start..start + span])
                                        {
                                            *o += wgt * x;
                                        }
                                    } else {
                                        for wo in w_lo..w_hi {
                                            orow[wo] += wgt * irow[g.source(2, wo, dw)];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns `(grad_input, grad_kernel, grad_bias)`; `grad_input` is skipped
/// (None) when `want_input` is false.
fn backward_raw<T: Scalar>(
    g: &Geometry,
    input: &[T],
    kernel: &[T],
    grad_out: &[T],
    want_input: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let (isz, osz, ksz) = (g.input_volume(), g.output_volume(), g.kernel_volume());
    let [_, ih, iw] = g.input;
    let [_, oh, ow] = g.output;
    let [kt, kh, kw] = g.kernel;
    let sw = g.stride[2];

    let mut grad_bias = vec![T::zero(); g.cout];
    for (co, gb) in grad_bias.iter_mut().enumerate() {
        for b in 0..g.batch {
            for &v in &grad_out[(b * g.cout + co) * osz..][..osz] {
                *gb += v;
            }
        }
    }

    let mut grad_kernel = vec![T::zero(); g.cout * g.cin * ksz];
    for co in 0..g.cout {
        for ci in 0..g.cin {
            let taps = &mut grad_kernel[(co * g.cin + ci) * ksz..][..ksz];
            for dt in 0..kt {
                let (t_lo, t_hi) = g.valid(0, dt);
                for dh in 0..kh {
                    let (h_lo, h_hi) = g.valid(1, dh);
                    for dw in 0..kw {
                        let (w_lo, w_hi) = g.valid(2, dw);
                        if w_lo >= w_hi {
                            continue;
                        }
                        let mut acc = T::zero();
                        for b in 0..g.batch {
                            let vol = &input[(b * g.cin + ci) * isz..][..isz];
                            let plane = &grad_out[(b * g.cout + co) * osz..][..osz];
                            for to in t_lo..t_hi {
                                let ti = g.source(0, to, dt);
                                for ho in h_lo..h_hi {
                                    let hi = g.source(1, ho, dh);
                                    let grow = &plane[(to * oh + ho) * ow..][..ow];
                                    let irow = &vol[(ti * ih + hi) * iw..][..iw];
                                    if sw == 1 {
                                        let start = g.source(2, w_lo, dw);
                                        let span = w_hi - w_lo;
                                        for (&gv, &x) in
                                            grow[w_lo..w_hi].iter().zip(&irow[start..start + span])
                                        {
                                            acc += gv * x;
                                        }
                                    } else {
                                        for wo in w_lo..w_hi {
                                            acc += grow[wo] * irow[g.source(2, wo, dw)];
                                        }
                                    }
                                }
                            }
                        }
                        taps[(dt * kh + dh) * kw + dw] = acc;
                    }
                }
            }
        }
    }

    let grad_input = want_input.then(|| {
        let mut grad_input = vec![T::zero(); g.batch * g.cin * isz];
        for b in 0..g.batch {
            for ci in 0..g.cin {
                let gvol = &mut grad_input[(b * g.cin + ci) * isz..][..isz];
                for co in 0..g.cout {
                    let taps = &kernel[(co * g.cin + ci) * ksz..][..ksz];
                    let plane = &grad_out[(b * g.cout + co) * osz..][..osz];
                    for dt in 0..kt {
                        let (t_lo, t_hi) = g.valid(0, dt);
                        for dh in 0..kh {
                            let (h_lo, h_hi) = g.valid(1, dh);
                            for dw in 0..kw {
                                let (w_lo, w_hi) = g.valid(2, dw);
                                if w_lo >= w_hi {
                                    continue;
                                }
                                let wgt = taps[(dt * kh + dh) * kw + dw];
                                for to in t_lo..t_hi {
                                    let ti = g.source(0, to, dt);
                                    for ho in h_lo..h_hi {
                                        let hi = g.source(1, ho, dh);
                                        let grow = &plane[(to * oh + ho) * ow..][..ow];
                                        let irow = &mut gvol[(ti * ih + hi) * iw..][..iw];
                                        if sw == 1 {
                                            let start = g.source(2, w_lo, dw);
                                            let span = w_hi - w_lo;
                                            for (x, &gv) in irow[start..start + span]
                                                .iter_mut()
                                                .zip(&grow[w_lo..w_hi])
                                            {
                                                *x += wgt * gv;
                                            }
                                        } else {
                                            for wo in w_lo..w_hi {
                                                irow[g.source(2, wo, dw)] += wgt * grow[wo];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        grad_input
    });

    (grad_input, grad_kernel, grad_bias)
}

fn geometry_3d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: [usize; 3],
    padding: [usize; 3],
) -> Result<Geometry> {
    let idims = input.dims::<5>("input")?;
    let kdims = kernel.dims::<5>("kernel")?;
    let [bias_len] = bias.dims::<1>("bias")?;
    Geometry::new(idims, kdims, bias_len, stride, padding)
}

fn geometry_2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: [usize; 2],
    padding: [usize; 2],
) -> Result<Geometry> {
    let [n, c, h, w] = input.dims::<4>("input")?;
    let [co, ci, kh, kw] = kernel.dims::<4>("kernel")?;
    let [bias_len] = bias.dims::<1>("bias")?;
    Geometry::new(
        [n, c, 1, h, w],
        [co, ci, 1, kh, kw],
        bias_len,
        [1, stride[0], stride[1]],
        [0, padding[0], padding[1]],
    )
}

/// 3D cross-correlation with zero padding:
/// `out[n,co,t,h,w] = bias[co] + Σ input_padded[n,ci,t·sT+dt,h·sH+dh,w·sW+dw] · kernel[co,ci,dt,dh,dw]`.
pub fn conv3d_forward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: [usize; 3],
    padding: [usize; 3],
) -> Result<Tensor<T>> {
    let g = geometry_3d(input, kernel, bias, stride, padding)?;
    let out = forward_raw(&g, input.data(), kernel.data(), bias.data());
    Tensor::new(g.output_shape(), out)
}

pub fn conv3d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: [usize; 3],
    padding: [usize; 3],
) -> Result<ConvGrads<T>> {
    let bias = Tensor::zeros(&[kernel.shape().first().copied().unwrap_or(0)]);
    let g = geometry_3d(input, kernel, &bias, stride, padding)?;
    grad_out.expect_shape(&g.output_shape(), "grad_out")?;
    let (gi, gk, gb) = backward_raw(&g, input.data(), kernel.data(), grad_out.data(), true);
    Ok(ConvGrads {
        input: Tensor::new(input.shape().to_vec(), gi.unwrap_or_default())?,
        kernel: Tensor::new(kernel.shape().to_vec(), gk)?,
        bias: Tensor::new(vec![g.cout], gb)?,
    })
}

/// 2D convolution over `(N, C, H, W)`; same contract as [`conv3d_forward`]
/// with a singleton time axis.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: [usize; 2],
    padding: [usize; 2],
) -> Result<Tensor<T>> {
    let g = geometry_2d(input, kernel, bias, stride, padding)?;
    let out = forward_raw(&g, input.data(), kernel.data(), bias.data());
    Tensor::new(vec![g.batch, g.cout, g.output[1], g.output[2]], out)
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: [usize; 2],
    padding: [usize; 2],
) -> Result<ConvGrads<T>> {
    conv2d_backward_opt(input, kernel, grad_out, stride, padding, true)
}

pub(crate) fn conv3d_backward_opt<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: [usize; 3],
    padding: [usize; 3],
    want_input: bool,
) -> Result<ConvGrads<T>> {
    if want_input {
        return conv3d_backward(input, kernel, grad_out, stride, padding);
    }
    let bias = Tensor::zeros(&[kernel.shape().first().copied().unwrap_or(0)]);
    let g = geometry_3d(input, kernel, &bias, stride, padding)?;
    grad_out.expect_shape(&g.output_shape(), "grad_out")?;
    let (_, gk, gb) = backward_raw(&g, input.data(), kernel.data(), grad_out.data(), false);
    Ok(ConvGrads {
        input: Tensor::zeros(input.shape()),
        kernel: Tensor::new(kernel.shape().to_vec(), gk)?,
        bias: Tensor::new(vec![g.cout], gb)?,
    })
}

pub(crate) fn conv2d_backward_opt<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: [usize; 2],
    padding: [usize; 2],
    want_input: bool,
) -> Result<ConvGrads<T>> {
    let bias = Tensor::zeros(&[kernel.shape().first().copied().unwrap_or(0)]);
    let g = geometry_2d(input, kernel, &bias, stride, padding)?;
    grad_out.expect_shape(&[g.batch, g.cout, g.output[1], g.output[2]], "grad_out")?;
    let (gi, gk, gb) = backward_raw(&g, input.data(), kernel.data(), grad_out.data(), want_input);
    Ok(ConvGrads {
        input: match gi {
            Some(gi) => Tensor::new(input.shape().to_vec(), gi)?,
            None => Tensor::zeros(input.shape()),
        },
        kernel: Tensor::new(kernel.shape().to_vec(), gk)?,
        bias: Tensor::new(vec![g.cout], gb)?,
    })
}

use super::{Scalar, Tensor, AXIS_NAMES};
use crate::error::{Error, Result};

/// Routing table from each pooled output element to the input element that
/// produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ArgmaxMap {
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    index: Vec<usize>,
}

impl ArgmaxMap {
    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn indices(&self) -> &[usize] {
        &self.index
    }

    /// Scatters `grad_out` back to the winning input positions.
    fn route<T: Scalar>(&self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        grad_out.expect_shape(&self.output_shape, "grad_out")?;
        let mut grad_in = Tensor::zeros(&self.input_shape);
        let gi = grad_in.data_mut();
        for (&src, &g) in self.index.iter().zip(grad_out.data()) {
            gi[src] += g;
        }
        Ok(grad_in)
    }
}

/// Max pooling over `(time, row, col)` windows without padding. Ties go to
/// the lowest linear index inside the window.
pub fn maxpool3d<T: Scalar>(
    input: &Tensor<T>,
    window: [usize; 3],
    stride: [usize; 3],
) -> Result<(Tensor<T>, ArgmaxMap)> {
    let [n, c, t, h, w] = input.dims::<5>("input")?;
    if window.contains(&0) || stride.contains(&0) {
        return Err(Error::Argument(format!(
            "pool window {window:?} and stride {stride:?} must be positive"
        )));
    }
    let extents = [t, h, w];
    let mut out_ext = [0; 3];
    for a in 0..3 {
        if window[a] > extents[a] {
            return Err(Error::dim(
                AXIS_NAMES[a],
                format!("pool window {} exceeds input extent {}", window[a], extents[a]),
            ));
        }
        out_ext[a] = (extents[a] - window[a]) / stride[a] + 1;
    }
    let [ot, oh, ow] = out_ext;
    let isz = t * h * w;
    let src = input.data();
    let mut out = Vec::with_capacity(n * c * ot * oh * ow);
    let mut index = Vec::with_capacity(out.capacity());
    for nc in 0..n * c {
        let base = nc * isz;
        for to in 0..ot {
            for ho in 0..oh {
                for wo in 0..ow {
                    let mut best = T::neg_infinity();
                    let mut best_at = usize::MAX;
                    for dt in 0..window[0] {
                        let ti = to * stride[0] + dt;
                        for dh in 0..window[1] {
                            let hi = ho * stride[1] + dh;
                            let row = base + (ti * h + hi) * w + wo * stride[2];
                            for dw in 0..window[2] {
                                let v = src[row + dw];
                                if best_at == usize::MAX || v > best {
                                    best = v;
                                    best_at = row + dw;
                                }
                            }
                        }
                    }
                    out.push(best);
                    index.push(best_at);
                }
            }
        }
    }
    let output_shape = vec![n, c, ot, oh, ow];
    let map = ArgmaxMap {
        input_shape: input.shape().to_vec(),
        output_shape: output_shape.clone(),
        index,
    };
    Ok((Tensor::new(output_shape, out)?, map))
}

pub fn maxpool3d_backward<T: Scalar>(grad_out: &Tensor<T>, argmax: &ArgmaxMap) -> Result<Tensor<T>> {
    argmax.route(grad_out)
}

/// Collapses the time axis of `(N, C, T, H, W)` by its maximum, giving
/// `(N, C, H, W)`. Ties go to the earliest time step.
pub fn temporal_max<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, ArgmaxMap)> {
    let [n, c, t, h, w] = input.dims::<5>("input")?;
    if t == 0 {
        return Err(Error::dim("time", "cannot collapse an empty time axis"));
    }
    let plane = h * w;
    let src = input.data();
    let mut out = Vec::with_capacity(n * c * plane);
    let mut index = Vec::with_capacity(n * c * plane);
    for nc in 0..n * c {
        let base = nc * t * plane;
        for p in 0..plane {
            let mut best_at = base + p;
            for ti in 1..t {
                let at = base + ti * plane + p;
                if src[at] > src[best_at] {
                    best_at = at;
                }
            }
            out.push(src[best_at]);
            index.push(best_at);
        }
    }
    let output_shape = vec![n, c, h, w];
    let map = ArgmaxMap {
        input_shape: input.shape().to_vec(),
        output_shape: output_shape.clone(),
        index,
    };
    Ok((Tensor::new(output_shape, out)?, map))
}

pub fn temporal_max_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    argmax: &ArgmaxMap,
) -> Result<Tensor<T>> {
    argmax.route(grad_out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_of_two_by_two() {
        let x = Tensor::<f64>::new(vec![1, 1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, map) = maxpool3d(&x, [1, 2, 2], [1, 2, 2]).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(map.indices(), &[3]);
    }

    #[test]
    fn constant_input_routes_to_first_window_element() {
        let x = Tensor::<f64>::filled(&[1, 1, 2, 4, 4], 0.5);
        let (y, map) = maxpool3d(&x, [2, 2, 2], [2, 2, 2]).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.5));
        let g = Tensor::<f64>::filled(y.shape(), 1.0);
        let gi = maxpool3d_backward(&g, &map).unwrap();
        let hot: Vec<usize> = gi
            .data()
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, _)| i)
            .collect();
        // window origins (t=0; h,w in {0,2})
        assert_eq!(hot, vec![0, 2, 8, 10]);
    }

    #[test]
    fn odd_time_extent_floors() {
        let x = Tensor::<f32>::zeros(&[1, 1, 23, 8, 8]);
        let (y, _) = maxpool3d(&x, [2; 3], [2; 3]).unwrap();
        assert_eq!(y.shape(), &[1, 1, 11, 4, 4]);
    }

    #[test]
    fn oversized_window_is_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 1, 1, 8, 8]);
        match maxpool3d(&x, [2; 3], [2; 3]) {
            Err(Error::Dimension { axis, .. }) => assert_eq!(axis, "time"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn temporal_max_picks_earliest_tie() {
        let x = Tensor::<f64>::new(vec![1, 1, 3, 1, 2], vec![1.0, 5.0, 3.0, 5.0, 3.0, 0.0]).unwrap();
        let (y, map) = temporal_max(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 2]);
        assert_eq!(y.data(), &[3.0, 5.0]);
        assert_eq!(map.indices(), &[2, 1]);
    }
}

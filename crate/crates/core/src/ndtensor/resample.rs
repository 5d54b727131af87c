use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Nearest-neighbour upsampling of `(N, C, H, W)` by an integer factor.
pub fn upsample2d_nearest<T: Scalar>(input: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.dims::<4>("input")?;
    if factor < 1 {
        return Err(Error::Argument("upsampling factor must be at least 1".into()));
    }
    let (oh, ow) = (h * factor, w * factor);
    let src = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for nc in 0..n * c {
        let plane = &src[nc * h * w..][..h * w];
        for y in 0..oh {
            let row = &plane[(y / factor) * w..][..w];
            for x in 0..ow {
                out.push(row[x / factor]);
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

/// Sums each `factor × factor` block of the upstream gradient.
pub fn upsample2d_backward<T: Scalar>(grad_out: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let [n, c, oh, ow] = grad_out.dims::<4>("grad_out")?;
    if factor < 1 {
        return Err(Error::Argument("upsampling factor must be at least 1".into()));
    }
    if oh % factor != 0 || ow % factor != 0 {
        return Err(Error::dim(
            "row",
            format!("gradient extent {oh}x{ow} not divisible by factor {factor}"),
        ));
    }
    let (h, w) = (oh / factor, ow / factor);
    let src = grad_out.data();
    let mut out = Tensor::zeros(&[n, c, h, w]);
    let dst = out.data_mut();
    for nc in 0..n * c {
        let gplane = &src[nc * oh * ow..][..oh * ow];
        let plane = &mut dst[nc * h * w..][..h * w];
        for y in 0..oh {
            let row = &mut plane[(y / factor) * w..][..w];
            for (x, &g) in gplane[y * ow..][..ow].iter().enumerate() {
                row[x / factor] += g;
            }
        }
    }
    Ok(out)
}

/// Concatenates along axis 1; `a` occupies the leading channels.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() < 2 || a.rank() != b.rank() {
        return Err(Error::dim(
            "rank",
            format!("cannot concatenate shapes {:?} and {:?}", a.shape(), b.shape()),
        ));
    }
    for axis in (0..a.rank()).filter(|&i| i != 1) {
        if a.shape()[axis] != b.shape()[axis] {
            return Err(Error::dim(
                format!("axis {axis}"),
                format!("extents {} and {} differ", a.shape()[axis], b.shape()[axis]),
            ));
        }
    }
    let n = a.shape()[0];
    let inner: usize = a.shape()[2..].iter().product();
    let (ca, cb) = (a.shape()[1], b.shape()[1]);
    let mut out = Vec::with_capacity(a.len() + b.len());
    for i in 0..n {
        out.extend_from_slice(&a.data()[i * ca * inner..][..ca * inner]);
        out.extend_from_slice(&b.data()[i * cb * inner..][..cb * inner]);
    }
    let mut shape = a.shape().to_vec();
    shape[1] = ca + cb;
    Tensor::new(shape, out)
}

/// Inverse of [`concat_channels`]: splits the gradient after `leading`
/// channels.
pub fn split_channels<T: Scalar>(grad: &Tensor<T>, leading: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    if grad.rank() < 2 || grad.shape()[1] < leading {
        return Err(Error::dim(
            "channel",
            format!("cannot split {leading} channels from shape {:?}", grad.shape()),
        ));
    }
    let n = grad.shape()[0];
    let c = grad.shape()[1];
    let inner: usize = grad.shape()[2..].iter().product();
    let trailing = c - leading;
    let mut a = Vec::with_capacity(n * leading * inner);
    let mut b = Vec::with_capacity(n * trailing * inner);
    for i in 0..n {
        let block = &grad.data()[i * c * inner..][..c * inner];
        a.extend_from_slice(&block[..leading * inner]);
        b.extend_from_slice(&block[leading * inner..]);
    }
    let mut sa = grad.shape().to_vec();
    sa[1] = leading;
    let mut sb = grad.shape().to_vec();
    sb[1] = trailing;
    Ok((Tensor::new(sa, a)?, Tensor::new(sb, b)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factor_one_is_identity() {
        let x = Tensor::<f32>::from_fn(&[2, 3, 4, 5], |i| i as f32);
        assert_eq!(upsample2d_nearest(&x, 1).unwrap(), x);
        assert!(matches!(upsample2d_nearest(&x, 0), Err(Error::Argument(_))));
    }

    #[test]
    fn replicates_single_pixel() {
        let x = Tensor::<f32>::filled(&[1, 1, 1, 1], 7.0);
        let y = upsample2d_nearest(&x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[7.0; 4]);
        let g = upsample2d_backward(&Tensor::filled(&[1, 1, 2, 2], 1.0f32), 2).unwrap();
        assert_eq!(g.data(), &[4.0]);
    }

    #[test]
    fn concat_orders_and_splits() {
        let a = Tensor::<f64>::from_fn(&[2, 2, 3], |i| i as f64);
        let b = Tensor::<f64>::from_fn(&[2, 3, 3], |i| 100.0 + i as f64);
        let y = concat_channels(&a, &b).unwrap();
        assert_eq!(y.shape(), &[2, 5, 3]);
        assert_eq!(&y.data()[..6], &a.data()[..6]);
        assert_eq!(&y.data()[6..15], &b.data()[..9]);
        let (ga, gb) = split_channels(&y, 2).unwrap();
        assert_eq!((ga, gb), (a, b));
    }

    #[test]
    fn concat_with_empty_channels_is_identity() {
        let x = Tensor::<f64>::from_fn(&[2, 3, 2, 2], |i| i as f64);
        let empty = Tensor::<f64>::zeros(&[2, 0, 2, 2]);
        assert_eq!(concat_channels(&x, &empty).unwrap(), x);
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let a = Tensor::<f64>::zeros(&[1, 2, 4, 4]);
        let b = Tensor::<f64>::zeros(&[1, 2, 4, 5]);
        match concat_channels(&a, &b) {
            Err(Error::Dimension { axis, .. }) => assert_eq!(axis, "axis 3"),
            other => panic!("unexpected {other:?}"),
        }
    }
}

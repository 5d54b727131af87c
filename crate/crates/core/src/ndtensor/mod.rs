//! Dense row-major N-dimensional arrays and the numerical kernels the
//! network is built from.
//!
//! Axis order everywhere is `(example, channel, time, row, col)` for volumes
//! and `(example, channel, row, col)` for rasters. Every kernel accumulates
//! each output element in a fixed order, so results are bitwise reproducible.

mod activation;
pub(crate) mod conv;
mod pool;
mod resample;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, NumAssign};

use crate::error::{Error, Result};

pub use activation::{relu, relu_backward, softmax_backward, softmax_channels};
pub use conv::{conv2d_backward, conv2d_forward, conv3d_backward, conv3d_forward, ConvGrads};
pub use pool::{
    maxpool3d, maxpool3d_backward, temporal_max, temporal_max_backward, ArgmaxMap,
};
pub use resample::{concat_channels, split_channels, upsample2d_backward, upsample2d_nearest};

/// Real scalar the kernels are generic over: `f32` for training, `f64` for
/// gradient checks.
pub trait Scalar:
    Float + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Width of the serialized form in bytes.
    const BYTES: usize;

    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    const BYTES: usize = 4;

    fn from_f64(x: f64) -> Self {
        x as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const BYTES: usize = 8;

    fn from_f64(x: f64) -> Self {
        x
    }

    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("len", &self.data.len())
            .finish()
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dim(
                "data",
                format!("shape {shape:?} needs {expected} elements, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, T::zero())
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    /// Builds a tensor whose element at linear index `i` is `f(i)`.
    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> T) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..len).map(f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Row-major linear offset of `coord`.
    pub fn offset(&self, coord: &[usize]) -> Result<usize> {
        if coord.len() != self.shape.len() {
            return Err(Error::dim(
                "rank",
                format!("coordinate of rank {} for tensor of rank {}", coord.len(), self.rank()),
            ));
        }
        let mut offset = 0;
        for (axis, (&c, &extent)) in coord.iter().zip(&self.shape).enumerate() {
            if c >= extent {
                return Err(Error::dim(
                    format!("axis {axis}"),
                    format!("index {c} out of bounds for extent {extent}"),
                ));
            }
            offset = offset * extent + c;
        }
        Ok(offset)
    }

    pub fn get(&self, coord: &[usize]) -> Result<T> {
        Ok(self.data[self.offset(coord)?])
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Tensor::new(shape.to_vec(), self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::from_f64(x.as_f64())).collect(),
        }
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    /// `self += other`, elementwise.
    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        self.expect_shape(other.shape(), "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: T) {
        self.data.iter_mut().for_each(|x| *x *= factor);
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |acc, &x| if x.abs() > acc { x.abs() } else { acc })
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn expect_shape(&self, shape: &[usize], what: &str) -> Result<()> {
        if self.shape != shape {
            return Err(Error::dim(
                what,
                format!("expected shape {shape:?}, got {:?}", self.shape),
            ));
        }
        Ok(())
    }

    pub(crate) fn dims<const R: usize>(&self, what: &str) -> Result<[usize; R]> {
        <[usize; R]>::try_from(self.shape.as_slice()).map_err(|_| {
            Error::dim(
                format!("{what} rank"),
                format!("expected rank {R}, got shape {:?}", self.shape),
            )
        })
    }
}

pub(crate) const AXIS_NAMES: [&str; 3] = ["time", "row", "col"];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_element_count() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 6]).is_ok());
        let err = Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn offsets_are_row_major() {
        let t = Tensor::<f32>::from_fn(&[2, 3, 4], |i| i as f32);
        assert_eq!(t.offset(&[1, 2, 3]).unwrap(), 23);
        assert_eq!(t.get(&[0, 1, 0]).unwrap(), 4.0);
        assert!(t.offset(&[0, 3, 0]).is_err());
    }

    #[test]
    fn cast_round_trips_representable_values() {
        let t = Tensor::<f32>::from_fn(&[5], |i| i as f32 * 0.5);
        assert_eq!(t.cast::<f64>().cast::<f32>(), t);
    }
}

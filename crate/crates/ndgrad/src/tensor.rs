use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense n-dimensional array, row-major, with cheap clones.
///
/// The element buffer is behind an `Arc` so uploading a tensor into a
/// [`crate::Graph`] (or cloning a dataset image into a batch) does not copy
/// element data. Mutation goes through [`Tensor::data_mut`], which performs
/// copy-on-write when the buffer is shared.
#[derive(Clone, Debug)]
pub struct Tensor<T: Scalar> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    /// Build a tensor from a shape and element vector.
    ///
    /// Fails if the shape product does not match the element count or if any
    /// element is non-finite.
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {:?} implies {} elems, got {}", shape, n, data.len()),
            ));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: "tensor" });
        }
        Ok(Self {
            shape,
            data: Arc::new(data),
        })
    }

    /// Like [`Tensor::new`] but skips the finite check; for internal use on
    /// buffers that were just computed from finite inputs with finite ops.
    pub(crate) fn from_raw(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape,
            data: Arc::new(data),
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::from_raw(shape.to_vec(), vec![T::zero(); n])
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        assert!(value.is_finite(), "full: non-finite fill value");
        let n = shape.iter().product();
        Self::from_raw(shape.to_vec(), vec![value; n])
    }

    /// Rank-0 tensor holding a single value.
    pub fn scalar(value: T) -> Self {
        assert!(value.is_finite(), "scalar: non-finite value");
        Self::from_raw(Vec::new(), vec![value])
    }

    /// I.i.d. standard-normal entries drawn from `rng`.
    pub fn randn<R: Rng + ?Sized>(rng: &mut R, shape: &[usize]) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::standard_normal(rng)).collect();
        Self::from_raw(shape.to_vec(), data)
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

    /// Mutable element access; clones the buffer first if it is shared.
    pub fn data_mut(&mut self) -> &mut [T] {
        let vec: &mut Vec<T> = Arc::make_mut(&mut self.data);
        vec.as_mut_slice()
    }

    /// Single element of a rank-0 or single-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.len(), 1, "item() on tensor with {} elems", self.len());
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Element-wise cast to another precision.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        let data = self.data.iter().map(|v| U::from_f64(v.as_f64())).collect();
        Tensor::from_raw(self.shape.clone(), data)
    }

    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.len() {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} as {:?}", self.shape, shape),
            ));
        }
        Ok(Self {
            shape,
            data: Arc::clone(&self.data),
        })
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_usize(self.len().max(1))
    }

    /// Largest absolute element difference, as f64; shapes must match.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff: shape mismatch");
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    /// Bit-level equality of shape and elements.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.as_f64().to_bits() == b.as_f64().to_bits())
    }
}

impl<T: Scalar> PartialEq for Tensor<T> {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn new_rejects_shape_product_mismatch() {
        let err = Tensor::<f64>::new(vec![2, 3], vec![1.0; 5]).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
    }

    #[test]
    fn new_rejects_non_finite() {
        let err = Tensor::<f64>::new(vec![2], vec![1.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }

    #[test]
    fn scalar_is_rank_zero() {
        let t = Tensor::scalar(2.5f64);
        assert_eq!(t.rank(), 0);
        assert_eq!(t.len(), 1);
        assert_eq!(t.item(), 2.5);
    }

    #[test]
    fn randn_is_deterministic_per_seed() {
        let a = Tensor::<f32>::randn(&mut ChaCha8Rng::seed_from_u64(9), &[4, 4]);
        let b = Tensor::<f32>::randn(&mut ChaCha8Rng::seed_from_u64(9), &[4, 4]);
        assert!(a.bit_eq(&b));
    }

    #[test]
    fn data_mut_does_copy_on_write() {
        let a = Tensor::<f64>::full(&[3], 1.0);
        let mut b = a.clone();
        b.data_mut()[0] = 7.0;
        assert_eq!(a.data()[0], 1.0);
        assert_eq!(b.data()[0], 7.0);
    }

    #[test]
    fn cast_round_trips_f32_values() {
        let a = Tensor::<f32>::new(vec![3], vec![0.5, -1.25, 3.0]).unwrap();
        let b: Tensor<f64> = a.cast();
        let c: Tensor<f32> = b.cast();
        assert!(a.bit_eq(&c));
    }
}

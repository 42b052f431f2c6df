//! Dense tensors and the numeric kernels every layer is built from.
//!
//! A [`Tensor`] is a row-major `Vec` of floats plus a shape. The engine runs
//! in `f32`; every kernel is also instantiated at `f64` so the gradient
//! checker can compare analytic backward passes against central finite
//! differences at tight tolerances.

mod conv;
mod linear;
mod pool;
mod relu;
mod softmax;

pub use conv::{
    conv2d_backward, conv2d_forward, conv2d_grad_input, conv2d_grad_weight, conv2d_output_hw,
};
pub use linear::{linear_backward, linear_forward, linear_grad_input};
pub use pool::{maxpool2_backward, maxpool2_forward};
pub use relu::{relu_backward, relu_forward};
pub use softmax::{group_softmax, group_softmax_backward};

use crate::error::{Error, Result};
use num_traits::{Float, FromPrimitive};
use std::fmt::Debug;

/// Scalar element type of a [`Tensor`]: `f32` for the engine, `f64` for the
/// finite-difference harness.
pub trait Element:
    Float + FromPrimitive + Debug + Default + Send + Sync + 'static
{
    /// Narrowing conversion from `f64`; the argument is always a small
    /// finite value (counts, constants), so precision loss is acceptable.
    fn of(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite f64 converts")
    }

    fn widen(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("float widens to f64")
    }
}

impl Element for f32 {}
impl Element for f64 {}

/// Dense n-dimensional array, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<E: Element = f32> {
    shape: Vec<usize>,
    data: Vec<E>,
}

impl<E: Element> Tensor<E> {
    /// Builds a tensor from a shape and matching flat data.
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<E>) -> Result<Self> {
        let shape = shape.into();
        let expected = checked_len(&shape)?;
        if expected != data.len() {
            return Err(Error::dimension(format!(
                "shape {shape:?} implies {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let len = checked_len(&shape).expect("shape fits in usize");
        Self {
            shape,
            data: vec![E::zero(); len],
        }
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: E) -> Self {
        let shape = shape.into();
        let len = checked_len(&shape).expect("shape fits in usize");
        Self {
            shape,
            data: vec![value; len],
        }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> E) -> Self {
        let shape = shape.into();
        let len = checked_len(&shape).expect("shape fits in usize");
        Self {
            shape,
            data: (0..len).map(&mut f).collect(),
        }
    }

    pub fn scalar(value: E) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<E> {
        self.data
    }

    /// Extent of axis `i`.
    pub fn dim(&self, i: usize) -> usize {
        self.shape[i]
    }

    /// New view with the same element count; consumes the tensor so the
    /// buffer is reused without copying.
    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        let expected = checked_len(&shape)?;
        if expected != self.data.len() {
            return Err(Error::dimension(format!(
                "reshape to {shape:?} needs {expected} elements, tensor has {}",
                self.data.len()
            )));
        }
        Ok(Self {
            shape,
            data: self.data,
        })
    }

    /// Copies sample `n` out of a batched tensor (axis 0 is the batch axis).
    pub fn slice_batch(&self, n: usize) -> Result<Self> {
        if self.shape.is_empty() || n >= self.shape[0] {
            return Err(Error::dimension(format!(
                "batch index {n} out of range for shape {:?}",
                self.shape
            )));
        }
        let stride = self.data.len() / self.shape[0];
        let data = self.data[n * stride..(n + 1) * stride].to_vec();
        Ok(Self {
            shape: self.shape[1..].to_vec(),
            data,
        })
    }

    /// Stacks same-shaped tensors along a new leading batch axis.
    pub fn stack(items: &[Self]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::dimension("cannot stack zero tensors"))?;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for item in items {
            if item.shape != first.shape {
                return Err(Error::dimension(format!(
                    "stack shape mismatch: {:?} vs {:?}",
                    first.shape, item.shape
                )));
            }
            data.extend_from_slice(&item.data);
        }
        let mut shape = Vec::with_capacity(first.shape.len() + 1);
        shape.push(items.len());
        shape.extend_from_slice(&first.shape);
        Ok(Self { shape, data })
    }

    pub fn iter(&self) -> std::slice::Iter<'_, E> {
        self.data.iter()
    }

    /// True when every element is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Converts element type; used to lift `f32` fixtures into the `f64`
    /// gradient-check instantiation.
    pub fn cast<T: Element>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| <T as Element>::of(Element::widen(*v)))
                .collect(),
        }
    }
}

impl Tensor<f32> {
    /// Bit patterns of the payload, for exact equality checks.
    pub fn to_bits(&self) -> Vec<u32> {
        self.data.iter().map(|v| v.to_bits()).collect()
    }
}

fn checked_len(shape: &[usize]) -> Result<usize> {
    if shape.contains(&0) {
        return Err(Error::dimension(format!(
            "zero extent in shape {shape:?}"
        )));
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::dimension(format!("shape {shape:?} overflows usize")))
}

/// Dot product with eight parallel accumulators. Reductions with a single
/// accumulator serialize on fma latency; splitting the chain keeps the
/// pretraining matmuls throughput-bound. The lane split is fixed, so results
/// are identical across runs.
pub(crate) fn dot<E: Element>(a: &[E], b: &[E]) -> E {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [E::zero(); 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let (av, bv) = (&a[i * 8..i * 8 + 8], &b[i * 8..i * 8 + 8]);
        for l in 0..8 {
            lanes[l] = lanes[l] + av[l] * bv[l];
        }
    }
    let mut tail = E::zero();
    for i in chunks * 8..a.len() {
        tail = tail + a[i] * b[i];
    }
    let s01 = lanes[0] + lanes[1];
    let s23 = lanes[2] + lanes[3];
    let s45 = lanes[4] + lanes[5];
    let s67 = lanes[6] + lanes[7];
    ((s01 + s23) + (s45 + s67)) + tail
}

/// Validates a rank-4 shape and returns its extents.
pub(crate) fn dims4<E: Element>(t: &Tensor<E>, what: &str) -> Result<(usize, usize, usize, usize)> {
    dims4_of(t.shape(), what)
}

/// As `dims4` but for a bare shape slice.
pub(crate) fn dims4_of(shape: &[usize], what: &str) -> Result<(usize, usize, usize, usize)> {
    match shape {
        &[a, b, c, d] => Ok((a, b, c, d)),
        s => Err(Error::dimension(format!(
            "{what} expects a rank-4 tensor, got shape {s:?}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_length_mismatch() {
        let err = Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn reshape_preserves_element_count() {
        let t = Tensor::<f32>::from_fn(vec![2, 6], |i| i as f32);
        let r = t.clone().reshape(vec![3, 4]).unwrap();
        assert_eq!(r.shape(), &[3, 4]);
        assert_eq!(r.data(), t.data());
        assert!(t.reshape(vec![5, 2]).is_err());
    }

    #[test]
    fn stack_and_slice_round_trip() {
        let a = Tensor::<f32>::full(vec![2, 2], 1.0);
        let b = Tensor::<f32>::full(vec![2, 2], 2.0);
        let s = Tensor::stack(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(s.shape(), &[2, 2, 2]);
        assert_eq!(s.slice_batch(0).unwrap(), a);
        assert_eq!(s.slice_batch(1).unwrap(), b);
    }

    #[test]
    fn zero_extent_rejected() {
        assert!(Tensor::<f32>::new(vec![2, 0], vec![]).is_err());
    }
}

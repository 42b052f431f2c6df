//! Elementwise ReLU. The derivative at exactly zero is taken as zero.

use super::{Element, Tensor};

pub fn relu_forward<E: Element>(input: &Tensor<E>) -> Tensor<E> {
    let mut out = input.clone();
    for v in out.data_mut() {
        if *v < E::zero() {
            *v = E::zero();
        }
    }
    out
}

/// Masks the incoming gradient by where the forward input was positive.
pub fn relu_backward<E: Element>(input: &Tensor<E>, grad_out: &Tensor<E>) -> Tensor<E> {
    debug_assert_eq!(input.shape(), grad_out.shape());
    let mut gin = grad_out.clone();
    for (gv, xv) in gin.data_mut().iter_mut().zip(input.data()) {
        if *xv <= E::zero() {
            *gv = E::zero();
        }
    }
    gin
}

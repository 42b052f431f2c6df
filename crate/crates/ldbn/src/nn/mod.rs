//! Model assembly: batch normalization, the layer enum, the sequential
//! stack, and the on-disk weight format.

mod batchnorm;
mod layer;
mod stack;
mod weights;

pub use batchnorm::{bn_batch_backward, bn_batch_forward, bn_inference_forward, BatchNorm2d, BnCache};
pub use layer::Layer;
pub use stack::{reference_model, LayerDesc, LayerStack, ParamClass};
pub use weights::{load_weights, save_weights, WEIGHTS_MAGIC, WEIGHTS_VERSION};

/// How a forward pass treats batch-norm statistics.
///
/// * `Inference`: normalize with stored running statistics; nothing is
///   cached and nothing can be backpropagated.
/// * `Adapt`: normalize with statistics of the current batch and cache what
///   the backward pass needs. Running statistics are left untouched.
/// * `Train`: like `Adapt`, but running statistics also take an EMA step
///   toward the batch statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Inference,
    Adapt,
    Train,
}

//! Unsupervised test-time adaptation: entropy loss and the BN-only
//! streaming engine.

mod engine;
mod entropy;

pub use engine::{AdaptConfig, FrameResult, StepMetrics, StreamAdapter};
pub use entropy::entropy_loss;

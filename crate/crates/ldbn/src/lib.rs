//! Test-time adaptation for a compact row-anchor lane detector, done the
//! cheap way: when the input distribution drifts, recompute batch-norm
//! statistics from the live frames and nudge only the BN scale/shift
//! parameters with a single entropy backward per step. Everything else in
//! the network stays frozen, so a step costs one forward, one restricted
//! backward and a tiny update, and the whole loop runs under a per-frame
//! deadline on a CPU.
//!
//! The crate is self-contained: a small tensor library with checked
//! gradients ([`tensor`]), the network and its weight format ([`nn`]), the
//! row-anchor head ([`lane`]), the adaptation engine ([`adapt`]), a
//! synthetic road renderer with parametric domain shift ([`scenario`]),
//! and the streaming/pretraining/reporting harness ([`harness`]). The
//! `ldbn` binary wires these into `pretrain`, `gen`, `adapt`, `eval` and
//! `gradcheck` subcommands.
//!
//! The runnable examples are the guided tour:
//!
//! - `pretrain`: train the reference detector on the clean source domain.
//! - `stream_adapt`: the headline loop; recover a night-shifted stream
//!   online and watch accuracy climb back.
//! - `evaluate`: frozen-model accuracy across every shift preset.
//! - `batch_size_sweep`: why adapting every frame beats batching.
//! - `deadline_accounting`: exact per-frame timing with an injected clock.
//! - `shift_profiles`: what each photometric preset does to a frame.
//! - `generate_dataset`: render, save and reload a dataset file.
//! - `weights_io`: the weight container's round-trip and error reporting.
//! - `gradcheck`: every backward kernel against finite differences.

pub mod adapt;
mod bytes;
pub mod error;
pub mod harness;
pub mod lane;
pub mod nn;
pub mod scenario;
pub mod tensor;

pub use error::{Error, Result};

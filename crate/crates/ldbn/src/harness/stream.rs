//! The streaming loop: frames in, adapted model and a report out.
//!
//! Labels ride along purely for reporting; the adapter itself only ever
//! receives image tensors. Timing covers inference and adaptation as read
//! from the injected clock; decode and bookkeeping are outside the
//! measured intervals.

use super::clock::Clock;
use super::report::{summarize, StreamReport, StreamRow};
use crate::adapt::{entropy_loss, StreamAdapter};
use crate::error::{Error, Result};
use crate::lane::{accuracy, decode};
use crate::scenario::{frame_at, Frame, ScenarioSpec};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamOptions {
    /// Frame rate defining the per-frame deadline of `1000 / fps` ms.
    pub fps: f64,
    /// With adaptation off every frame is predicted and nothing updates;
    /// this is the frozen-model control.
    pub adaptation: bool,
}

impl Default for StreamOptions {
    fn default() -> Self {
        Self {
            fps: 30.0,
            adaptation: true,
        }
    }
}

impl StreamOptions {
    pub fn validate(&self) -> Result<()> {
        if !self.fps.is_finite() || self.fps <= 0.0 {
            return Err(Error::validation(format!(
                "fps {} must be finite and positive",
                self.fps
            )));
        }
        Ok(())
    }

    pub fn deadline_ms(&self) -> f64 {
        1000.0 / self.fps
    }
}

/// Streams frames through the adapter. A frame misses its deadline iff its
/// total time strictly exceeds the budget, so landing exactly on the
/// deadline counts as met. Numerically discarded steps are counted and the
/// stream continues; other errors abort.
pub fn run_stream(
    adapter: &mut StreamAdapter,
    frames: impl IntoIterator<Item = Result<Frame>>,
    opts: &StreamOptions,
    clock: &mut dyn Clock,
) -> Result<StreamReport> {
    opts.validate()?;
    let deadline = opts.deadline_ms();
    let batched = adapter.config().batch_size > 1;
    let mut rows: Vec<StreamRow> = Vec::new();
    let mut step_errors = 0usize;
    let mut accuracy_sum = 0.0f64;

    for (frame_idx, frame) in frames.into_iter().enumerate() {
        let frame = frame?;
        let image = as_batch(frame.image)?;
        let (logits, infer_ms, adapt_ms) = if opts.adaptation {
            let r = adapter.process_frame(image, clock)?;
            if r.step_error.is_some() {
                step_errors += 1;
            }
            let adapt_ms = r.step.as_ref().map_or(0.0, |m| {
                let batch_forward = if batched { m.forward_ms } else { 0.0 };
                batch_forward + m.backward_ms + m.update_ms
            });
            (r.logits, r.infer_ms, adapt_ms)
        } else {
            let (logits, infer_ms) = adapter.predict_frame(image, clock)?;
            (logits, infer_ms, 0.0)
        };

        let entropy = entropy_loss(&logits)?.0;
        let pred = &decode(&logits, adapter.grid())?[0];
        let frame_accuracy = accuracy(pred, &frame.label)? as f32;
        accuracy_sum += frame_accuracy as f64;
        let total_ms = infer_ms + adapt_ms;
        rows.push(StreamRow {
            frame_idx,
            entropy,
            frame_accuracy,
            running_accuracy: (accuracy_sum / (frame_idx + 1) as f64) as f32,
            infer_ms,
            adapt_ms,
            total_ms,
            deadline_miss: total_ms > deadline,
        });
    }
    if rows.is_empty() {
        return Err(Error::validation("stream contained no frames"));
    }
    let summary = summarize(&rows, deadline, adapter.step_count(), step_errors);
    Ok(StreamReport { rows, summary })
}

/// Mean accuracy of the adapter's current model over the frames, updates
/// off. This is the post-hoc view of a finished adaptation run.
pub fn posthoc_accuracy(
    adapter: &mut StreamAdapter,
    frames: impl IntoIterator<Item = Result<Frame>>,
    clock: &mut dyn Clock,
) -> Result<f32> {
    let mut sum = 0.0f64;
    let mut n = 0usize;
    for frame in frames {
        let frame = frame?;
        let (logits, _) = adapter.predict_frame(as_batch(frame.image)?, clock)?;
        let pred = &decode(&logits, adapter.grid())?[0];
        sum += accuracy(pred, &frame.label)?;
        n += 1;
    }
    if n == 0 {
        return Err(Error::validation("no frames to evaluate"));
    }
    Ok((sum / n as f64) as f32)
}

/// Renders frames `0..n` on a producer thread, handing them over through a
/// bounded channel so generation overlaps the consumer's compute.
pub fn scenario_frames(
    spec: ScenarioSpec,
    n: usize,
    capacity: usize,
) -> impl Iterator<Item = Result<Frame>> {
    let (tx, rx) = std::sync::mpsc::sync_channel(capacity.max(1));
    std::thread::spawn(move || {
        for i in 0..n as u64 {
            // A closed receiver just means the consumer stopped early.
            if tx.send(frame_at(&spec, i)).is_err() {
                return;
            }
        }
    });
    rx.into_iter()
}

fn as_batch(image: Tensor<f32>) -> Result<Tensor<f32>> {
    let mut shape = image.shape().to_vec();
    shape.insert(0, 1);
    image.reshape(shape)
}

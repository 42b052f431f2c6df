//! The adaptation engine: one entropy backward per step, updates restricted
//! to BN scale/shift, with atomic application so a numerically bad step
//! leaves the model exactly as it was.

use super::entropy_loss;
use crate::error::{Error, Result};
use crate::harness::clock::Clock;
use crate::lane::RowAnchorGrid;
use crate::nn::{LayerStack, Mode};
use crate::tensor::Tensor;

/// Hyperparameters of the streaming adapter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptConfig {
    /// Frames per adaptation step. 1 adapts on every frame; larger sizes
    /// buffer frames and step once per full buffer.
    pub batch_size: usize,
    /// SGD step size for BN scale/shift. Zero is legal and makes every
    /// update a no-op, which is useful as an experimental control.
    pub learning_rate: f32,
    /// SGD momentum coefficient.
    pub momentum: f32,
    /// Epsilon inside the BN denominator.
    pub epsilon_bn: f32,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            batch_size: 1,
            learning_rate: 1e-3,
            momentum: 0.9,
            epsilon_bn: 1e-5,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if !matches!(self.batch_size, 1 | 2 | 4) {
            return Err(Error::validation(format!(
                "batch size {} unsupported, expected 1, 2 or 4",
                self.batch_size
            )));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::validation(format!(
                "learning rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        if !self.momentum.is_finite() || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::validation(format!(
                "momentum {} must lie in [0, 1)",
                self.momentum
            )));
        }
        if !self.epsilon_bn.is_finite() || self.epsilon_bn <= 0.0 {
            return Err(Error::validation(format!(
                "epsilon {} must be finite and positive",
                self.epsilon_bn
            )));
        }
        Ok(())
    }
}

/// Cost breakdown of one adaptation step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    /// Mean prediction entropy of the step's batch, in nats.
    pub entropy: f32,
    pub forward_ms: f64,
    pub backward_ms: f64,
    pub update_ms: f64,
}

/// What one streamed frame produced.
#[derive(Debug)]
pub struct FrameResult {
    /// Prediction logits for this frame, `[1, cells+1, anchors, lanes]`.
    pub logits: Tensor<f32>,
    /// Time of the forward pass that produced the prediction.
    pub infer_ms: f64,
    /// Set when this frame triggered an adaptation step that completed.
    pub step: Option<StepMetrics>,
    /// Set when this frame triggered a step that was discarded. The model
    /// and optimizer state are untouched in that case.
    pub step_error: Option<Error>,
}

impl FrameResult {
    /// Additional time this frame spent on adaptation work.
    pub fn adapt_ms(&self) -> f64 {
        self.step
            .as_ref()
            .map_or(0.0, |m| m.backward_ms + m.update_ms)
    }
}

/// Streaming adapter: owns the model, the SGD-with-momentum state for the
/// BN affine parameters, and the frame buffer for batched stepping.
pub struct StreamAdapter {
    model: LayerStack,
    grid: RowAnchorGrid,
    cfg: AdaptConfig,
    /// Per BN layer: velocity of gamma and of beta.
    vel: Vec<(Vec<f32>, Vec<f32>)>,
    buffer: Vec<Tensor<f32>>,
    step_count: u64,
}

impl StreamAdapter {
    pub fn new(mut model: LayerStack, grid: RowAnchorGrid, cfg: AdaptConfig) -> Result<Self> {
        cfg.validate()?;
        let mut vel = Vec::new();
        for bn in model.bn_layers_mut() {
            bn.eps = cfg.epsilon_bn;
            vel.push((vec![0.0; bn.channels()], vec![0.0; bn.channels()]));
        }
        Ok(Self {
            model,
            grid,
            cfg,
            vel,
            buffer: Vec::new(),
            step_count: 0,
        })
    }

    pub fn model(&self) -> &LayerStack {
        &self.model
    }

    /// The optimizer's momentum state: one (gamma, beta) velocity pair per
    /// BN layer. There is deliberately no state for any other parameter.
    pub fn velocities(&self) -> &[(Vec<f32>, Vec<f32>)] {
        &self.vel
    }

    pub fn into_model(self) -> LayerStack {
        self.model
    }

    pub fn config(&self) -> &AdaptConfig {
        &self.cfg
    }

    pub fn grid(&self) -> &RowAnchorGrid {
        &self.grid
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    /// Recomputes this frame's prediction with current-batch statistics
    /// (the statistic-recomputation half of the method) without touching
    /// any parameter. Returns grid-shaped logits and the forward time.
    pub fn predict_frame(
        &mut self,
        frame: Tensor<f32>,
        clock: &mut dyn Clock,
    ) -> Result<(Tensor<f32>, f64)> {
        let frame = self.check_frame(frame)?;
        let t0 = clock.now_ms();
        let flat = self.model.forward(frame, Mode::Adapt)?;
        let logits = self.to_grid(flat)?;
        let t1 = clock.now_ms();
        Ok((logits, t1 - t0))
    }

    /// Feeds one frame through the streaming policy. With batch size 1 the
    /// same forward pass serves prediction and adaptation; with larger
    /// batch sizes the frame is predicted individually and buffered, and a
    /// full buffer triggers one step over the stacked batch.
    pub fn process_frame(
        &mut self,
        frame: Tensor<f32>,
        clock: &mut dyn Clock,
    ) -> Result<FrameResult> {
        let frame = self.check_frame(frame)?;
        if self.cfg.batch_size == 1 {
            let t0 = clock.now_ms();
            let flat = self.model.forward(frame, Mode::Adapt)?;
            let logits = self.to_grid(flat)?;
            let t1 = clock.now_ms();
            let (step, step_error) = match self.finish_step(&logits, t1 - t0, t1, clock) {
                Ok(m) => (Some(m), None),
                Err(e @ Error::Numeric(_)) => (None, Some(e)),
                Err(e) => return Err(e),
            };
            return Ok(FrameResult {
                infer_ms: t1 - t0,
                logits,
                step,
                step_error,
            });
        }

        let (logits, infer_ms) = self.predict_frame(frame.clone(), clock)?;
        self.buffer
            .push(frame.reshape(vec![3, self.grid.height, self.grid.width])?);
        let (mut step, mut step_error) = (None, None);
        if self.buffer.len() == self.cfg.batch_size {
            let batch = Tensor::stack(&self.buffer)?;
            self.buffer.clear();
            match self.adapt_step(batch, clock) {
                Ok((_, m)) => step = Some(m),
                Err(e @ Error::Numeric(_)) => step_error = Some(e),
                Err(e) => return Err(e),
            }
        }
        Ok(FrameResult {
            logits,
            infer_ms,
            step,
            step_error,
        })
    }

    /// One adaptation step on a `[N, 3, H, W]` batch: a single forward with
    /// batch statistics, a single entropy backward, one SGD-momentum update
    /// of BN scale/shift. Returns the batch logits and the step metrics.
    pub fn adapt_step(
        &mut self,
        batch: Tensor<f32>,
        clock: &mut dyn Clock,
    ) -> Result<(Tensor<f32>, StepMetrics)> {
        let t0 = clock.now_ms();
        let flat = self.model.forward(batch, Mode::Adapt)?;
        let logits = self.to_grid(flat)?;
        let t1 = clock.now_ms();
        let metrics = self.finish_step(&logits, t1 - t0, t1, clock)?;
        Ok((logits, metrics))
    }

    /// Entropy loss, BN-only backward, and the atomic parameter update.
    fn finish_step(
        &mut self,
        logits: &Tensor<f32>,
        forward_ms: f64,
        t1: f64,
        clock: &mut dyn Clock,
    ) -> Result<StepMetrics> {
        let (entropy, grad) = entropy_loss(logits)?;
        let n = grad.dim(0);
        let flat_len = grad.len() / n;
        self.model
            .backward_bn_only(grad.reshape(vec![n, flat_len])?)?;
        let t2 = clock.now_ms();
        self.apply_update()?;
        let t3 = clock.now_ms();
        self.step_count += 1;
        Ok(StepMetrics {
            entropy,
            forward_ms,
            backward_ms: t2 - t1,
            update_ms: t3 - t2,
        })
    }

    /// Applies the SGD-momentum update to BN gamma/beta. All gradients are
    /// checked finite before anything is written, so a failing step cannot
    /// leave the model half-updated.
    fn apply_update(&mut self) -> Result<()> {
        let lr = self.cfg.learning_rate;
        let mu = self.cfg.momentum;
        let pairs = self.model.take_bn_grads();
        if pairs.len() != self.vel.len() {
            return Err(Error::state("optimizer state does not match the model"));
        }
        let mut grads = Vec::with_capacity(pairs.len());
        for (bn, gg, gb) in pairs {
            let gg =
                gg.ok_or_else(|| Error::state("adapt update without a preceding backward"))?;
            let gb =
                gb.ok_or_else(|| Error::state("adapt update without a preceding backward"))?;
            if !gg.iter().chain(gb.iter()).all(|v| v.is_finite()) {
                return Err(Error::numeric(
                    "non-finite BN gradient, step discarded",
                ));
            }
            grads.push((bn, gg, gb));
        }
        for ((bn, gg, gb), (vg, vb)) in grads.into_iter().zip(self.vel.iter_mut()) {
            for c in 0..bn.channels() {
                vg[c] = mu * vg[c] - lr * gg[c];
                bn.gamma[c] += vg[c];
                vb[c] = mu * vb[c] - lr * gb[c];
                bn.beta[c] += vb[c];
            }
        }
        Ok(())
    }

    fn check_frame(&self, frame: Tensor<f32>) -> Result<Tensor<f32>> {
        let want = [1, 3, self.grid.height, self.grid.width];
        if frame.shape() != want {
            return Err(Error::dimension(format!(
                "frame shape {:?}, expected {want:?}",
                frame.shape()
            )));
        }
        Ok(frame)
    }

    fn to_grid(&self, flat: Tensor<f32>) -> Result<Tensor<f32>> {
        let n = flat.dim(0);
        flat.reshape(vec![
            n,
            self.grid.cells + 1,
            self.grid.anchors(),
            self.grid.lanes,
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::clock::FakeClock;
    use crate::nn::reference_model;
    use crate::nn::ParamClass;

    fn frame(seed: usize) -> Tensor<f32> {
        Tensor::from_fn(vec![1, 3, 64, 128], |i| {
            ((i + seed * 7919) as f32 * 0.013).sin() * 0.25 + 0.5
        })
    }

    fn snapshot(m: &LayerStack) -> (Vec<f32>, Vec<f32>) {
        let mut affine = Vec::new();
        let mut rest = Vec::new();
        m.visit_params(|_, class, _, data| {
            if class == ParamClass::BnAffine {
                affine.extend_from_slice(data);
            } else {
                rest.extend_from_slice(data);
            }
        });
        (affine, rest)
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let mut c = AdaptConfig::default();
        c.batch_size = 3;
        assert!(c.validate().is_err());
        c = AdaptConfig::default();
        c.learning_rate = -1.0;
        assert!(c.validate().is_err());
        c = AdaptConfig::default();
        c.momentum = 1.0;
        assert!(c.validate().is_err());
        c = AdaptConfig::default();
        c.epsilon_bn = 0.0;
        assert!(c.validate().is_err());
        assert!(AdaptConfig::default().validate().is_ok());
        c = AdaptConfig::default();
        c.learning_rate = 0.0;
        assert!(c.validate().is_ok(), "zero learning rate is a valid control");
    }

    #[test]
    fn step_updates_only_bn_affine_params() {
        let model = reference_model(3);
        let (affine0, rest0) = snapshot(&model);
        let mut ad = StreamAdapter::new(model, RowAnchorGrid::reference(), AdaptConfig::default())
            .unwrap();
        let mut clock = FakeClock::stepping(0.0, 1.0);
        let r = ad.process_frame(frame(0), &mut clock).unwrap();
        assert!(r.step.is_some(), "step should run: {:?}", r.step_error);
        let (affine1, rest1) = snapshot(ad.model());
        assert_ne!(affine0, affine1, "BN affine parameters must move");
        assert_eq!(rest0, rest1, "frozen weights and stats must not move");
        assert_eq!(ad.step_count(), 1);
        assert_eq!(ad.model().backward_calls(), 1, "one backward per step");
    }

    #[test]
    fn zero_learning_rate_is_a_null_update() {
        let model = reference_model(3);
        let (affine0, rest0) = snapshot(&model);
        let cfg = AdaptConfig {
            learning_rate: 0.0,
            ..AdaptConfig::default()
        };
        let mut ad = StreamAdapter::new(model, RowAnchorGrid::reference(), cfg).unwrap();
        let mut clock = FakeClock::stepping(0.0, 1.0);
        for s in 0..3 {
            let r = ad.process_frame(frame(s), &mut clock).unwrap();
            assert!(r.step.is_some());
        }
        let (affine1, rest1) = snapshot(ad.model());
        assert_eq!(affine0, affine1);
        assert_eq!(rest0, rest1);
        assert_eq!(ad.step_count(), 3, "null updates still count as steps");
    }

    #[test]
    fn batch_size_two_buffers_then_steps() {
        let model = reference_model(3);
        let cfg = AdaptConfig {
            batch_size: 2,
            ..AdaptConfig::default()
        };
        let mut ad = StreamAdapter::new(model, RowAnchorGrid::reference(), cfg).unwrap();
        let mut clock = FakeClock::stepping(0.0, 1.0);
        let r0 = ad.process_frame(frame(0), &mut clock).unwrap();
        assert!(r0.step.is_none());
        assert_eq!(ad.buffered(), 1);
        let r1 = ad.process_frame(frame(1), &mut clock).unwrap();
        assert!(r1.step.is_some());
        assert_eq!(ad.buffered(), 0);
        assert_eq!(ad.step_count(), 1);
    }

    #[test]
    fn nan_frame_is_contained_and_model_untouched() {
        let model = reference_model(3);
        let before = snapshot(&model);
        let mut ad = StreamAdapter::new(model, RowAnchorGrid::reference(), AdaptConfig::default())
            .unwrap();
        let mut clock = FakeClock::stepping(0.0, 1.0);
        let mut bad = frame(0);
        bad.data_mut()[100] = f32::NAN;
        let r = ad.process_frame(bad, &mut clock).unwrap();
        assert!(r.step.is_none());
        assert!(matches!(r.step_error, Some(Error::Numeric(_))));
        assert_eq!(snapshot(ad.model()), before);
        assert_eq!(ad.step_count(), 0);
        // the stream continues: a healthy frame adapts normally afterwards
        let r2 = ad.process_frame(frame(1), &mut clock).unwrap();
        assert!(r2.step.is_some());
    }

    #[test]
    fn timing_comes_from_the_clock() {
        let model = reference_model(3);
        let mut ad = StreamAdapter::new(model, RowAnchorGrid::reference(), AdaptConfig::default())
            .unwrap();
        // t0, t1, t2, t3 for one bs=1 frame
        let mut clock = FakeClock::scripted(vec![100.0, 106.5, 109.0, 109.25]);
        let r = ad.process_frame(frame(0), &mut clock).unwrap();
        assert_eq!(r.infer_ms, 6.5);
        let m = r.step.unwrap();
        assert_eq!(m.forward_ms, 6.5);
        assert_eq!(m.backward_ms, 2.5);
        assert_eq!(m.update_ms, 0.25);
        assert_eq!(r.adapt_ms(), 2.75);
    }

    #[test]
    fn wrong_frame_shape_is_a_dimension_error() {
        let model = reference_model(3);
        let mut ad = StreamAdapter::new(model, RowAnchorGrid::reference(), AdaptConfig::default())
            .unwrap();
        let mut clock = FakeClock::stepping(0.0, 1.0);
        let bad = Tensor::<f32>::zeros(vec![1, 3, 32, 32]);
        assert!(matches!(
            ad.process_frame(bad, &mut clock),
            Err(Error::Dimension(_))
        ));
    }
}

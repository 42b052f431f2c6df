//! Source-domain pretraining: full-parameter SGD with momentum on the
//! classification loss, epoch shuffles, and early stop at the target
//! validation accuracy. Everything is a pure function of the config.

use super::config::PretrainConfig;
use crate::error::{Error, Result};
use crate::lane::{accuracy, batch_accuracy, decode, pretrain_loss};
use crate::nn::{reference_model, LayerStack, Mode};
use crate::scenario::{Dataset, ScenarioSpec};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Keeps the shuffle stream distinct from the weight-init stream, which
/// uses the bare seed.
const SHUFFLE_SALT: u64 = 0xD6E8_FEB8_6659_FD93;

/// Validation forward batch; purely a throughput knob.
const EVAL_BATCH: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f32,
    pub val_accuracy: f64,
}

#[derive(Debug)]
pub struct PretrainOutcome {
    pub model: LayerStack,
    pub epochs: Vec<EpochStats>,
    pub final_accuracy: f64,
}

/// Full-parameter SGD with momentum; one velocity buffer per trainable
/// tensor in stack order. Gradients are validated finite before any
/// parameter moves.
pub struct SgdMomentum {
    learning_rate: f32,
    momentum: f32,
    vel: Vec<Vec<f32>>,
}

impl SgdMomentum {
    pub fn new(model: &LayerStack, learning_rate: f32, momentum: f32) -> Self {
        let mut vel = Vec::new();
        model.visit_params(|_, class, _, data| {
            if class != crate::nn::ParamClass::Stat {
                vel.push(vec![0.0; data.len()]);
            }
        });
        Self {
            learning_rate,
            momentum,
            vel,
        }
    }

    pub fn step(&mut self, model: &mut LayerStack) -> Result<()> {
        let pairs = model.take_trainable_grads();
        if pairs.len() != self.vel.len() {
            return Err(Error::state("optimizer state does not match the model"));
        }
        let mut ready = Vec::with_capacity(pairs.len());
        for (param, grad) in pairs {
            let grad = grad
                .ok_or_else(|| Error::state("SGD step without a preceding full backward"))?;
            if grad.len() != param.len() {
                return Err(Error::state("gradient length does not match its parameter"));
            }
            if !grad.iter().all(|v| v.is_finite()) {
                return Err(Error::numeric("non-finite gradient, step discarded"));
            }
            ready.push((param, grad));
        }
        for ((param, grad), vel) in ready.into_iter().zip(self.vel.iter_mut()) {
            for i in 0..param.len() {
                vel[i] = self.momentum * vel[i] - self.learning_rate * grad[i];
                param[i] += vel[i];
            }
        }
        Ok(())
    }
}

/// Trains the reference model on the source scenario until the validation
/// accuracy reaches the target, calling `on_epoch` after each epoch.
/// Fails with a non-convergence error if the epoch cap runs out first.
pub fn pretrain(
    cfg: &PretrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    let train = Dataset::generate(&ScenarioSpec::source(cfg.seed), cfg.frames)?;
    let val = Dataset::generate(
        &ScenarioSpec::source(cfg.seed.wrapping_add(1)),
        cfg.val_frames,
    )?;
    let grid = train.spec.grid()?;

    let mut model = reference_model(cfg.seed);
    let mut sgd = SgdMomentum::new(&model, cfg.learning_rate, cfg.momentum);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_SALT);
    let mut indices: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.max_epochs);
    let mut best = 0.0f64;

    for epoch in 1..=cfg.max_epochs {
        indices.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0f64;
        for chunk in indices.chunks(cfg.batch_size) {
            let (batch, labels) = train.batch(chunk)?;
            let flat = model.forward(batch, Mode::Train)?;
            let n = flat.dim(0);
            let logits = flat.reshape(vec![n, grid.cells + 1, grid.anchors(), grid.lanes])?;
            let (loss, grad) = pretrain_loss(&logits, &labels, &grid)?;
            loss_sum += loss as f64 * chunk.len() as f64;
            let flat_len = grad.len() / n;
            model.backward_full(grad.reshape(vec![n, flat_len])?, false)?;
            sgd.step(&mut model)?;
        }
        let val_accuracy = evaluate_dataset(&mut model, &val)?.0;
        let stats = EpochStats {
            epoch,
            mean_loss: (loss_sum / train.len() as f64) as f32,
            val_accuracy,
        };
        on_epoch(&stats);
        epochs.push(stats);
        best = best.max(val_accuracy);
        if val_accuracy >= cfg.target_accuracy as f64 {
            return Ok(PretrainOutcome {
                model,
                epochs,
                final_accuracy: val_accuracy,
            });
        }
    }
    Err(Error::NonConvergence(format!(
        "validation accuracy {best:.4} after {} epochs, target {}",
        cfg.max_epochs, cfg.target_accuracy
    )))
}

/// Frozen-model accuracy over a dataset: the mean and the per-frame scores,
/// computed with running statistics (inference mode).
pub fn evaluate_dataset(model: &mut LayerStack, ds: &Dataset) -> Result<(f64, Vec<f64>)> {
    if ds.is_empty() {
        return Err(Error::validation("dataset contains no frames"));
    }
    let grid = ds.spec.grid()?;
    let mut per_frame = Vec::with_capacity(ds.len());
    let indices: Vec<usize> = (0..ds.len()).collect();
    for chunk in indices.chunks(EVAL_BATCH) {
        let (batch, labels) = ds.batch(chunk)?;
        let flat = model.forward(batch, Mode::Inference)?;
        let n = flat.dim(0);
        let logits = flat.reshape(vec![n, grid.cells + 1, grid.anchors(), grid.lanes])?;
        let preds = decode(&logits, &grid)?;
        for (pred, label) in preds.iter().zip(&labels) {
            per_frame.push(accuracy(pred, label)?);
        }
    }
    let mean = per_frame.iter().sum::<f64>() / per_frame.len() as f64;
    Ok((mean, per_frame))
}

/// Convenience wrapper: mean accuracy only.
pub fn dataset_accuracy(model: &mut LayerStack, ds: &Dataset) -> Result<f64> {
    Ok(evaluate_dataset(model, ds)?.0)
}

/// The batch-statistics view of accuracy used by the streaming loop's
/// post-hoc pass, here for datasets: every frame normalized by its own
/// statistics, no parameter updates.
pub fn adapt_mode_accuracy(model: &mut LayerStack, ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::validation("dataset contains no frames"));
    }
    let grid = ds.spec.grid()?;
    let mut sum = 0.0f64;
    for i in 0..ds.len() {
        let (batch, labels) = ds.batch(&[i])?;
        let flat = model.forward(batch, Mode::Adapt)?;
        let logits = flat.reshape(vec![1, grid.cells + 1, grid.anchors(), grid.lanes])?;
        sum += batch_accuracy(&logits, &labels, &grid)?;
    }
    Ok(sum / ds.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamClass;

    fn tiny_cfg() -> PretrainConfig {
        PretrainConfig {
            seed: 11,
            frames: 12,
            val_frames: 6,
            max_epochs: 2,
            batch_size: 4,
            learning_rate: 0.02,
            momentum: 0.9,
            target_accuracy: 1.0, // unreachable this fast: runs the full cap
        }
    }

    #[test]
    fn unreachable_target_is_non_convergence_after_full_cap() {
        let mut cfg = tiny_cfg();
        cfg.target_accuracy = 1.0;
        cfg.max_epochs = 1;
        let mut seen = 0;
        let err = pretrain(&cfg, |_| seen += 1).unwrap_err();
        assert!(matches!(err, Error::NonConvergence(_)), "{err}");
        assert_eq!(err.exit_code(), 3);
        assert_eq!(seen, 1);
    }

    #[test]
    fn pretraining_is_seed_deterministic_and_moves_all_classes() {
        let cfg = tiny_cfg();
        let run = |cfg: &PretrainConfig| {
            let err = pretrain(cfg, |_| {}).unwrap_err();
            assert!(matches!(err, Error::NonConvergence(_)));
        };
        // Determinism is checked through the epoch stats stream, which
        // hashes every weight indirectly via loss and accuracy.
        let mut a = Vec::new();
        let _ = pretrain(&cfg, |s| a.push(*s));
        let mut b = Vec::new();
        let _ = pretrain(&cfg, |s| b.push(*s));
        assert_eq!(a, b);
        assert!(a[1].mean_loss < a[0].mean_loss, "loss should drop: {a:?}");
        run(&cfg);
    }

    #[test]
    fn sgd_step_requires_a_backward() {
        let mut model = reference_model(2);
        let mut sgd = SgdMomentum::new(&model, 0.01, 0.9);
        assert!(matches!(sgd.step(&mut model), Err(Error::State(_))));
    }

    #[test]
    fn training_changes_frozen_weights_too() {
        let cfg = tiny_cfg();
        let before = {
            let m = reference_model(cfg.seed);
            let mut v = Vec::new();
            m.visit_params(|_, c, _, d| {
                if c == ParamClass::Frozen {
                    v.extend_from_slice(d);
                }
            });
            v
        };
        // max_epochs exhausted is fine; we only need the side effect.
        let mut cfg2 = cfg.clone();
        cfg2.max_epochs = 1;
        let err = pretrain(&cfg2, |_| {});
        assert!(err.is_err());
        // Rebuild and run one epoch manually to inspect the model.
        let train = Dataset::generate(&ScenarioSpec::source(cfg.seed), cfg.frames).unwrap();
        let grid = train.spec.grid().unwrap();
        let mut model = reference_model(cfg.seed);
        let mut sgd = SgdMomentum::new(&model, cfg.learning_rate, cfg.momentum);
        let (batch, labels) = train.batch(&[0, 1, 2, 3]).unwrap();
        let flat = model.forward(batch, Mode::Train).unwrap();
        let logits = flat.reshape(vec![4, 26, 14, 2]).unwrap();
        let (_, grad) = pretrain_loss(&logits, &labels, &grid).unwrap();
        model
            .backward_full(grad.reshape(vec![4, 728]).unwrap(), false)
            .unwrap();
        sgd.step(&mut model).unwrap();
        let mut after = Vec::new();
        model.visit_params(|_, c, _, d| {
            if c == ParamClass::Frozen {
                after.extend_from_slice(d);
            }
        });
        assert_ne!(before, after, "conv/linear weights must move in training");
    }
}

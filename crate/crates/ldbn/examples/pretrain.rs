//! Train the reference network on the clean source scenario until the
//! validation accuracy target is met, then save the weights. The same
//! recipe ships in configs/pretrain.cfg for the CLI.

use ldbn::harness::config::PretrainConfig;
use ldbn::harness::pretrain::pretrain;
use ldbn::harness::report::sig6;
use ldbn::nn::save_weights;

fn main() -> ldbn::Result<()> {
    let cfg = PretrainConfig {
        seed: 7,
        frames: 400,
        val_frames: 150,
        max_epochs: 12,
        batch_size: 8,
        learning_rate: 0.05,
        momentum: 0.9,
        target_accuracy: 0.92,
    };
    let outcome = pretrain(&cfg, |s| {
        println!(
            "epoch {:>2}  loss {}  val_accuracy {}",
            s.epoch,
            sig6(s.mean_loss as f64),
            sig6(s.val_accuracy)
        );
    })?;

    let path = std::env::temp_dir().join("ldbn_example_weights.ldbn");
    save_weights(&outcome.model, &path)?;
    println!(
        "done: val_accuracy {} after {} epoch(s), weights -> {}",
        sig6(outcome.final_accuracy),
        outcome.epochs.len(),
        path.display()
    );
    Ok(())
}

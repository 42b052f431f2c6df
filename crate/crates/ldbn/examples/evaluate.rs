//! Frozen-model evaluation across every shift profile. Prints the accuracy
//! the pretrained network gets with its running statistics, which is the
//! baseline any adaptation has to beat.

use ldbn::harness::config::PretrainConfig;
use ldbn::harness::pretrain::{evaluate_dataset, pretrain};
use ldbn::harness::report::sig6;
use ldbn::scenario::{Dataset, ScenarioSpec, ShiftProfile};

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
    println!("pretraining on the source domain...");
    let mut model = pretrain(&cfg, |_| {})?.model;

    println!("{:<8} {:>10}", "profile", "accuracy");
    for profile in ShiftProfile::ALL {
        let spec = ScenarioSpec::shifted(profile, 21);
        let ds = Dataset::generate(&spec, 150)?;
        let (mean, _) = evaluate_dataset(&mut model, &ds)?;
        println!("{:<8} {:>10}", profile.name(), sig6(mean));
    }
    Ok(())
}

//! The full loop: pretrain on the source domain, then stream a shifted
//! domain through the model while it adapts its normalization parameters
//! online. No target labels are ever shown to the adapter; the generator's
//! withheld labels feed the accuracy column only.

use ldbn::adapt::{AdaptConfig, StreamAdapter};
use ldbn::harness::clock::RealClock;
use ldbn::harness::config::PretrainConfig;
use ldbn::harness::pretrain::{evaluate_dataset, pretrain};
use ldbn::harness::report::sig6;
use ldbn::harness::stream::{run_stream, scenario_frames, StreamOptions};
use ldbn::scenario::{Dataset, ScenarioSpec, ShiftProfile};

const FRAMES: usize = 500;

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
    let outcome = pretrain(&cfg, |_| {})?;
    let a_src = outcome.final_accuracy;
    println!("source val_accuracy {}", sig6(a_src));

    // Frozen baseline on the shifted domain: running statistics, no
    // adaptation. This is the degradation the method exists to undo.
    let night = ScenarioSpec::shifted(ShiftProfile::Night, 21);
    let mut model = outcome.model;
    let a_frozen = evaluate_dataset(&mut model, &Dataset::generate(&night, FRAMES)?)?.0;
    println!("frozen night accuracy {}", sig6(a_frozen));

    let mut adapter = StreamAdapter::new(model, night.grid()?, AdaptConfig::default())?;
    let opts = StreamOptions {
        fps: 30.0,
        adaptation: true,
    };
    let mut clock = RealClock::new();
    let report = run_stream(
        &mut adapter,
        scenario_frames(night, FRAMES, 8),
        &opts,
        &mut clock,
    )?;
    print!("{}", report.summary_text());

    let s = &report.summary;
    println!(
        "recovered {} of the {} gap",
        sig6((s.final_accuracy as f64 - a_frozen).max(0.0)),
        sig6(a_src - a_frozen)
    );
    Ok(())
}

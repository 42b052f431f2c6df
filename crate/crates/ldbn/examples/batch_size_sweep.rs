//! Paired streams at adaptation batch sizes 1, 2 and 4. Larger batches
//! share one update across more frames, so the model tracks the stream
//! less closely; batch size 1 tends to end with the best final window.

use ldbn::adapt::{AdaptConfig, StreamAdapter};
use ldbn::harness::clock::RealClock;
use ldbn::harness::config::PretrainConfig;
use ldbn::harness::pretrain::pretrain;
use ldbn::harness::report::sig6;
use ldbn::harness::stream::{run_stream, scenario_frames, StreamOptions};
use ldbn::scenario::{ScenarioSpec, ShiftProfile};

const FRAMES: usize = 400;
const SEEDS: [u64; 3] = [1, 2, 3];

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
    let pretrained = pretrain(&cfg, |_| {})?.model;

    println!("{:>4} {:>6} {:>12} {:>12}", "bs", "seed", "final-100", "mean total ms");
    for bs in [1usize, 2, 4] {
        for seed in SEEDS {
            let spec = ScenarioSpec::shifted(ShiftProfile::Fog, seed);
            let adapt_cfg = AdaptConfig {
                batch_size: bs,
                ..AdaptConfig::default()
            };
            let mut adapter = StreamAdapter::new(pretrained.clone(), spec.grid()?, adapt_cfg)?;
            let opts = StreamOptions {
                fps: 30.0,
                adaptation: true,
            };
            let mut clock = RealClock::new();
            let report = run_stream(
                &mut adapter,
                scenario_frames(spec, FRAMES, 8),
                &opts,
                &mut clock,
            )?;
            println!(
                "{bs:>4} {seed:>6} {:>12} {:>12}",
                sig6(report.summary.final_accuracy as f64),
                sig6(report.summary.mean_total_ms)
            );
        }
    }
    Ok(())
}

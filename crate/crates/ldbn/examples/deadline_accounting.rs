//! Deadline bookkeeping with an injected fake clock. The stream never
//! reads wall time here; every latency below is scripted, so the miss
//! column is exactly predictable, including the total == deadline boundary
//! (counted as met).

use ldbn::adapt::{AdaptConfig, StreamAdapter};
use ldbn::harness::clock::FakeClock;
use ldbn::harness::stream::{run_stream, scenario_frames, StreamOptions};
use ldbn::nn::reference_model;
use ldbn::scenario::ScenarioSpec;

fn main() -> ldbn::Result<()> {
    let spec = ScenarioSpec::source(3);
    let adapter_cfg = AdaptConfig::default();
    let mut adapter = StreamAdapter::new(reference_model(3), spec.grid()?, adapter_cfg)?;

    // 25 fps -> an exactly representable 40 ms budget, so the equality
    // boundary below is not at the mercy of rounding. Four clock reads per
    // frame at batch size 1: forward start, forward end, backward end,
    // update end.
    let opts = StreamOptions {
        fps: 25.0,
        adaptation: true,
    };
    let budget = opts.deadline_ms();
    let mut clock = FakeClock::scripted(vec![
        // frame 0: total 20 ms, met
        0.0, 12.0, 18.0, 20.0,
        // frame 1: total exactly the budget, still met
        100.0, 120.0, 130.0, 140.0,
        // frame 2: total 45 ms, missed
        200.0, 225.0, 235.0, 245.0,
    ]);

    let report = run_stream(
        &mut adapter,
        scenario_frames(spec, 3, 2),
        &opts,
        &mut clock,
    )?;

    println!("budget {budget:.4} ms");
    for row in &report.rows {
        println!(
            "frame {}  infer {:>6.2}  adapt {:>6.2}  total {:>7.4}  miss {}",
            row.frame_idx, row.infer_ms, row.adapt_ms, row.total_ms, row.deadline_miss
        );
    }
    println!("miss rate {:.4}", report.summary.miss_rate);
    assert_eq!(
        report.rows.iter().map(|r| r.deadline_miss).collect::<Vec<_>>(),
        [false, false, true]
    );
    Ok(())
}

//! Command-line driver: pretraining, dataset generation, streaming
//! adaptation with deadline accounting, evaluation, and gradient checking.
//!
//! Exit codes: 0 success, 1 usage or runtime error, 2 file-format error,
//! 3 pretraining non-convergence.

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use ldbn::adapt::{AdaptConfig, StreamAdapter};
use ldbn::harness::clock::RealClock;
use ldbn::harness::config::PretrainConfig;
use ldbn::harness::gradcheck::run_gradcheck;
use ldbn::harness::pretrain::{evaluate_dataset, pretrain};
use ldbn::harness::report::sig6;
use ldbn::harness::stream::{posthoc_accuracy, run_stream, scenario_frames, StreamOptions};
use ldbn::nn::{load_weights, save_weights};
use ldbn::scenario::{generate_to_file, Dataset, ScenarioSpec, ShiftProfile};
use ldbn::{Error, Result};
use std::fs;
use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "ldbn", version, about = "Row-anchor lane detection with online BN adaptation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the reference model on the source scenario and save weights.
    Pretrain(PretrainArgs),
    /// Render a scenario into a dataset file.
    Gen(GenArgs),
    /// Stream frames through the model, adapting online, and report timing.
    Adapt(AdaptArgs),
    /// Frozen-model accuracy over a dataset file.
    Eval(EvalArgs),
    /// Check every backward kernel against central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct PretrainArgs {
    /// Path to a `key = value` config file.
    #[arg(long)]
    config: PathBuf,
    /// Where to write the trained weights.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenArgs {
    /// Scenario preset: source, night, glare, fog, sensor.
    #[arg(long, default_value = "source")]
    profile: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Number of frames to render.
    #[arg(long)]
    frames: usize,
    /// Where to write the dataset.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AdaptArgs {
    /// Pretrained weights to adapt.
    #[arg(long)]
    weights: PathBuf,
    /// Scenario preset the stream is rendered from.
    #[arg(long, default_value = "night")]
    profile: String,
    /// Seed of the rendered stream.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Adaptation batch size (1, 2 or 4).
    #[arg(long, default_value_t = 1)]
    bs: usize,
    /// Learning rate for the normalization parameters.
    #[arg(long, default_value_t = 1e-3)]
    lr: f32,
    #[arg(long, default_value_t = 0.9)]
    momentum: f32,
    /// Frame-rate budget; the per-frame deadline is 1000/fps ms.
    #[arg(long, default_value_t = 30.0)]
    fps: f64,
    /// Number of frames to stream.
    #[arg(long, default_value_t = 500)]
    frames: usize,
    /// Optional per-frame CSV report path.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Disable updates: stream and time inference only.
    #[arg(long)]
    frozen: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    weights: PathBuf,
    /// Dataset file to evaluate on.
    #[arg(long)]
    dataset: PathBuf,
    /// Optional per-frame CSV report path.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Seeded random shape draws per kernel.
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Corrupt the named kernel's analytic gradient by 1%. The run must
    /// then fail on exactly that kernel; exists to test the checker.
    #[arg(long)]
    fault: Option<String>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Pretrain(args) => cmd_pretrain(args),
        Command::Gen(args) => cmd_gen(args),
        Command::Adapt(args) => cmd_adapt(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn cmd_pretrain(args: PretrainArgs) -> Result<ExitCode> {
    let mut cfg = PretrainConfig::load(&args.config)?;
    cfg.apply_env_seed()?;
    println!(
        "pretraining: seed {}, {} train / {} val frames, batch {} lr {} momentum {}",
        cfg.seed, cfg.frames, cfg.val_frames, cfg.batch_size, cfg.learning_rate, cfg.momentum
    );
    let outcome = pretrain(&cfg, |s| {
        println!(
            "epoch {:>3}  loss {}  val_accuracy {}",
            s.epoch,
            sig6(s.mean_loss as f64),
            sig6(s.val_accuracy)
        );
    })?;
    save_weights(&outcome.model, &args.out)?;
    println!(
        "reached val_accuracy {} after {} epochs; weights -> {}",
        sig6(outcome.final_accuracy),
        outcome.epochs.len(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_gen(args: GenArgs) -> Result<ExitCode> {
    let profile: ShiftProfile = args.profile.parse()?;
    let spec = ScenarioSpec::shifted(profile, args.seed);
    generate_to_file(&spec, args.frames, &args.out)?;
    println!(
        "wrote {} '{}' frames (seed {}) -> {}",
        args.frames,
        profile,
        args.seed,
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_adapt(args: AdaptArgs) -> Result<ExitCode> {
    let profile: ShiftProfile = args.profile.parse()?;
    let spec = ScenarioSpec::shifted(profile, args.seed);
    let model = load_weights(&args.weights)?;
    let grid = spec.grid()?;
    let cfg = AdaptConfig {
        batch_size: args.bs,
        learning_rate: args.lr,
        momentum: args.momentum,
        ..AdaptConfig::default()
    };
    let mut adapter = StreamAdapter::new(model, grid, cfg)?;
    let opts = StreamOptions {
        fps: args.fps,
        adaptation: !args.frozen,
    };
    let mut clock = RealClock::new();
    println!(
        "streaming {} '{}' frames (seed {}): bs {}, lr {}, deadline {} ms",
        args.frames,
        profile,
        args.seed,
        args.bs,
        args.lr,
        sig6(opts.deadline_ms())
    );
    let mut report = run_stream(
        &mut adapter,
        scenario_frames(spec.clone(), args.frames, 8),
        &opts,
        &mut clock,
    )?;
    report.summary.posthoc_accuracy = Some(posthoc_accuracy(
        &mut adapter,
        scenario_frames(spec, args.frames, 8),
        &mut clock,
    )?);
    if let Some(path) = &args.report {
        report.write_csv(path)?;
        println!("per-frame report -> {}", path.display());
    }
    print!("{}", report.summary_text());
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(args: EvalArgs) -> Result<ExitCode> {
    let mut model = load_weights(&args.weights)?;
    let ds = Dataset::load(&args.dataset)?;
    let (mean, per_frame) = evaluate_dataset(&mut model, &ds)?;
    if let Some(path) = &args.report {
        let mut out = String::from("frame_idx,accuracy\n");
        for (i, a) in per_frame.iter().enumerate() {
            out.push_str(&format!("{i},{}\n", sig6(*a)));
        }
        fs::File::create(path)
            .and_then(|mut f| f.write_all(out.as_bytes()))
            .map_err(Error::from)?;
        println!("per-frame report -> {}", path.display());
    }
    println!("frames {}  accuracy {}", ds.len(), sig6(mean));
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<ExitCode> {
    let report = run_gradcheck(args.seed, args.trials, args.fault.as_deref())?;
    print!("{}", report.table());
    if report.all_pass {
        println!("all kernels pass");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("gradient check FAILED");
        Ok(ExitCode::FAILURE)
    }
}

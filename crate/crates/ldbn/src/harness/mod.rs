//! Runtime scaffolding: clocks, configuration, stream reports, and the
//! pretrain/adapt/eval/gradcheck entry points shared by the CLI and the
//! examples.

pub mod clock;
pub mod config;
pub mod gradcheck;
pub mod pretrain;
pub mod report;
pub mod stream;

pub use clock::{Clock, FakeClock, RealClock};
pub use config::{PretrainConfig, SEED_ENV_VAR};
pub use gradcheck::{run_gradcheck, GradcheckReport, KernelReport, KERNELS};
pub use pretrain::{
    adapt_mode_accuracy, dataset_accuracy, evaluate_dataset, pretrain, EpochStats,
    PretrainOutcome, SgdMomentum,
};
pub use report::{StreamReport, StreamRow, StreamSummary, STREAM_CSV_HEADER};
pub use stream::{posthoc_accuracy, run_stream, scenario_frames, StreamOptions};

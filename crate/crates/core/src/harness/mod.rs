//! Training loop, scheduling, evaluation, checkpoints and experiment reports.

mod checkpoint;
mod fit;
mod reports;
mod task;
mod train;

pub use checkpoint::Checkpoint;
pub use fit::{fit_kernel, FitKernelConfig, FitReport};
pub use reports::{
    band_limited, equivalence_report, random_contraction, resample_report, spectral_norm, EquivalenceReport,
    ResampleConfig, ResampleReport,
};
pub use task::{derive_seed, gen_waves, MetricKind, TaskSpec};
pub use train::{
    evaluate, evaluate_model, read_metrics, sweep_omega0, train, EpochRecord, EvalReport, PlateauScheduler,
    ResampleSpec, SchedulerConfig, SweepConfig, SweepPoint, TrainConfig, TrainOutcome,
};

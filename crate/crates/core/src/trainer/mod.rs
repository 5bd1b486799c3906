//! Optimization loop: schedule, AdamW, clipping, accumulation, checkpoints
//! and the metrics log.

mod adamw;
mod config;
mod metrics;
mod run;
mod schedule;

pub use adamw::{adamw_step, clip_gradients, OptimHyper, OptimState};
pub use config::{RunConfig, TrainConfig, CONFIG_KEYS};
pub use metrics::{MetricsRecord, METRICS_HEADER};
pub use run::{checkpoint_name, train, StepOutcome, TrainSummary, Trainer};
pub use schedule::{lr_at, LrSchedule};

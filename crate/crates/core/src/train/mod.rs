//! Staged learning-rate schedules, the epoch loop, and checkpoint selection.

mod data;
mod run;
mod schedule;

pub use data::LabeledSet;
pub use run::{
    read_metrics_csv, select_best_checkpoint, train, EpochMetrics, RunRecord, SelectionCriterion, TrainOptions,
    TrainOutcome, METRICS_HEADER,
};
pub use schedule::{
    lr_at_epoch, make_paper_schedule, ScheduleId, TrainingSchedule, DEFAULT_BATCH_SIZE, DEFAULT_MOMENTUM,
    DEFAULT_WEIGHT_DECAY,
};

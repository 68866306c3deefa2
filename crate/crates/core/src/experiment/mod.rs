//! Experiment configuration, the shipped recipes, the synthetic dataset
//! generator, and the end-to-end pipeline.

mod config;
mod pipeline;
mod presets;
mod synthetic;

pub use config::{AugmentSection, DataConfig, ExperimentConfig, ModelConfig, SplitConfig, TrainSection};
pub use pipeline::{
    prepare_output_dir, run_experiment, with_failure_marker, ExperimentOutcome, PipelineOptions, FAILED_MARKER,
    SNAPSHOT_FILE,
};
pub use presets::{
    preset, surrogate_of, PRESET_NAMES, SURROGATE_HOLDOUT_FRACTION, SURROGATE_LR_SCALE, SURROGATE_SCHEDULE_DIVISOR,
};
pub use synthetic::{generate_synthetic, render_lesion, SyntheticDataset, SyntheticSpec};

//! Experiment orchestration: configs, the training loop, the metrics log,
//! checkpoints and preset sweeps.

mod checkpoint;
mod config;
mod experiment;
mod metrics;
mod schedule;
mod sweep;

pub use checkpoint::Checkpoint;
pub use config::TrainConfig;
pub use experiment::{
    run_experiment, run_experiment_from_dir, RunOptions, RunSummary, CHECKPOINT_FILE, CONFIG_FILE,
    LOCK_FILE, METRICS_FILE,
};
pub use metrics::{
    Diagnostic, MetricsFile, MetricsHeader, MetricsRecord, MetricsWriter, SCHEMA_VERSION,
};
pub use schedule::eval_schedule;
pub use sweep::{
    preset_configs, run_sweep, Manifest, ManifestEntry, RunStatus, SweepOptions, DESK_SEEDS,
    MANIFEST_FILE, PRESETS,
};

//! End-to-end train, eval, detect, synth and bench runs.

mod config;
mod runs;
mod train;

pub use config::{merge, DataConfig, Profile, RunConfig, Schedule};
pub use runs::{
    format_eval_table, run_bench, run_detect, run_eval, run_synth, run_train, BenchRow, BucketHistogram, DetectionJson,
    ImageDetections, MetricsFile, TrainReport, BENCH_CSV_HEADER,
};
pub use train::{detect_samples, evaluate_model, predict_images, train_model, train_step, EpochRecord, StepRecord};

//! Training loop, evaluation, bucketed reporting and synthetic graphs.

mod buckets;
mod check;
mod eval;
mod synth;
mod train;

pub use buckets::{bucket_report, bucket_report_with, BucketReport, BucketRow};
pub use check::{gradcheck_graph, gradcheck_objective};
pub use eval::{average_precision, evaluate, predict, Scores};
pub use synth::{intermediate_name, pair_agreement, relation_names, synth_graph, write_synth, SynthSpec, TARGET_TYPE};
pub use train::{
    bucket_report_for_run, curves_csv, fmt_float, infer, load_run, objective, sample_plan, train, train_model,
    write_json, DirLock, Diverged, EpochRecord, FinalMetrics, StepLosses, StepRecord, TrainOutcome, TrainRunConfig,
    Trainer, BUCKETS_FILE, CONFIG_FILE, CURVES_FILE, LOCK_FILE, METRICS_FILE, PARAMS_FILE,
};

//! Manifests, fold plans, training configuration, training and scoring.

mod config;
mod corpus;
mod data;
mod folds;
mod manifest;
mod record;
mod train;

pub use config::{ChannelMode, TrainConfig, CONFIG_VERSION, DEFAULT_FOLDS};
pub use corpus::{clip_seed, write_synthetic_corpus, CorpusSpec, MANIFEST_FILE};
pub use data::{clip_features, load_dataset, ClipData, Dataset};
pub use folds::{
    load_dcase_setup, load_fold_plan, make_folds, write_fold_plan, FoldPlan, LoadedPlan,
};
pub use manifest::{load_manifest, write_manifest, Manifest, ManifestEntry};
pub use record::{
    append_record, compare_runs, load_records, parse_records, write_records, Comparison,
    ComparisonRow, EpochRecord, FoldRecord, RunRecord, RECORD_VERSION,
};
pub use train::{
    fold_checkpoint_name, fold_seed, patch_probabilities, run_cross_validation, score_clips,
    train_fold, CvOptions, CvOutcome, EpochHook, EpochStats, TrainedModel, Trainer,
    ALL_FOLDS_CHECKPOINT, EVAL_BATCH, RECORD_FILE,
};

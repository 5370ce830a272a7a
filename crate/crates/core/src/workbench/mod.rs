//! Operational surface: configuration, datasets, labels, the train/evaluate
//! and tuning pipelines, and their reports.

pub mod config;
pub mod dataset;
pub mod label;
pub mod pipeline;

pub use config::{derive_seed, CaseKind, RunConfig};
pub use dataset::{generate_dataset, label_dataset, LabelSource, Manifest, ManifestEntry};
pub use label::{load_path_connected, oracle_label, LabelOverrides};
pub use pipeline::{
    evaluate_model, train_and_evaluate, tune_case, FeasibilityModel, MmcRunner, TrainEvalReport, TuneBundle,
};

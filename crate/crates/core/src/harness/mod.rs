//! Experiment infrastructure: synthetic corpora from known ground truth,
//! corpus/vocabulary file formats, run configuration, metrics emission, the
//! training/evaluation drivers behind the CLI, and the shipped experiment
//! recipes.

pub mod config;
pub mod corpus;
pub mod metrics;
pub mod recipes;
pub mod run;
pub mod synth;

pub use config::{Config, ConfigError, EstimatorKind, FlowKind, Inference, OptimizerKind};
pub use corpus::{load_corpus, load_latents, load_vocab, save_corpus, save_latents, save_vocab, CorpusError};
pub use metrics::{field_f64, read_metrics, MetricsWriter, Value};
pub use recipes::{
    experiment_recipes, run_collapse_demo, run_estimator_bench, run_gap_study, run_table1_sweep,
};
pub use run::{build_encoder, build_model, restore, run_diagnose, run_eval, run_sample, run_train};
pub use synth::{synth_corpus, synth_model, SynthOutput};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Checkpoint(#[from] crate::tensor::CheckpointError),
    #[error(transparent)]
    Train(#[from] crate::training::TrainError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Invalid(String),
}

//! Pool-based active learning for classification.
//!
//! The crate is organised around the labeling loop in [`experiment`]:
//! an optional self-supervised pretraining stage ([`tapt`]) produces a
//! feature map, an initializer ([`init`]) picks the cold-start batch, and
//! an acquisition strategy ([`acquisition`]) picks every later batch. Labels
//! come from a masked oracle, a simulated annotator pool, or a human queue
//! ([`annotate`]). The classifier retrained each round lives in [`model`].

pub mod acquisition;
pub mod annotate;
pub mod clustering;
pub mod config;
pub mod dataio;
pub mod error;
pub mod experiment;
pub mod init;
pub mod model;
pub mod pool;
pub mod rng;
pub mod tapt;

pub use config::{AnnotatorMode, ExperimentConfig, InitializerKind, StrategyKind};
pub use error::{Error, Result};
pub use experiment::{evaluate, run_experiment, Evaluation, RunReport};
pub use model::{ClassifierState, TrainReport};
pub use pool::{split_budget, LabelKind, LabelRecord, Pool, ProbVector, Sample, SampleId};

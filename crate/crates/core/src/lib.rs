//! Student profiling from curriculum-based learning graphs.
//!
//! The pipeline turns raw learning traces into one directed, attribute-annotated
//! graph per student (concepts the student never touched are absorbed into their
//! neighbours), encodes each graph with a GIN encoder trained by local/global
//! mutual-information maximisation, and answers latent-space queries over the
//! resulting embeddings: nearest students, cohort groups and outliers.
//!
//! Modules follow the pipeline order:
//!
//! - [`curriculum`]: concept DAGs and their file format
//! - [`traces`]: attempt logs, tracing vectors, student selection, scaling
//! - [`graphs`]: node absorption and learning-graph construction
//! - [`numerics`]: matrices, parameter tape, backprop kernels, Adam, PCA
//! - [`encoder`]: GIN encoder and local/global discriminator
//! - [`training`]: contrastive objective, training loop, checkpoints
//! - [`analysis`]: embedding store and latent-space queries
//! - [`synth`]: synthetic curricula and student populations

pub mod analysis;
pub mod curriculum;
pub mod encoder;
pub mod graphs;
pub mod numerics;
pub mod synth;
pub mod traces;
pub mod training;

mod error;

pub use analysis::{
    cosine_distance, CohortQuery, EmbeddingStore, StudentAggregate,
};
pub use curriculum::{Concept, CurriculumGraph};
pub use encoder::{EncoderConfig, EncoderModel, GraphEncoding, GraphTensor};
pub use error::{Error, Result};
pub use graphs::{LearningGraph, LearningNode};
pub use numerics::{AdamState, Matrix, ParamId, ParamTape};
pub use traces::{AttemptRecord, FeatureScaler, StudentId, TraceLog, TracingVector};
pub use training::{Checkpoint, TrainConfig, TrainReport};

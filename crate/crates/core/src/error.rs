use thiserror::Error;

use crate::{analysis, curriculum, encoder, graphs, numerics, synth, traces, training};

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Any failure raised by the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Curriculum(#[from] curriculum::CurriculumError),
    #[error(transparent)]
    Trace(#[from] traces::TraceError),
    #[error(transparent)]
    Graph(#[from] graphs::GraphError),
    #[error(transparent)]
    Numerics(#[from] numerics::NumericsError),
    #[error(transparent)]
    Encoder(#[from] encoder::EncoderError),
    #[error(transparent)]
    Train(#[from] training::TrainError),
    #[error(transparent)]
    Analysis(#[from] analysis::AnalysisError),
    #[error(transparent)]
    Synth(#[from] synth::SynthError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

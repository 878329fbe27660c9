use thiserror::Error;

use crate::ensemble::EnsembleError;
use crate::ingest::IngestError;
use crate::metrics::MetricsError;
use crate::pvalue::PValueError;
use crate::scores::ScoreError;
use crate::sim::SimError;

/// Any error raised along the detection pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    PValue(#[from] PValueError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

use thiserror::Error;

use crate::corpus::CorpusError;
use crate::decoding::DecodeError;
use crate::metrics::MetricError;
use crate::model::ModelError;
use crate::runner::RunnerError;
use crate::sampling::SamplingError;
use crate::templating::TemplateError;
use crate::tokenization::TokenizerError;

/// Any error raised by this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Runner(#[from] RunnerError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// True when the failure came from the logit backend rather than from
    /// the inputs.
    pub fn is_backend(&self) -> bool {
        match self {
            Error::Model(e) => e.is_backend(),
            Error::Decode(DecodeError::Model(e)) => e.is_backend(),
            _ => false,
        }
    }
}

use thiserror::Error;

use crate::encoding::EncodingError;
use crate::features::FeatureError;
use crate::groupstats::StatsError;
use crate::io::IoError;
use crate::preprocess::PreprocessError;
use crate::reporting::ReportError;
use crate::synth::SynthError;
use crate::voxelsel::SelectionError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Crate-level error; every module error converts into it.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("invalid argument: {0}")]
    Usage(String),
}

impl Error {
    /// Process exit code: 1 usage, 2 data error, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Encoding(EncodingError::Singular)
            | Error::Encoding(EncodingError::Eigen)
            | Error::Selection(SelectionError::SvdFailed) => 3,
            Error::Encoding(EncodingError::NonFinite) => 3,
            _ => 2,
        }
    }
}

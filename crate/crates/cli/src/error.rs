use std::path::PathBuf;

use recompress_core::bdstats::{BdError, StatsError};
use recompress_core::extcodec::ExtError;
use recompress_core::metrics::MetricError;
use recompress_core::optimizer::OptimizeError;
use recompress_core::pixel::PixelError;
use recompress_core::ratecontrol::RateError;
use recompress_core::refcodec::CodecError;
use recompress_core::report::ReportError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot read {path}: {source}")]
    Input {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {reason}")]
    Config { path: PathBuf, reason: String },
    #[error("{failed} of {total} rows failed; see the status column")]
    Partial { failed: usize, total: usize },
    #[error(transparent)]
    Pixel(#[from] PixelError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Rate(#[from] RateError),
    #[error(transparent)]
    Ext(#[from] ExtError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Bd(#[from] BdError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 2 for bad invocations and unusable inputs, 1 for failures while
    /// running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_)
            | CliError::Input { .. }
            | CliError::Config { .. }
            | CliError::Bd(_)
            | CliError::Stats(_)
            | CliError::Report(_)
            | CliError::Optimize(OptimizeError::EmptyCorpus | OptimizeError::InvalidConfig(_))
            | CliError::Pixel(PixelError::Unreadable { .. } | PixelError::UnsupportedBitDepth { .. }) => 2,
            _ => 1,
        }
    }
}

pub fn read_text(path: &std::path::Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Input {
        path: path.to_path_buf(),
        source,
    })
}

use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed listing line {line}: `{text}`")]
    MalformedLine { line: usize, text: String },
    #[error("inconsistent feature columns: {0}")]
    InconsistentFeatures(String),
    #[error("anchor `{0}` not found in base listing")]
    AnchorNotFound(String),
    #[error("payload does not parse: {0}")]
    PayloadUnparsable(String),
    #[error("too few samples: {0}")]
    TooFewSamples(String),
    #[error("dataset holds a single class")]
    SingleClass,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("{0} became non-finite")]
    NonFinite(String),
    #[error("covariance is degenerate (all features constant)")]
    DegenerateCovariance,
    #[error("at most 2 instruction classes can be excluded, got {0}")]
    TooManyExclusions(usize),
    #[error("voltage {0} V outside [0, V_oc]")]
    OutOfRangeVoltage(f64),
    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().to_path_buf(), source }
    }

    /// True for failures caused by numeric divergence rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFiniteLoss { .. } | Error::NonFinite(_))
    }
}

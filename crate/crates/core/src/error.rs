use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    /// Any error raised while reading or writing a specific file.
    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed array header: {0}")]
    Header(String),

    #[error("unsupported element type '{0}'")]
    UnsupportedElementType(String),

    #[error("expected a {expected}-D array, found shape {found:?}")]
    Shape { expected: &'static str, found: Vec<usize> },

    #[error("array payload is {found} bytes, expected {expected}")]
    Payload { expected: u64, found: u64 },

    #[error("non-finite value at frame {frame}, column {column}")]
    NonFinite { frame: usize, column: usize },

    #[error("negative F0 value {value} at frame {frame}")]
    NegativeF0 { frame: usize, value: f32 },

    #[error("invalid data: {0}")]
    Invalid(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("codebook mismatch: tokens were produced by {expected}, got codebook {found}")]
    CodebookMismatch { expected: String, found: String },

    #[error("token {token} at frame {frame} is out of range for a codebook with k={k}")]
    TokenOutOfRange { frame: usize, token: u32, k: usize },

    #[error("malformed codebook file: {0}")]
    CodebookFormat(String),

    #[error("malformed manifest: {0}")]
    Manifest(String),

    #[error("malformed pairing file: {0}")]
    Pairing(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("found {distinct} distinct frames, need at least k={k}")]
    TooFewDistinctFrames { distinct: usize, k: usize },

    #[error("need at least k={k} frames, have {available}")]
    TooFewFrames { available: u64, k: usize },

    #[error("operation requires at least 2 centers, codebook has k={0}")]
    TooFewCenters(usize),

    #[error("no voiced frames")]
    NoVoicedFrames,

    #[error("zero-norm speaker embedding (empty-speaker sentinel is not comparable)")]
    ZeroNormEmbedding,

    #[error("frame counts differ by more than {tolerance}: features {features}, f0 {f0}")]
    FrameCountMismatch {
        features: usize,
        f0: usize,
        tolerance: usize,
    },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_file(self, path: impl Into<PathBuf>) -> Self {
        match self {
            e @ (Error::Io { .. } | Error::File { .. }) => e,
            e => Error::File {
                path: path.into(),
                source: Box::new(e),
            },
        }
    }

    /// Strips file context, returning the underlying error.
    pub fn root(&self) -> &Error {
        match self {
            Error::File { source, .. } => source.root(),
            e => e,
        }
    }
}

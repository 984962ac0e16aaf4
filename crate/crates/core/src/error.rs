use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor extents disagree with what an operation requires.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Layer, network, scheduler or run configuration is inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// A corruption parameter lies outside every difficulty bin, or a spec is malformed.
    #[error("invalid corruption: {0}")]
    Corruption(String),

    /// NaN or infinity where a finite value is required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Batch normalization in eval mode without running statistics.
    #[error("batch normalization has no running statistics; run a train-mode pass or initialize them")]
    MissingRunningStats,

    #[error("input is {h}x{w} but the network expects {size}x{size}; use tile_restore for other sizes")]
    InputSize { h: usize, w: usize, size: usize },

    #[error("checkpoint: bad magic {0:?}")]
    BadMagic([u8; 4]),

    #[error("checkpoint: unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("checkpoint: file truncated while reading {0}")]
    Truncated(String),

    #[error("checkpoint: tensor {index} has dims {found:?}, expected {expected:?}")]
    TensorShape {
        index: usize,
        found: Vec<usize>,
        expected: Vec<usize>,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image {path}: {message}")]
    Image { path: PathBuf, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status: 1 usage, 2 data, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::NonFinite(_) => 3,
            _ => 2,
        }
    }
}

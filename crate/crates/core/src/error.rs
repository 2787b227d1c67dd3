use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("unsupported format version {0}")]
    BadVersion(u32),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("negative feature value {value} at flat index {index}")]
    NegativeFeature { index: usize, value: f32 },
    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),
    #[error("truncated file: {0}")]
    Truncated(String),
    #[error("malformed image: {0}")]
    BadImage(String),
    #[error("manifest line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("duplicate id {id:?} on manifest line {line}")]
    DuplicateId { id: String, line: u64 },
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("degenerate training data: {0}")]
    DegenerateData(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty image")]
    EmptyImage,
    #[error("no bottom-up candidate maps")]
    EmptyCandidates,
    #[error("no positive features crossed the threshold in any positive image")]
    NoPositives,
    #[error("invalid upsampling target {target_h}x{target_w} for source {src_h}x{src_w}")]
    BadTarget {
        src_h: usize,
        src_w: usize,
        target_h: usize,
        target_w: usize,
    },
    #[error("invalid superpixel count {k} for {pixels} pixels")]
    BadK { k: usize, pixels: usize },
    #[error("unknown category {0:?}")]
    UnknownCategory(String),
    #[error("ground truth mask has no positive pixels")]
    EmptyGroundTruth,
    #[error("missing ground truth: {0}")]
    MissingGroundTruth(String),
    #[error("invalid synthetic spec: {0}")]
    BadSpec(String),
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, with all context layers removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }
}

pub(crate) fn dim_mismatch(what: impl Into<String>) -> Error {
    Error::DimMismatch(what.into())
}

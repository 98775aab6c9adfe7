use std::path::PathBuf;

/// Errors produced anywhere in the estimation toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate patch around point {center}: all neighbors coincide with the center")]
    DegeneratePatch { center: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("coordinate mismatch at point {index}")]
    CoordinateMismatch { index: usize },

    #[error("covariance is rank deficient; normal direction is ill-defined")]
    RankDeficient,

    #[error("singular least-squares system (condition estimate {condition:e})")]
    SingularSystem { condition: f64 },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("refinement step collapsed a query vector to zero length")]
    ZeroVector,

    #[error("mean of sign-normalized normals is degenerate (norm {norm:e})")]
    DegenerateMean { norm: f64 },

    #[error("cloud has no ground-truth normals")]
    MissingNormals,

    #[error("density rejection removed every point")]
    EmptyResult,

    #[error("bad checkpoint magic")]
    BadMagic,

    #[error("unsupported checkpoint version {found}")]
    VersionMismatch { found: String },

    #[error("truncated checkpoint: expected {expected} payload bytes, found {found}")]
    TruncatedFile { expected: usize, found: usize },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse classification used by the command-line front end for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidArgument(_) => ErrorClass::Usage,
            Error::RankDeficient
            | Error::SingularSystem { .. }
            | Error::NonFinite(_)
            | Error::ZeroVector
            | Error::DegenerateMean { .. } => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }

    /// Wraps an I/O error with the file it concerns.
    pub fn file(path: impl AsRef<std::path::Path>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.as_ref().to_path_buf();
        move |source| Error::File { path, source }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

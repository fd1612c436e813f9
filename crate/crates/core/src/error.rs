use std::path::PathBuf;

/// Errors raised by geometry, estimation and file handling.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("sample ({i}, {j}, {k}, {l}) outside grid {ni}x{nj}x{nk}x{nl}")]
    OutOfBounds {
        i: usize,
        j: usize,
        k: f64,
        l: f64,
        ni: usize,
        nj: usize,
        nk: usize,
        nl: usize,
    },
    #[error("view ({i}, {j}) outside grid {ni}x{nj}")]
    ViewOutOfBounds { i: usize, j: usize, ni: usize, nj: usize },
    #[error("singular depth: z must be non-zero")]
    SingularDepth,
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid lens model: {0}")]
    InvalidModel(String),
    #[error("degenerate focal-line axes")]
    DegenerateAxes,
    #[error("insufficient views: need at least {need}, got {got}")]
    InsufficientViews { need: usize, got: usize },
    #[error("degenerate view geometry: design matrix is rank deficient")]
    DegenerateGeometry,
    #[error("non-negative slope eigenvalue {0}: point behind camera")]
    BehindCamera(f64),
    #[error("slope matrix is singular: offsets unrecoverable")]
    OffsetUnrecoverable,
    #[error("invalid observation set: {0}")]
    InvalidObservations(String),
    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), line, msg: msg.into() }
    }
}

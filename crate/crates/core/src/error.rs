use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A covariance system stayed indefinite after jitter. With strictly
    /// positive noise variances this only happens on degenerate inputs.
    #[error("covariance system is not positive definite ({0})")]
    SingularSystem(&'static str),
    #[error("overlap region contains no quadrature nodes")]
    DegenerateOverlap,
    #[error("closed-form criterion requires a box-shaped overlap")]
    NotBoxRegion,
    #[error("malformed packet: {0}")]
    MalformedPacket(String),
    #[error("candidate library is empty")]
    EmptyLibrary,
    #[error("evaluation set is empty")]
    EmptyEvaluationSet,
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("i/o failure on {path}: {message}")]
    Io { path: String, message: String },
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, err: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            message: err.to_string(),
        }
    }
}

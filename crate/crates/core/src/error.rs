use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid ellipticity band: kappa = {kappa} must satisfy 0 < kappa <= K = {k_up}")]
    InvalidBand { kappa: f64, k_up: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A stochastic integral was requested against an omega-dependent kernel.
    #[error("measurability violation: {0}")]
    Measurability(String),

    #[error("coefficient ensemble is not predictable: {0}")]
    NotPredictable(String),

    #[error("CFL condition violated: K*dt/h^2 = {ratio:.4} exceeds {limit}")]
    Cfl { ratio: f64, limit: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("configuration error at {location}: {message}")]
    Config { location: String, message: String },

    #[error("malformed field file {path:?}: {message}")]
    FieldFormat { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn mismatch(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

pub(crate) trait ResultExt<T> {
    fn context(self, context: impl Into<String>) -> Result<T>;
}

impl<T> ResultExt<T> for Result<T> {
    fn context(self, context: impl Into<String>) -> Result<T> {
        self.map_err(|e| e.context(context))
    }
}

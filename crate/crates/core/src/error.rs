use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A denominator or `1 + tau * f` term reached a non-positive value.
    #[error("singularity at coordinate {coordinate}: value {value:e}")]
    Singularity { coordinate: usize, value: f64 },

    #[error("non-finite state at coordinate {coordinate} after integration step")]
    Overflow { coordinate: usize },

    #[error(
        "step size {step:e} fell below the minimum {min_step:e} at t = {t}; the system is too \
         stiff for an explicit Runge-Kutta pair (it would need an exponential number of \
         discretization steps), use the fused solver instead"
    )]
    Stiffness { t: f64, step: f64, min_step: f64 },

    #[error("solver failed at sample {time_index}: {source}")]
    AtTimeIndex {
        time_index: usize,
        #[source]
        source: Box<Error>,
    },

    /// Operation is only defined for a subset of configurations.
    #[error("unsupported configuration: {0}")]
    Contract(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("unsupported checkpoint format version {found} (this build reads version {supported})")]
    Version { found: u32, supported: u32 },

    #[error("parse error at row {row}, column \"{column}\": {message}")]
    Parse { row: usize, column: String, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("training diverged at epoch {epoch}: {message}")]
    Diverged { epoch: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn at_time(self, time_index: usize) -> Error {
        Error::AtTimeIndex { time_index, source: Box::new(self) }
    }

    /// Strips any time-index wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtTimeIndex { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn is_stiffness(&self) -> bool {
        matches!(self.root(), Error::Stiffness { .. })
    }
}

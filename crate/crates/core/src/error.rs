use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// The cost became non-finite or blew up relative to its initial value.
    #[error(
        "fit diverged at epoch {epoch}: cost {cost:e} (amplitude {amplitude}, phase {phase} rad)"
    )]
    Divergence {
        epoch: usize,
        cost: f64,
        amplitude: f64,
        phase: f64,
    },

    #[error("delay out of range: {0}")]
    DelayOutOfRange(String),

    #[error("measurement error: {0}")]
    Measurement(String),

    /// Missing path/temperature coverage in a capture set.
    #[error("incomplete capture set: {}", .0.join("; "))]
    Coverage(Vec<String>),

    #[error("benchmark error: {0}")]
    Benchmark(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("format error at line {line}: {message}")]
    Format { line: u64, message: String },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

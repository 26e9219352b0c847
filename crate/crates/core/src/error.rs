use thiserror::Error;

/// Errors surfaced by configuration, construction and I/O paths.
///
/// Contract violations inside the simulation loop (out-of-range slices,
/// mismatched block sizes on internal buffers) panic instead.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid delay: {0}")]
    InvalidDelay(String),

    #[error("{what} = {millis} ms is not a whole number of ticks at {rate_hz} Hz")]
    InexactTicks {
        what: &'static str,
        millis: f64,
        rate_hz: f64,
    },

    #[error("insufficient history: cutoff tick {cutoff} precedes history start {start}")]
    InsufficientHistory { cutoff: i64, start: i64 },

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("config line {line}: key `{key}`: {message}")]
    Config {
        line: usize,
        key: String,
        message: String,
    },

    #[error("unknown {kind} `{id}` (registered: {registered})")]
    UnknownId {
        kind: &'static str,
        id: String,
        registered: String,
    },

    #[error("DARE did not converge after {iterations} iterations (residual {residual:e})")]
    DareNotConverged { iterations: usize, residual: f64 },

    #[error("malformed run log: {0}")]
    MalformedLog(String),

    #[error("malformed message: {0}")]
    MalformedMessage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

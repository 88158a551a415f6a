use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid too small: need at least {needed} points, got {got}")]
    GridTooSmall { needed: usize, got: usize },

    #[error("field length {got} does not match grid size {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("field is not normalized: integral = {0}")]
    NotNormalized(f64),

    #[error("zero amplitude at index {0}: cannot take logarithm")]
    ZeroAmplitude(usize),

    #[error("log-amplitude {0} at index {1} would overflow")]
    Overflow(f64, usize),

    #[error("nonpositive density value {0} at index {1}")]
    NonpositiveDensity(f64, usize),

    #[error("nonpositive phi value {0} at index {1}")]
    NonpositivePhi(f64, usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate denominator D = {0:e}")]
    DegenerateDenominator(f64),

    #[error("scheme instability at time slice {slice}: {detail}")]
    SchemeInstability { slice: usize, detail: String },

    #[error("Fortet iteration did not converge after {iterations} iterations (last error {last_error:e})")]
    NoConvergence { iterations: usize, last_error: f64 },

    #[error("invalid density: {0}")]
    InvalidDensity(String),

    #[error("drift blow-up: |b dt| = {value} exceeds domain width {width}")]
    DriftBlowup { value: f64, width: f64 },

    #[error("{clamped} of {total} path-steps were clamped to the domain edge")]
    ExcessiveClamping { clamped: u64, total: u64 },

    #[error("time {0} is not a saved slice of the ensemble")]
    SliceNotSaved(f64),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

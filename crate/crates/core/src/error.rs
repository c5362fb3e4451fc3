//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the analysis stack.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Input contained no samples.
    #[error("input contains no samples")]
    EmptyInput,

    /// A non-finite value (NaN or infinity) was found in the data.
    #[error("non-finite value at sample {index}, channel {channel}")]
    NonFinite { index: usize, channel: usize },

    /// Sampling rate must be strictly positive.
    #[error("sampling rate must be positive, got {0}")]
    RateNonPositive(f64),

    /// A parameter violated its documented domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A scale or moment grid violated its invariants.
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    /// Circulant covariance embedding was not nonnegative definite.
    #[error("covariance embedding not nonnegative definite (min eigenvalue {min_eigenvalue:e})")]
    EmbeddingFailure { min_eigenvalue: f64 },

    /// Matrix dimensions do not agree.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// Outer exponent q = 0 requested from a formula that divides by q.
    #[error("q = 0 is undefined for the generic power sum; use the logarithmic-mean branch")]
    ZeroDivision,

    /// A segment summary of exactly zero met a nonpositive moment order.
    #[error("degenerate segment: zero fluctuation summary with q = {q}")]
    DegenerateSegment { q: f64 },

    /// Matrix expected to be symmetric was not, within tolerance.
    #[error("matrix not symmetric (max asymmetry {max_asymmetry:e})")]
    NotSymmetric { max_asymmetry: f64 },

    /// Matrix expected to be positive definite had a nonpositive eigenvalue.
    #[error("matrix not positive definite (min eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    /// Requested scale does not leave at least four segments.
    #[error("scale {scale} too large for series of length {len}")]
    ScaleTooLarge { scale: usize, len: usize },

    /// Segment too short to fit the requested polynomial order.
    #[error("rank-deficient fit: scale {scale} cannot support detrend order {order}")]
    RankDeficientFit { scale: usize, order: usize },

    /// A univariate operation received a multichannel series.
    #[error("operation requires a single channel, got {channels}")]
    MultichannelInput { channels: usize },

    /// Too few samples to estimate the requested covariance.
    #[error("insufficient samples for covariance estimation: {got} < {required}")]
    InsufficientSamples { required: usize, got: usize },

    /// Too few scales in the fit range.
    #[error("too few scales for a log-log fit: {got} < {required}")]
    TooFewScales { required: usize, got: usize },

    /// Moment grid too coarse for finite differencing.
    #[error("q grid too coarse: need at least {required} points, got {got}")]
    GridTooCoarse { required: usize, got: usize },

    /// Requested mode count exceeds what the series can support.
    #[error("K = {k} too large for series of length {len}")]
    KTooLarge { k: usize, len: usize },

    /// Cutoff selection needs at least two modes.
    #[error("cutoff selection requires at least two modes")]
    SingleMode,

    /// Mode index outside the decomposition.
    #[error("mode index {index} out of range 1..={k}")]
    IndexOutOfRange { index: usize, k: usize },

    /// Threshold calibration needs at least two healthy references.
    #[error("insufficient reference set: {got} < {required}")]
    InsufficientReference { required: usize, got: usize },

    /// Healthy and faulty calibration distances overlap.
    #[error("no separation: max healthy distance {max_healthy} >= min faulty distance {min_faulty}")]
    NoSeparation { max_healthy: f64, min_faulty: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

//! Multivariate multifractal analysis for multichannel time series.
//!
//! The crate implements a fluctuation-analysis stack built around a
//! covariance-weighted (Mahalanobis) matrix norm, together with the
//! supporting machinery needed to turn raw multichannel vibration
//! recordings into health decisions:
//!
//! - [`signal`]: core series types, validation and synthetic generators
//!   (white noise, fractional Gaussian noise, binomial cascades, tone
//!   mixtures).
//! - [`norms`]: the `L_pq` matrix-norm family, its Euclidean and
//!   Mahalanobis-weighted extensions, and SPD factorization/whitening.
//! - [`fluctuation`]: profile construction, mirrored segmentation,
//!   polynomial detrending and the univariate / Euclidean / fully
//!   multivariate fluctuation functions.
//! - [`features`]: scaling-exponent fits and the derived multifractal
//!   descriptors (generalized Hurst exponents, mass exponents,
//!   singularity spectrum, scalar feature vector).
//! - [`mvmd`]: multivariate variational mode decomposition, Hurst-based
//!   mode scoring, cutoff selection and signal reconstruction.
//! - [`diagnosis`]: feature-space distances, threshold calibration and
//!   healthy/faulty classification.

pub mod diagnosis;
pub mod error;
pub mod features;
pub mod fluctuation;
pub mod mvmd;
pub mod norms;
pub mod signal;

pub use error::{Error, Result};

// Covariance inputs are nalgebra matrices; re-export the crate so
// callers build them against the same version.
pub use nalgebra;

//! Scaling-exponent fits and derived multifractal descriptors.
//!
//! A fluctuation surface turns into features in three steps: per-q
//! log-log slopes (generalized Hurst exponents), the mass exponents
//! `tau_q = q H_q - 1`, and the singularity spectrum obtained by
//! numerically differentiating `tau_q`. The Hoelder exponents come from
//! `alpha = d tau / d q` so that `f(alpha) = q alpha - tau` holds as an
//! arithmetic identity on the grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fluctuation::FluctuationSurface;

/// Fits with a coefficient of determination below this are flagged as
/// low quality (never dropped).
pub const LOW_QUALITY_R2: f64 = 0.95;

/// Slack allowed before an increase of `h_q` in `q` counts as a
/// monotonicity violation.
pub const H_MONOTONICITY_SLACK: f64 = 1e-6;

/// Minimum number of scales a log-log fit may run on.
const MIN_FIT_SCALES: usize = 4;

/// Per-q power-law fit of a fluctuation surface.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HurstFit {
    pub q_values: Vec<f64>,
    /// Log-log slope of `F_q(s)` against `s`, per q.
    pub h_q: Vec<f64>,
    /// Coefficient of determination of each fit.
    pub r_squared: Vec<f64>,
}

/// Complete multifractal descriptor set over a q grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultifractalFeatures {
    pub q_values: Vec<f64>,
    pub h_q: Vec<f64>,
    pub h_fit_r2: Vec<f64>,
    pub tau_q: Vec<f64>,
    pub alpha_q: Vec<f64>,
    pub f_alpha: Vec<f64>,
    /// Per-q flag set where the log-log fit had `r^2 < 0.95`.
    pub low_quality: Vec<bool>,
    /// Indices where `h_q` increases with q beyond the allowed slack.
    pub monotonicity_violations: Vec<usize>,
}

/// Scalar descriptors entering the diagnosis distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    /// Spread of the generalized Hurst exponents.
    pub delta_h: f64,
    /// Spread of the Hoelder exponents.
    pub spectrum_width: f64,
    /// Left/right asymmetry of the singularity spectrum, in [-1, 1].
    pub spectrum_skew: f64,
    /// Hoelder exponent at the peak of `f(alpha)`.
    pub alpha_peak: f64,
    /// Hurst exponent at `q = 2`.
    pub h2: f64,
    /// Second difference of `tau_q` at `q = 0`.
    pub tau_curvature: f64,
}

impl FeatureVector {
    pub const DIM: usize = 6;

    pub fn as_array(&self) -> [f64; Self::DIM] {
        [
            self.delta_h,
            self.spectrum_width,
            self.spectrum_skew,
            self.alpha_peak,
            self.h2,
            self.tau_curvature,
        ]
    }
}

/// Ordinary least squares of y on x: `(slope, intercept, r_squared)`.
pub(crate) fn ols(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let denom = n * sxx - sx * sx;
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    let mean_y = sy / n;
    let ss_tot: f64 = y.iter().map(|v| (v - mean_y).powi(2)).sum();
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let fit = slope * a + intercept;
            (b - fit).powi(2)
        })
        .sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    (slope, intercept, r2)
}

/// Per-q log-log slope of the fluctuation surface.
///
/// `fit_range` restricts the fit to scales `s` with
/// `range.0 <= s <= range.1`; at least four scales must remain.
pub fn fit_hurst(
    surface: &FluctuationSurface,
    fit_range: Option<(usize, usize)>,
) -> Result<HurstFit> {
    let selected: Vec<usize> = surface
        .scales
        .iter()
        .enumerate()
        .filter(|(_, &s)| fit_range.is_none_or(|(lo, hi)| s >= lo && s <= hi))
        .map(|(i, _)| i)
        .collect();
    if selected.len() < MIN_FIT_SCALES {
        return Err(Error::TooFewScales { required: MIN_FIT_SCALES, got: selected.len() });
    }
    let log_s: Vec<f64> = selected.iter().map(|&i| (surface.scales[i] as f64).ln()).collect();

    let q_values = surface.q_grid.values().to_vec();
    let mut h_q = Vec::with_capacity(q_values.len());
    let mut r_squared = Vec::with_capacity(q_values.len());
    for qi in 0..q_values.len() {
        let log_f: Vec<f64> = selected.iter().map(|&i| surface.values[[qi, i]].ln()).collect();
        let (slope, _, r2) = ols(&log_s, &log_f);
        h_q.push(slope);
        r_squared.push(r2);
    }
    Ok(HurstFit { q_values, h_q, r_squared })
}

/// Second derivative on a possibly non-uniform grid at interior index `i`.
fn second_difference(x: &[f64], y: &[f64], i: usize) -> f64 {
    let h1 = x[i] - x[i - 1];
    let h2 = x[i + 1] - x[i];
    2.0 * (y[i - 1] * h2 - y[i] * (h1 + h2) + y[i + 1] * h1) / (h1 * h2 * (h1 + h2))
}

/// Mass exponents, Hoelder exponents (by central differencing of
/// `tau_q`), and the singularity spectrum.
pub fn derive_spectrum(fit: &HurstFit) -> Result<MultifractalFeatures> {
    let q = &fit.q_values;
    let n = q.len();
    if n < 3 {
        return Err(Error::GridTooCoarse { required: 3, got: n });
    }
    let tau_q: Vec<f64> = q.iter().zip(&fit.h_q).map(|(&q, &h)| q * h - 1.0).collect();

    let mut alpha_q = vec![0.0; n];
    alpha_q[0] = (tau_q[1] - tau_q[0]) / (q[1] - q[0]);
    alpha_q[n - 1] = (tau_q[n - 1] - tau_q[n - 2]) / (q[n - 1] - q[n - 2]);
    for i in 1..n - 1 {
        alpha_q[i] = (tau_q[i + 1] - tau_q[i - 1]) / (q[i + 1] - q[i - 1]);
    }
    let f_alpha: Vec<f64> =
        (0..n).map(|i| q[i] * alpha_q[i] - tau_q[i]).collect();

    let low_quality: Vec<bool> = fit.r_squared.iter().map(|&r2| r2 < LOW_QUALITY_R2).collect();
    let monotonicity_violations: Vec<usize> = (1..n)
        .filter(|&i| fit.h_q[i] > fit.h_q[i - 1] + H_MONOTONICITY_SLACK)
        .collect();

    Ok(MultifractalFeatures {
        q_values: q.clone(),
        h_q: fit.h_q.clone(),
        h_fit_r2: fit.r_squared.clone(),
        tau_q,
        alpha_q,
        f_alpha,
        low_quality,
        monotonicity_violations,
    })
}

/// Scalar descriptors of a complete feature set.
pub fn summarize_features(features: &MultifractalFeatures) -> FeatureVector {
    let h_min = features.h_q.iter().cloned().fold(f64::INFINITY, f64::min);
    let h_max = features.h_q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let a_min = features.alpha_q.iter().cloned().fold(f64::INFINITY, f64::min);
    let a_max = features.alpha_q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = a_max - a_min;

    let peak_idx = features
        .f_alpha
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap_or(0);
    let alpha_peak = features.alpha_q[peak_idx];

    let spectrum_skew = if width > 1e-12 {
        (((alpha_peak - a_min) - (a_max - alpha_peak)) / width).clamp(-1.0, 1.0)
    } else {
        0.0
    };

    let h2 = features
        .q_values
        .iter()
        .position(|&q| (q - 2.0).abs() < 1e-9)
        .map(|i| features.h_q[i])
        .unwrap_or(f64::NAN);

    // Curvature at the grid point nearest q = 0 (interior points only).
    let q = &features.q_values;
    let n = q.len();
    let mut zero_idx = 1;
    let mut best = f64::INFINITY;
    for i in 1..n - 1 {
        if q[i].abs() < best {
            best = q[i].abs();
            zero_idx = i;
        }
    }
    let tau_curvature = second_difference(q, &features.tau_q, zero_idx);

    FeatureVector {
        delta_h: h_max - h_min,
        spectrum_width: width,
        spectrum_skew,
        alpha_peak,
        h2,
        tau_curvature,
    }
}

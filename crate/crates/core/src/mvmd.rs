//! Multivariate variational mode decomposition and mode selection.
//!
//! The decomposition alternates frequency-domain updates: a per-mode
//! Wiener filter applied to each channel's one-sided spectrum, a center
//! frequency shared across channels (the power-weighted mean frequency of
//! the mode over all channels), and a dual-ascent step on the
//! reconstruction constraint. The signal is mirror-extended before the
//! transform and cropped afterwards, so the reported residual is the
//! bookkeeping difference between the input and the mode sum.
//!
//! Mode selection ranks modes by their Hurst exponent at `q = 2`
//! (structured components score high, noise-like ones near one half) and
//! cuts at the largest successive gap.

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::features::fit_hurst;
use crate::fluctuation::{
    cumulative_profile, fluctuation_fm_auto, CovarianceEstimator, DetrendConfig,
    SegmentedFluctuations,
};
use crate::signal::{MultichannelSeries, QGrid, ScaleGrid};

/// Center-frequency initialization strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OmegaInit {
    /// Evenly spread over (0, 0.5) cycles/sample.
    UniformSpread,
    /// Sorted uniform draws over (0, 0.5), seeded.
    Random(u64),
    /// All centers start at zero.
    Zero,
}

/// Decomposition parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MvmdConfig {
    /// Number of modes K.
    pub k_modes: usize,
    /// Bandwidth penalty; larger values give narrower modes.
    pub penalty_alpha: f64,
    /// Relative mode-update magnitude below which iteration stops.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub omega_init: OmegaInit,
    /// Dual-ascent step size on the reconstruction constraint. Zero
    /// leaves the constraint soft (useful for heavy denoising); the
    /// default mild step drives the mode sum toward the input.
    pub dual_step: f64,
}

impl Default for MvmdConfig {
    fn default() -> Self {
        Self {
            k_modes: 8,
            penalty_alpha: 2000.0,
            tolerance: 1e-6,
            max_iterations: 500,
            omega_init: OmegaInit::UniformSpread,
            dual_step: 0.1,
        }
    }
}

impl MvmdConfig {
    fn validate(&self) -> Result<()> {
        if self.k_modes < 1 {
            return Err(Error::InvalidParameter("k_modes must be >= 1".into()));
        }
        if self.penalty_alpha <= 0.0 || self.penalty_alpha.is_nan() {
            return Err(Error::InvalidParameter("penalty_alpha must be positive".into()));
        }
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return Err(Error::InvalidParameter("tolerance must lie in (0, 1)".into()));
        }
        if self.max_iterations < 10 {
            return Err(Error::InvalidParameter("max_iterations must be >= 10".into()));
        }
        if self.dual_step < 0.0 {
            return Err(Error::InvalidParameter("dual_step must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Configuration of the per-mode Hurst scoring pass.
#[derive(Debug, Clone, Default)]
pub struct HurstScoringConfig {
    pub detrend: DetrendConfig,
    /// Scale grid for the per-mode fluctuation analysis; the default grid
    /// for the mode length is used when absent.
    pub scales: Option<ScaleGrid>,
    pub covariance: CovarianceEstimator,
}

/// Result of a decomposition: K narrowband modes with shared center
/// frequencies, the reconstruction residual, and (once scored) per-mode
/// Hurst exponents and the structured/noise cutoff.
#[derive(Debug, Clone)]
pub struct ModeSet {
    modes: Vec<Array2<f64>>,
    omegas: Vec<f64>,
    k1_cutoff: Option<usize>,
    hurst_per_mode: Vec<f64>,
    residual: Array2<f64>,
    sample_rate_hz: f64,
    channel_labels: Vec<String>,
    converged: bool,
    iterations: usize,
}

impl ModeSet {
    /// Wraps externally constructed modes (shapes must agree).
    pub fn from_parts(
        modes: Vec<Array2<f64>>,
        omegas: Vec<f64>,
        residual: Array2<f64>,
        sample_rate_hz: f64,
        channel_labels: Vec<String>,
    ) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::EmptyInput);
        }
        let dim = modes[0].dim();
        if modes.iter().any(|m| m.dim() != dim) || residual.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim.1, got: residual.dim().1 });
        }
        if omegas.len() != modes.len() {
            return Err(Error::DimensionMismatch { expected: modes.len(), got: omegas.len() });
        }
        if channel_labels.len() != dim.1 {
            return Err(Error::DimensionMismatch { expected: dim.1, got: channel_labels.len() });
        }
        Ok(Self {
            modes,
            omegas,
            k1_cutoff: None,
            hurst_per_mode: Vec::new(),
            residual,
            sample_rate_hz,
            channel_labels,
            converged: true,
            iterations: 0,
        })
    }

    pub fn k(&self) -> usize {
        self.modes.len()
    }

    pub fn modes(&self) -> &[Array2<f64>] {
        &self.modes
    }

    /// Center frequencies in cycles/sample, ascending after convergence.
    pub fn omegas(&self) -> &[f64] {
        &self.omegas
    }

    pub fn residual(&self) -> &Array2<f64> {
        &self.residual
    }

    pub fn hurst_per_mode(&self) -> &[f64] {
        &self.hurst_per_mode
    }

    pub fn k1_cutoff(&self) -> Option<usize> {
        self.k1_cutoff
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn channel_labels(&self) -> &[String] {
        &self.channel_labels
    }

    /// Energy of the residual relative to the mode sum plus residual.
    pub fn residual_energy_ratio(&self) -> f64 {
        let res: f64 = self.residual.iter().map(|&v| v * v).sum();
        let mut total = self.residual.clone();
        for mode in &self.modes {
            total += mode;
        }
        let sig: f64 = total.iter().map(|&v| v * v).sum();
        if sig > 0.0 {
            (res / sig).sqrt()
        } else {
            0.0
        }
    }

    /// One mode as a standalone series.
    pub fn mode_series(&self, k: usize) -> Result<MultichannelSeries> {
        let mode = self.modes.get(k).ok_or(Error::IndexOutOfRange {
            index: k + 1,
            k: self.k(),
        })?;
        MultichannelSeries::with_labels(
            mode.clone(),
            self.sample_rate_hz,
            self.channel_labels.clone(),
        )
    }

    pub fn set_hurst_per_mode(&mut self, hurst: Vec<f64>) -> Result<()> {
        if hurst.len() != self.k() {
            return Err(Error::DimensionMismatch { expected: self.k(), got: hurst.len() });
        }
        self.hurst_per_mode = hurst;
        Ok(())
    }

    pub fn set_k1(&mut self, k1: usize) -> Result<()> {
        if k1 < 1 || k1 > self.k() {
            return Err(Error::IndexOutOfRange { index: k1, k: self.k() });
        }
        self.k1_cutoff = Some(k1);
        Ok(())
    }
}

/// Mirror-extends each channel to twice its length.
fn mirror_extend(x: &Array2<f64>) -> Array2<f64> {
    let (n, m) = x.dim();
    let mid = n.div_ceil(2);
    let mut out = Array2::zeros((2 * n, m));
    for c in 0..m {
        for i in 0..mid {
            out[[i, c]] = x[[mid - 1 - i, c]];
        }
        for i in 0..n {
            out[[mid + i, c]] = x[[i, c]];
        }
        for i in 0..(n - mid) {
            out[[mid + n + i, c]] = x[[n - 1 - i, c]];
        }
    }
    out
}

/// Decomposes a series into K narrowband modes with shared center
/// frequencies. Returns a partial result flagged unconverged when the
/// iteration cap is hit.
pub fn mvmd_decompose(series: &MultichannelSeries, cfg: &MvmdConfig) -> Result<ModeSet> {
    cfg.validate()?;
    let n = series.n_samples();
    let m = series.n_channels();
    let k = cfg.k_modes;
    if n < 4 * k {
        return Err(Error::KTooLarge { k, len: n });
    }

    let ext = mirror_extend(series.samples());
    let t = ext.nrows();
    let half = t / 2;
    let freqs: Vec<f64> = (0..half).map(|i| i as f64 / t as f64).collect();

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(t);

    // One-sided signal spectra, channel by channel.
    let mut signal_hat: Vec<Vec<Complex64>> = Vec::with_capacity(m);
    for c in 0..m {
        let mut buf: Vec<Complex64> =
            (0..t).map(|i| Complex64::new(ext[[i, c]], 0.0)).collect();
        fft.process(&mut buf);
        buf.truncate(half);
        signal_hat.push(buf);
    }

    let mut omegas: Vec<f64> = match cfg.omega_init {
        OmegaInit::UniformSpread => {
            (0..k).map(|i| 0.5 * (i as f64 + 0.5) / k as f64).collect()
        }
        OmegaInit::Random(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut w: Vec<f64> = (0..k).map(|_| 0.5 * rng.random::<f64>()).collect();
            w.sort_by(|a, b| a.partial_cmp(b).unwrap());
            w
        }
        OmegaInit::Zero => vec![0.0; k],
    };

    // u_hat[k][c][f], lambda_hat[c][f], and the running mode sum.
    let mut u_hat = vec![vec![vec![Complex64::ZERO; half]; m]; k];
    let mut lambda = vec![vec![Complex64::ZERO; half]; m];
    let mut sum_modes = vec![vec![Complex64::ZERO; half]; m];

    let mut converged = false;
    let mut iterations = 0;
    for _iter in 0..cfg.max_iterations {
        let mut update_sq = 0.0;
        let mut prev_sq = 0.0;

        for mode in 0..k {
            let omega = omegas[mode];
            let mut weighted = 0.0;
            let mut power = 0.0;
            for c in 0..m {
                for f in 0..half {
                    let others = sum_modes[c][f] - u_hat[mode][c][f];
                    let numer = signal_hat[c][f] - others - lambda[c][f] * 0.5;
                    let df = freqs[f] - omega;
                    let denom = 1.0 + 2.0 * cfg.penalty_alpha * df * df;
                    let next = numer / denom;
                    let delta = next - u_hat[mode][c][f];
                    update_sq += delta.norm_sqr();
                    prev_sq += u_hat[mode][c][f].norm_sqr();
                    sum_modes[c][f] += delta;
                    u_hat[mode][c][f] = next;

                    let p = next.norm_sqr();
                    weighted += freqs[f] * p;
                    power += p;
                }
            }
            if power > 1e-300 {
                omegas[mode] = weighted / power;
            }
        }

        if cfg.dual_step > 0.0 {
            for c in 0..m {
                for f in 0..half {
                    lambda[c][f] += (sum_modes[c][f] - signal_hat[c][f]) * cfg.dual_step;
                }
            }
        }

        iterations += 1;
        if prev_sq > 0.0 && update_sq / prev_sq < cfg.tolerance {
            converged = true;
            break;
        }
    }

    // Back to the time domain: Hermitian completion, inverse transform,
    // and removal of the mirrored extension.
    let ifft = planner.plan_fft_inverse(t);
    let mid = n.div_ceil(2);
    let mut modes: Vec<Array2<f64>> = Vec::with_capacity(k);
    for mode_hat in &u_hat {
        let mut mode = Array2::zeros((n, m));
        for (c, half_spec) in mode_hat.iter().enumerate() {
            let mut full = vec![Complex64::ZERO; t];
            full[..half].copy_from_slice(half_spec);
            for f in 1..half {
                full[t - f] = half_spec[f].conj();
            }
            ifft.process(&mut full);
            for i in 0..n {
                mode[[i, c]] = full[mid + i].re / t as f64;
            }
        }
        modes.push(mode);
    }

    // Sort by center frequency, ascending.
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| omegas[a].partial_cmp(&omegas[b]).unwrap());
    let modes: Vec<Array2<f64>> = order.iter().map(|&i| modes[i].clone()).collect();
    let omegas: Vec<f64> = order.iter().map(|&i| omegas[i]).collect();

    let mut residual = series.samples().clone();
    for mode in &modes {
        residual -= mode;
    }

    Ok(ModeSet {
        modes,
        omegas,
        k1_cutoff: None,
        hurst_per_mode: Vec::new(),
        residual,
        sample_rate_hz: series.sample_rate_hz(),
        channel_labels: series.channel_labels().to_vec(),
        converged,
        iterations,
    })
}

/// Fills `hurst_per_mode` with each mode's `H_2` from the fully
/// multivariate fluctuation function at `q = 2`.
pub fn score_modes_hurst(modes: &mut ModeSet, cfg: &HurstScoringConfig) -> Result<()> {
    let q_grid = QGrid::new(vec![2.0])?;
    let mut scores = Vec::with_capacity(modes.k());
    for k in 0..modes.k() {
        let series = modes.mode_series(k)?;
        let grid = match &cfg.scales {
            Some(g) => g.clone(),
            None => ScaleGrid::default_for_len(series.n_samples())?,
        };
        let profile = cumulative_profile(&series);
        let segments = SegmentedFluctuations::compute(&profile, &grid, &cfg.detrend)?;
        let surface = fluctuation_fm_auto(&segments, &cfg.covariance, &q_grid)?;
        let fit = fit_hurst(&surface, None)?;
        scores.push(fit.h_q[0]);
    }
    modes.set_hurst_per_mode(scores)
}

/// Index of the largest successive Hurst gap: the number of modes kept as
/// structured. Ties break toward the smaller cutoff.
pub fn select_k1(modes: &ModeSet) -> Result<usize> {
    let h = modes.hurst_per_mode();
    if modes.k() < 2 || h.len() != modes.k() {
        return Err(Error::SingleMode);
    }
    let mut best_k = 1;
    let mut best_gap = f64::NEG_INFINITY;
    for k in 0..h.len() - 1 {
        let gap = (h[k] - h[k + 1]).abs();
        if gap > best_gap {
            best_gap = gap;
            best_k = k + 1;
        }
    }
    Ok(best_k)
}

/// Sum of the first `k1` modes as a series.
pub fn reconstruct_signal(modes: &ModeSet, k1: usize) -> Result<MultichannelSeries> {
    if k1 < 1 || k1 > modes.k() {
        return Err(Error::IndexOutOfRange { index: k1, k: modes.k() });
    }
    let mut sum = modes.modes()[0].clone();
    for mode in &modes.modes()[1..k1] {
        sum += mode;
    }
    MultichannelSeries::with_labels(
        sum,
        modes.sample_rate_hz(),
        modes.channel_labels().to_vec(),
    )
}

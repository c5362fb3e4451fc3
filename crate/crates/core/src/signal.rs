//! Core series types, grids, and synthetic-signal generators.
//!
//! Time is row-major throughout the crate: a series of `N` samples over
//! `M` channels is an `N x M` matrix whose row `i` is the vector
//! observation at time index `i`. Generators live here (not in test
//! code) so the CLI can emit reproducible benchmark datasets.

use ndarray::{Array2, ArrayView1};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Minimum sample count accepted by the synthetic generators.
pub const MIN_GENERATOR_LEN: usize = 64;

/// A validated multichannel time series (rows = time, columns = channels).
#[derive(Debug, Clone, PartialEq)]
pub struct MultichannelSeries {
    samples: Array2<f64>,
    sample_rate_hz: f64,
    channel_labels: Vec<String>,
}

impl MultichannelSeries {
    /// Validates and wraps raw samples. Labels default to `ch1..chM`.
    ///
    /// Fails on empty input, fewer than two samples, non-finite values,
    /// or a non-positive rate; the data is never repaired.
    pub fn new(samples: Array2<f64>, sample_rate_hz: f64) -> Result<Self> {
        let labels = (1..=samples.ncols()).map(|c| format!("ch{c}")).collect();
        Self::with_labels(samples, sample_rate_hz, labels)
    }

    /// As [`MultichannelSeries::new`] with explicit channel labels.
    pub fn with_labels(
        samples: Array2<f64>,
        sample_rate_hz: f64,
        channel_labels: Vec<String>,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput);
        }
        if samples.nrows() < 2 || samples.ncols() < 1 {
            return Err(Error::InvalidParameter(format!(
                "series must be at least 2 x 1, got {} x {}",
                samples.nrows(),
                samples.ncols()
            )));
        }
        if !sample_rate_hz.is_finite() || sample_rate_hz <= 0.0 {
            return Err(Error::RateNonPositive(sample_rate_hz));
        }
        if channel_labels.len() != samples.ncols() {
            return Err(Error::InvalidParameter(format!(
                "expected {} channel labels, got {}",
                samples.ncols(),
                channel_labels.len()
            )));
        }
        for ((i, c), &v) in samples.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite { index: i, channel: c });
            }
        }
        Ok(Self { samples, sample_rate_hz, channel_labels })
    }

    pub fn samples(&self) -> &Array2<f64> {
        &self.samples
    }

    pub fn n_samples(&self) -> usize {
        self.samples.nrows()
    }

    pub fn n_channels(&self) -> usize {
        self.samples.ncols()
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn channel_labels(&self) -> &[String] {
        &self.channel_labels
    }

    pub fn channel(&self, c: usize) -> ArrayView1<'_, f64> {
        self.samples.column(c)
    }

    /// A new series containing the selected channels, in the given order.
    pub fn select_channels(&self, indices: &[usize]) -> Result<Self> {
        let mut out = Array2::zeros((self.n_samples(), indices.len()));
        let mut labels = Vec::with_capacity(indices.len());
        for (j, &c) in indices.iter().enumerate() {
            if c >= self.n_channels() {
                return Err(Error::InvalidParameter(format!(
                    "channel index {c} out of range 0..{}",
                    self.n_channels()
                )));
            }
            out.column_mut(j).assign(&self.samples.column(c));
            labels.push(self.channel_labels[c].clone());
        }
        Self::with_labels(out, self.sample_rate_hz, labels)
    }
}

/// Validates a raw matrix as a series, wrapping it without modification.
pub fn validate_series(raw: Array2<f64>, rate: f64) -> Result<MultichannelSeries> {
    MultichannelSeries::new(raw, rate)
}

/// Cumulative profile of a series: per-channel running sum of the
/// mean-subtracted samples. `values[0]` equals the first mean-subtracted
/// sample; the last row telescopes to zero.
#[derive(Debug, Clone)]
pub struct Profile {
    pub values: Array2<f64>,
    pub source_mean: Vec<f64>,
}

impl Profile {
    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_channels(&self) -> usize {
        self.values.ncols()
    }
}

/// Strictly increasing window sizes for fluctuation analysis. Every scale
/// must leave at least four non-overlapping segments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScaleGrid {
    scales: Vec<usize>,
}

impl ScaleGrid {
    /// Validates an explicit scale list against a series length `n`.
    pub fn new(scales: Vec<usize>, n: usize) -> Result<Self> {
        if scales.is_empty() {
            return Err(Error::InvalidGrid("scale grid is empty".into()));
        }
        if !scales.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidGrid("scales must be strictly increasing".into()));
        }
        let min = scales[0];
        let max = *scales.last().unwrap();
        if min < 2 {
            return Err(Error::InvalidGrid(format!("minimum scale {min} < 2")));
        }
        if n / max < 4 {
            return Err(Error::ScaleTooLarge { scale: max, len: n });
        }
        Ok(Self { scales })
    }

    /// `count` log-spaced integer scales in `[min, max]`, deduplicated.
    pub fn log_spaced(min: usize, max: usize, count: usize, n: usize) -> Result<Self> {
        if min >= max || count < 2 {
            return Err(Error::InvalidGrid(format!(
                "log-spaced grid needs min < max and count >= 2, got [{min}, {max}] x {count}"
            )));
        }
        let (lo, hi) = ((min as f64).ln(), (max as f64).ln());
        let mut scales: Vec<usize> = (0..count)
            .map(|i| {
                let t = i as f64 / (count - 1) as f64;
                (lo + t * (hi - lo)).exp().round() as usize
            })
            .collect();
        scales.dedup();
        Self::new(scales, n)
    }

    /// Default grid: 20 log-spaced scales in `[16, n/4]`.
    pub fn default_for_len(n: usize) -> Result<Self> {
        Self::log_spaced(16, n / 4, 20, n)
    }

    pub fn scales(&self) -> &[usize] {
        &self.scales
    }

    pub fn len(&self) -> usize {
        self.scales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scales.is_empty()
    }
}

/// Strictly increasing moment orders. The grid must contain `q = 2`;
/// a value of exactly zero is evaluated through the logarithmic-mean
/// branch of the fluctuation functions, never the generic power sum.
#[derive(Debug, Clone, PartialEq)]
pub struct QGrid {
    q_values: Vec<f64>,
}

impl QGrid {
    pub fn new(q_values: Vec<f64>) -> Result<Self> {
        if q_values.is_empty() {
            return Err(Error::InvalidGrid("q grid is empty".into()));
        }
        if q_values.iter().any(|q| !q.is_finite()) {
            return Err(Error::InvalidGrid("q grid contains non-finite values".into()));
        }
        if !q_values.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidGrid("q values must be strictly increasing".into()));
        }
        if !q_values.iter().any(|&q| (q - 2.0).abs() < 1e-9) {
            return Err(Error::InvalidGrid("q grid must contain q = 2".into()));
        }
        Ok(Self { q_values })
    }

    /// Inclusive arithmetic grid `min, min+step, ..., max`. Values within
    /// 1e-9 of an integer are snapped so that q = 0 and q = 2 are exact.
    pub fn from_range(min: f64, max: f64, step: f64) -> Result<Self> {
        if step <= 0.0 || !step.is_finite() || min >= max {
            return Err(Error::InvalidGrid(format!(
                "invalid q range {min}:{max}:{step}"
            )));
        }
        let count = ((max - min) / step + 1.5).floor() as usize;
        let values = (0..count)
            .map(|i| {
                let q = min + i as f64 * step;
                if (q - q.round()).abs() < 1e-9 {
                    q.round()
                } else {
                    q
                }
            })
            .filter(|&q| q <= max + 1e-9)
            .collect();
        Self::new(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.q_values
    }

    pub fn len(&self) -> usize {
        self.q_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q_values.is_empty()
    }

    /// Index of the entry equal to `q` within 1e-9, if present.
    pub fn position(&self, q: f64) -> Option<usize> {
        self.q_values.iter().position(|&v| (v - q).abs() < 1e-9)
    }
}

impl Default for QGrid {
    fn default() -> Self {
        Self::from_range(-5.0, 5.0, 0.5).expect("default q grid is valid")
    }
}

fn check_generator_size(n: usize, m: usize) -> Result<()> {
    if n < MIN_GENERATOR_LEN {
        return Err(Error::InvalidParameter(format!(
            "generator length {n} < {MIN_GENERATOR_LEN}"
        )));
    }
    if m == 0 {
        return Err(Error::InvalidParameter("channel count must be >= 1".into()));
    }
    Ok(())
}

/// I.i.d. standard Gaussian samples, reproducible per seed.
pub fn gen_white_noise(n: usize, m: usize, seed: u64) -> Result<MultichannelSeries> {
    check_generator_size(n, m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..n * m).map(|_| StandardNormal.sample(&mut rng)).collect();
    let samples = Array2::from_shape_vec((n, m), data).expect("shape matches data length");
    MultichannelSeries::new(samples, 1.0)
}

/// Autocovariance of unit-variance fractional Gaussian noise at lag `k`.
pub fn fgn_autocovariance(hurst: f64, k: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let k = k as f64;
    let h2 = 2.0 * hurst;
    0.5 * ((k + 1.0).powf(h2) - 2.0 * k.powf(h2) + (k - 1.0).powf(h2))
}

/// One exact fGn path of length `n` via circulant embedding.
fn fgn_path(n: usize, hurst: f64, rng: &mut ChaCha8Rng, planner: &mut FftPlanner<f64>) -> Result<Vec<f64>> {
    let m = 2 * n;
    // First row of the circulant embedding of the covariance.
    let mut row = Vec::with_capacity(m);
    for k in 0..=n {
        row.push(fgn_autocovariance(hurst, k));
    }
    for k in (1..n).rev() {
        row.push(fgn_autocovariance(hurst, k));
    }
    debug_assert_eq!(row.len(), m);

    let fft = planner.plan_fft_forward(m);
    let mut buf: Vec<Complex64> = row.iter().map(|&r| Complex64::new(r, 0.0)).collect();
    fft.process(&mut buf);

    let mut eigen: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let max_eigen = eigen.iter().cloned().fold(0.0f64, f64::max);
    let min_eigen = eigen.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_eigen < -1e-9 * max_eigen {
        return Err(Error::EmbeddingFailure { min_eigenvalue: min_eigen });
    }
    for e in &mut eigen {
        if *e < 0.0 {
            *e = 0.0;
        }
    }

    let mut spectral: Vec<Complex64> = eigen
        .iter()
        .map(|&lambda| {
            let a: f64 = StandardNormal.sample(rng);
            let b: f64 = StandardNormal.sample(rng);
            Complex64::new(a, b) * lambda.sqrt()
        })
        .collect();
    fft.process(&mut spectral);

    let scale = 1.0 / (m as f64).sqrt();
    Ok(spectral[..n].iter().map(|c| c.re * scale).collect())
}

/// Fractional Gaussian noise: each channel has the exact target-Hurst
/// autocovariance; channels are mixed through a shared component so that
/// every pair correlates at `cross_corr`.
pub fn gen_fgn(
    n: usize,
    m: usize,
    hurst: f64,
    cross_corr: f64,
    seed: u64,
) -> Result<MultichannelSeries> {
    check_generator_size(n, m)?;
    if !(0.0..1.0).contains(&hurst) || hurst <= 0.0 {
        return Err(Error::InvalidParameter(format!("hurst {hurst} outside (0, 1)")));
    }
    if !(0.0..1.0).contains(&cross_corr) {
        return Err(Error::InvalidParameter(format!(
            "cross_corr {cross_corr} outside [0, 1)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut planner = FftPlanner::new();

    let common = if cross_corr > 0.0 {
        Some(fgn_path(n, hurst, &mut rng, &mut planner)?)
    } else {
        None
    };
    let (w_common, w_own) = (cross_corr.sqrt(), (1.0 - cross_corr).sqrt());

    let mut samples = Array2::zeros((n, m));
    for c in 0..m {
        let own = fgn_path(n, hurst, &mut rng, &mut planner)?;
        for i in 0..n {
            let shared = common.as_ref().map_or(0.0, |g| g[i]);
            samples[[i, c]] = w_common * shared + w_own * own[i];
        }
    }
    MultichannelSeries::new(samples, 1.0)
}

/// How cascade weights are assigned to the two children of each node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CascadeLayout {
    /// The classical fixed assignment: sample `k` carries the weight
    /// product determined by the binary expansion of `k`.
    Deterministic,
    /// Random per-node assignment order, giving seed-varied instances
    /// with the same multifractal law.
    RandomPermutation,
}

/// Parameters for the binomial multiplicative cascade generator.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeParams {
    /// Dyadic depth; the series has `2^levels` samples.
    pub levels: u32,
    /// Weight pair `(w1, w2)` with `w1 + w2 = 1`, both positive.
    pub weights: (f64, f64),
    /// Probability that a channel reuses the shared split decision
    /// (random layout only).
    pub cross_corr: f64,
    /// When true, each cascade sample is multiplied by an independent
    /// standard Gaussian, preserving the scaling exponents while removing
    /// the degeneracy of the symmetric-weight cascade.
    pub modulated: bool,
    pub layout: CascadeLayout,
}

/// Multichannel binomial cascade. Under the random layout every dyadic
/// node assigns the weight pair to its two children in random order and
/// channels share a node's decision with probability `cross_corr`; the
/// deterministic layout reproduces the textbook arrangement on every
/// channel.
pub fn gen_cascade(params: &CascadeParams, m: usize, seed: u64) -> Result<MultichannelSeries> {
    let (w1, w2) = params.weights;
    if !(w1 > 0.0 && w2 > 0.0) || (w1 + w2 - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "cascade weights ({w1}, {w2}) must be positive and sum to 1"
        )));
    }
    if !(0.0..1.0).contains(&params.cross_corr) {
        return Err(Error::InvalidParameter(format!(
            "cross_corr {} outside [0, 1)",
            params.cross_corr
        )));
    }
    let n = 1usize
        .checked_shl(params.levels)
        .filter(|&n| n >= MIN_GENERATOR_LEN)
        .ok_or_else(|| {
            Error::InvalidParameter(format!("cascade levels {} out of range", params.levels))
        })?;
    if m == 0 {
        return Err(Error::InvalidParameter("channel count must be >= 1".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut channels: Vec<Vec<f64>> = vec![vec![1.0]; m];
    for _level in 0..params.levels {
        let nodes = channels[0].len();
        for node in 0..nodes {
            let shared_swap: bool = rng.random();
            for ch in channels.iter_mut() {
                let swap = match params.layout {
                    CascadeLayout::Deterministic => false,
                    CascadeLayout::RandomPermutation => {
                        let use_shared = rng.random::<f64>() < params.cross_corr;
                        let own_swap: bool = rng.random();
                        if use_shared {
                            shared_swap
                        } else {
                            own_swap
                        }
                    }
                };
                let v = ch[node];
                let (a, b) = if swap { (w2, w1) } else { (w1, w2) };
                ch.push(v * a);
                ch.push(v * b);
            }
        }
        for ch in channels.iter_mut() {
            *ch = ch.split_off(nodes);
        }
    }

    let mut samples = Array2::zeros((n, m));
    for (c, ch) in channels.iter().enumerate() {
        for (i, &v) in ch.iter().enumerate() {
            let factor: f64 = if params.modulated {
                StandardNormal.sample(&mut rng)
            } else {
                1.0
            };
            samples[[i, c]] = v * factor;
        }
    }
    MultichannelSeries::new(samples, 1.0)
}

/// Analytic mass exponent of the binomial cascade with weights `(w1, w2)`.
pub fn cascade_mass_exponent(weights: (f64, f64), q: f64) -> f64 {
    if q.abs() < 1e-12 {
        return -1.0;
    }
    -(weights.0.powf(q) + weights.1.powf(q)).log2()
}

/// Parameters for the multichannel tone-mixture generator.
#[derive(Debug, Clone, PartialEq)]
pub struct ToneMixParams {
    pub n: usize,
    pub sample_rate_hz: f64,
    /// Tone frequencies in Hz; each must sit below Nyquist.
    pub freqs_hz: Vec<f64>,
    /// Standard deviation of additive white Gaussian noise.
    pub noise_std: f64,
}

/// Sum of pure tones with per-channel random amplitudes and phases, plus
/// optional additive white noise.
pub fn gen_tone_mix(params: &ToneMixParams, m: usize, seed: u64) -> Result<MultichannelSeries> {
    check_generator_size(params.n, m)?;
    if params.sample_rate_hz <= 0.0 {
        return Err(Error::RateNonPositive(params.sample_rate_hz));
    }
    if params.freqs_hz.is_empty() {
        return Err(Error::InvalidParameter("tone mix needs at least one frequency".into()));
    }
    let nyquist = params.sample_rate_hz / 2.0;
    if params.freqs_hz.iter().any(|&f| f <= 0.0 || f >= nyquist) {
        return Err(Error::InvalidParameter(format!(
            "tone frequencies must lie in (0, {nyquist}) Hz"
        )));
    }
    if params.noise_std < 0.0 {
        return Err(Error::InvalidParameter("noise_std must be nonnegative".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = params.n;
    let mut samples = Array2::zeros((n, m));
    for c in 0..m {
        for &f in &params.freqs_hz {
            let amp = 0.7 + 0.6 * rng.random::<f64>();
            let phase = rng.random::<f64>() * std::f64::consts::TAU;
            let w = std::f64::consts::TAU * f / params.sample_rate_hz;
            for i in 0..n {
                samples[[i, c]] += amp * (w * i as f64 + phase).cos();
            }
        }
        if params.noise_std > 0.0 {
            for i in 0..n {
                let g: f64 = StandardNormal.sample(&mut rng);
                samples[[i, c]] += params.noise_std * g;
            }
        }
    }
    MultichannelSeries::new(samples, params.sample_rate_hz)
}

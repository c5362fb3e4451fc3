//! Profile construction, mirrored segmentation, polynomial detrending,
//! covariance estimation, and the fluctuation-function variants.
//!
//! The pipeline shape is fixed: cumulative profile, non-overlapping
//! windows of each scale taken from both ends of the series, per-channel
//! least-squares detrending, then a q-order power mean of the per-segment
//! fluctuation summaries. The three variants differ only in the inner
//! summary: per-channel energy (univariate), Euclidean energy across
//! channels, or the Mahalanobis quadratic form under a covariance model.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use ndarray::{Array2, Array3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::norms::{power_mean_root, spd_factorize, SpdMatrix};
use crate::signal::{MultichannelSeries, Profile, QGrid, ScaleGrid};

/// Shrinkage applied when factorizing covariances estimated from data.
pub const ESTIMATION_SHRINKAGE: f64 = 1e-6;

/// Escalation ladder tried when the shrunk estimate is still indefinite.
const SHRINKAGE_LADDER: [f64; 3] = [ESTIMATION_SHRINKAGE, 1e-4, 1e-2];

/// Polynomial detrending configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DetrendConfig {
    /// Polynomial degree of the per-segment least-squares fit.
    pub order: usize,
    /// Segment from both ends of the series (doubling the segment count).
    pub mirrored: bool,
}

impl Default for DetrendConfig {
    fn default() -> Self {
        Self { order: 2, mirrored: true }
    }
}

/// Cumulative profile: per-channel running sum of mean-subtracted samples.
pub fn cumulative_profile(series: &MultichannelSeries) -> Profile {
    let x = series.samples();
    let (n, m) = (x.nrows(), x.ncols());
    let mut mean = vec![0.0f64; m];
    for c in 0..m {
        mean[c] = x.column(c).sum() / n as f64;
    }
    let mut values = Array2::zeros((n, m));
    for c in 0..m {
        let mut acc = 0.0;
        for i in 0..n {
            acc += x[[i, c]] - mean[c];
            values[[i, c]] = acc;
        }
    }
    Profile { values, source_mean: mean }
}

/// Detrended residuals of every segment of one scale.
///
/// Forward windows start at the first sample; when mirroring is enabled an
/// equal number of backward windows end at the last sample, concatenated
/// after the forward block. The result has shape
/// `(segments, scale, channels)`.
pub fn segment_and_detrend(
    profile: &Profile,
    scale: usize,
    cfg: &DetrendConfig,
) -> Result<Array3<f64>> {
    let n = profile.n_samples();
    let m = profile.n_channels();
    // Grids enforce at least four windows per scale; the raw operation
    // only needs one to fit.
    if scale < 2 || scale > n {
        return Err(Error::ScaleTooLarge { scale, len: n });
    }
    if scale <= cfg.order + 1 {
        return Err(Error::RankDeficientFit { scale, order: cfg.order });
    }
    let l = n / scale;
    let n_seg = if cfg.mirrored { 2 * l } else { l };

    let basis = detrend_basis(scale, cfg.order);
    let mut out = Array3::zeros((n_seg, scale, m));
    let mut starts = Vec::with_capacity(n_seg);
    for v in 0..l {
        starts.push(v * scale);
    }
    if cfg.mirrored {
        for v in 0..l {
            starts.push(n - (v + 1) * scale);
        }
    }

    let mut y = vec![0.0f64; scale];
    for (seg, &start) in starts.iter().enumerate() {
        for c in 0..m {
            for i in 0..scale {
                y[i] = profile.values[[start + i, c]];
            }
            detrend_in_place(&basis, &mut y);
            for i in 0..scale {
                out[[seg, i, c]] = y[i];
            }
        }
    }
    Ok(out)
}

/// Orthonormal polynomial basis (thin Q of the Vandermonde QR) for a
/// window of `scale` samples and the given fit order.
fn detrend_basis(scale: usize, order: usize) -> DMatrix<f64> {
    let cols = order + 1;
    let mut v = DMatrix::zeros(scale, cols);
    for i in 0..scale {
        // Normalized abscissa keeps the Vandermonde well conditioned.
        let t = if scale == 1 { 0.0 } else { 2.0 * i as f64 / (scale - 1) as f64 - 1.0 };
        let mut pow = 1.0;
        for k in 0..cols {
            v[(i, k)] = pow;
            pow *= t;
        }
    }
    v.qr().q()
}

/// Subtracts the least-squares projection onto the basis columns.
fn detrend_in_place(basis: &DMatrix<f64>, y: &mut [f64]) {
    let (s, cols) = (basis.nrows(), basis.ncols());
    debug_assert_eq!(y.len(), s);
    for k in 0..cols {
        let mut coef = 0.0;
        for i in 0..s {
            coef += basis[(i, k)] * y[i];
        }
        for i in 0..s {
            y[i] -= coef * basis[(i, k)];
        }
    }
}

/// Detrended residuals for every scale of a grid.
#[derive(Debug, Clone)]
pub struct SegmentedFluctuations {
    /// Scale -> `(segments, scale, channels)` residual array.
    pub per_scale: BTreeMap<usize, Array3<f64>>,
    n_channels: usize,
}

impl SegmentedFluctuations {
    pub fn compute(profile: &Profile, grid: &ScaleGrid, cfg: &DetrendConfig) -> Result<Self> {
        let m = profile.n_channels();
        let blocks: Result<Vec<(usize, Array3<f64>)>> = grid
            .scales()
            .par_iter()
            .map(|&s| segment_and_detrend(profile, s, cfg).map(|res| (s, res)))
            .collect();
        let per_scale: BTreeMap<usize, Array3<f64>> = blocks?.into_iter().collect();
        Ok(Self { per_scale, n_channels: m })
    }

    /// Wraps externally produced residual arrays (all sharing one channel
    /// count).
    pub fn from_residuals(per_scale: BTreeMap<usize, Array3<f64>>) -> Result<Self> {
        let mut channels = None;
        for (&s, res) in &per_scale {
            let (_, len, m) = res.dim();
            if len != s {
                return Err(Error::InvalidParameter(format!(
                    "residual block for scale {s} has window length {len}"
                )));
            }
            match channels {
                None => channels = Some(m),
                Some(prev) if prev != m => {
                    return Err(Error::DimensionMismatch { expected: prev, got: m })
                }
                _ => {}
            }
        }
        let n_channels = channels.ok_or(Error::EmptyInput)?;
        Ok(Self { per_scale, n_channels })
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn scales(&self) -> Vec<usize> {
        self.per_scale.keys().copied().collect()
    }

    pub fn segment_count(&self, scale: usize) -> Option<usize> {
        self.per_scale.get(&scale).map(|r| r.dim().0)
    }

    /// Applies a whitening matrix to every residual vector; used to check
    /// the equivalence between the Mahalanobis variant and the Euclidean
    /// variant on whitened data.
    pub fn whitened(&self, cov: &SpdMatrix) -> Result<Self> {
        if cov.dim() != self.n_channels {
            return Err(Error::DimensionMismatch { expected: self.n_channels, got: cov.dim() });
        }
        let mut per_scale = BTreeMap::new();
        for (&s, res) in &self.per_scale {
            let (n_seg, len, m) = res.dim();
            let mut out = Array3::zeros((n_seg, len, m));
            for seg in 0..n_seg {
                for i in 0..len {
                    let w = cov.whiten(res.index_axis(ndarray::Axis(0), seg).row(i));
                    for (c, &v) in w.iter().enumerate() {
                        out[[seg, i, c]] = v;
                    }
                }
            }
            per_scale.insert(s, out);
        }
        Ok(Self { per_scale, n_channels: self.n_channels })
    }
}

/// Which inner summary produced a fluctuation surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SurfaceVariant {
    Univariate,
    EuclideanMmfdfa,
    MahalanobisFm,
}

/// `F_q(s)` on a moment-by-scale grid. Entries are finite and positive;
/// the `q = 0` row comes from the logarithmic-mean branch.
#[derive(Debug, Clone)]
pub struct FluctuationSurface {
    pub variant: SurfaceVariant,
    /// `|Q| x |S|` values, rows indexed by the q grid.
    pub values: Array2<f64>,
    pub q_grid: QGrid,
    pub scales: Vec<usize>,
    pub covariance_used: Option<SpdMatrix>,
}

impl FluctuationSurface {
    /// The `F_q(s)` row for one moment order, if present in the grid.
    pub fn row(&self, q: f64) -> Option<Vec<f64>> {
        let qi = self.q_grid.position(q)?;
        Some(self.values.row(qi).to_vec())
    }
}

/// Structure of the covariance used by the Mahalanobis variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum CovarianceMode {
    Identity,
    DiagonalVariances,
    FullSample,
}

/// Which residual pool the covariance is estimated from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum CovarianceScope {
    /// One covariance from the residuals at the smallest scale.
    GlobalDetrended,
    /// A fresh covariance from each scale's own residuals.
    PerScale,
}

/// Covariance estimation policy for the Mahalanobis variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CovarianceEstimator {
    pub mode: CovarianceMode,
    pub scope: CovarianceScope,
}

impl Default for CovarianceEstimator {
    fn default() -> Self {
        Self { mode: CovarianceMode::FullSample, scope: CovarianceScope::GlobalDetrended }
    }
}

/// Estimates the covariance for the whole analysis from the residual pool
/// at the smallest scale (the scale with the most segments).
pub fn estimate_covariance(
    segments: &SegmentedFluctuations,
    est: &CovarianceEstimator,
) -> Result<SpdMatrix> {
    let smallest = *segments
        .per_scale
        .keys()
        .next()
        .ok_or(Error::EmptyInput)?;
    estimate_covariance_at_scale(segments, smallest, est.mode)
}

/// Estimates the covariance from one scale's pooled residuals.
pub fn estimate_covariance_at_scale(
    segments: &SegmentedFluctuations,
    scale: usize,
    mode: CovarianceMode,
) -> Result<SpdMatrix> {
    let m = segments.n_channels();
    if mode == CovarianceMode::Identity {
        return Ok(SpdMatrix::identity(m));
    }
    let res = segments
        .per_scale
        .get(&scale)
        .ok_or(Error::ScaleTooLarge { scale, len: 0 })?;
    let (n_seg, len, _) = res.dim();
    let count = n_seg * len;
    if count < 4 * m {
        return Err(Error::InsufficientSamples { required: 4 * m, got: count });
    }

    let mut mean = vec![0.0f64; m];
    for seg in 0..n_seg {
        for i in 0..len {
            for c in 0..m {
                mean[c] += res[[seg, i, c]];
            }
        }
    }
    for v in &mut mean {
        *v /= count as f64;
    }

    match mode {
        CovarianceMode::Identity => unreachable!(),
        CovarianceMode::DiagonalVariances => {
            let mut var = vec![0.0f64; m];
            for seg in 0..n_seg {
                for i in 0..len {
                    for c in 0..m {
                        let d = res[[seg, i, c]] - mean[c];
                        var[c] += d * d;
                    }
                }
            }
            for v in &mut var {
                *v /= (count - 1) as f64;
            }
            SpdMatrix::from_diagonal(&var)
        }
        CovarianceMode::FullSample => {
            let mut cov = DMatrix::zeros(m, m);
            for seg in 0..n_seg {
                for i in 0..len {
                    for a in 0..m {
                        let da = res[[seg, i, a]] - mean[a];
                        for b in a..m {
                            cov[(a, b)] += da * (res[[seg, i, b]] - mean[b]);
                        }
                    }
                }
            }
            for a in 0..m {
                for b in a..m {
                    let v = cov[(a, b)] / (count - 1) as f64;
                    cov[(a, b)] = v;
                    cov[(b, a)] = v;
                }
            }
            let mut last = None;
            for &shrinkage in &SHRINKAGE_LADDER {
                match spd_factorize(&cov, shrinkage) {
                    Ok(spd) => return Ok(spd),
                    Err(e @ Error::NotPositiveDefinite { .. }) => last = Some(e),
                    Err(other) => return Err(other),
                }
            }
            Err(last.expect("ladder attempted"))
        }
    }
}

/// Per-segment fluctuation summaries: the root of the time-averaged
/// squared inner norm of each segment's residual rows.
fn segment_magnitudes(res: &Array3<f64>, cov: Option<&SpdMatrix>) -> Vec<f64> {
    let (n_seg, len, m) = res.dim();
    let mut out = Vec::with_capacity(n_seg);
    for seg in 0..n_seg {
        let slab = res.index_axis(ndarray::Axis(0), seg);
        let mut acc = 0.0;
        match cov {
            Some(spd) => {
                for i in 0..len {
                    acc += spd.mahalanobis_sq(slab.row(i));
                }
            }
            None => {
                // Per-sample subtotal mirrors the whitened path's
                // accumulation so the identity-covariance case is
                // bit-identical.
                for i in 0..len {
                    let mut sample = 0.0;
                    for c in 0..m {
                        let v = slab[[i, c]];
                        sample += v * v;
                    }
                    acc += sample;
                }
            }
        }
        out.push((acc / len as f64).sqrt());
    }
    out
}

/// q-order power mean of segment magnitudes; `q = 0` uses the
/// logarithmic mean.
fn moment_value(magnitudes: &[f64], q: f64) -> Result<f64> {
    let value = if q.abs() < 1e-12 {
        if magnitudes.contains(&0.0) {
            return Err(Error::DegenerateSegment { q: 0.0 });
        }
        let mean_log: f64 =
            magnitudes.iter().map(|&d| d.ln()).sum::<f64>() / magnitudes.len() as f64;
        mean_log.exp()
    } else {
        power_mean_root(magnitudes, q, magnitudes.len() as f64)?
    };
    if !(value.is_finite() && value > 0.0) {
        return Err(Error::DegenerateSegment { q });
    }
    Ok(value)
}

fn build_surface(
    segments: &SegmentedFluctuations,
    q_grid: &QGrid,
    variant: SurfaceVariant,
    cov_for_scale: impl Fn(usize) -> Result<Option<SpdMatrix>> + Sync,
    covariance_used: Option<SpdMatrix>,
) -> Result<FluctuationSurface> {
    let scales = segments.scales();
    let columns: Result<Vec<Vec<f64>>> = scales
        .par_iter()
        .map(|&s| {
            let cov = cov_for_scale(s)?;
            let res = &segments.per_scale[&s];
            let mags = segment_magnitudes(res, cov.as_ref());
            q_grid.values().iter().map(|&q| moment_value(&mags, q)).collect()
        })
        .collect();
    let columns = columns?;
    let mut values = Array2::zeros((q_grid.len(), scales.len()));
    for (si, col) in columns.iter().enumerate() {
        for (qi, &v) in col.iter().enumerate() {
            values[[qi, si]] = v;
        }
    }
    Ok(FluctuationSurface { variant, values, q_grid: q_grid.clone(), scales, covariance_used })
}

/// Classical single-channel fluctuation function.
pub fn fluctuation_univariate(
    segments: &SegmentedFluctuations,
    q_grid: &QGrid,
) -> Result<FluctuationSurface> {
    if segments.n_channels() != 1 {
        return Err(Error::MultichannelInput { channels: segments.n_channels() });
    }
    build_surface(segments, q_grid, SurfaceVariant::Univariate, |_| Ok(None), None)
}

/// Euclidean multichannel baseline: channel energies summed without
/// covariance weighting. Identical to the Mahalanobis variant with an
/// identity covariance; kept as a distinct entry point for comparisons.
pub fn fluctuation_mmfdfa(
    segments: &SegmentedFluctuations,
    q_grid: &QGrid,
) -> Result<FluctuationSurface> {
    build_surface(segments, q_grid, SurfaceVariant::EuclideanMmfdfa, |_| Ok(None), None)
}

/// Fully multivariate fluctuation function under a fixed covariance.
pub fn fluctuation_fm(
    segments: &SegmentedFluctuations,
    cov: &SpdMatrix,
    q_grid: &QGrid,
) -> Result<FluctuationSurface> {
    if cov.dim() != segments.n_channels() {
        return Err(Error::DimensionMismatch {
            expected: segments.n_channels(),
            got: cov.dim(),
        });
    }
    build_surface(
        segments,
        q_grid,
        SurfaceVariant::MahalanobisFm,
        |_| Ok(Some(cov.clone())),
        Some(cov.clone()),
    )
}

/// Fully multivariate fluctuation function with the covariance estimated
/// per the given policy (one global matrix, or one per scale).
pub fn fluctuation_fm_auto(
    segments: &SegmentedFluctuations,
    est: &CovarianceEstimator,
    q_grid: &QGrid,
) -> Result<FluctuationSurface> {
    match (est.mode, est.scope) {
        (CovarianceMode::Identity, _) => {
            let cov = SpdMatrix::identity(segments.n_channels());
            fluctuation_fm(segments, &cov, q_grid)
        }
        (_, CovarianceScope::GlobalDetrended) => {
            let cov = estimate_covariance(segments, est)?;
            fluctuation_fm(segments, &cov, q_grid)
        }
        (mode, CovarianceScope::PerScale) => build_surface(
            segments,
            q_grid,
            SurfaceVariant::MahalanobisFm,
            move |s| estimate_covariance_at_scale(segments, s, mode).map(Some),
            None,
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{gen_fgn, gen_white_noise, validate_series};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel_close(a: f64, b: f64, rtol: f64) -> bool {
        (a - b).abs() <= rtol * a.abs().max(b.abs()).max(1e-300)
    }

    fn series_from_vec(x: Vec<f64>) -> MultichannelSeries {
        let n = x.len();
        validate_series(Array2::from_shape_vec((n, 1), x).unwrap(), 1.0).unwrap()
    }

    #[test]
    fn profile_of_constant_series_is_zero() {
        let s = series_from_vec(vec![3.25; 64]);
        let p = cumulative_profile(&s);
        assert!(p.values.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn profile_hand_example_and_telescoping() {
        let s = series_from_vec(vec![1.0, -1.0, 1.0, -1.0]);
        let p = cumulative_profile(&s);
        let got: Vec<f64> = p.values.column(0).to_vec();
        assert_eq!(got, vec![1.0, 0.0, 1.0, 0.0]);

        let s = gen_white_noise(256, 3, 9).unwrap();
        let p = cumulative_profile(&s);
        for c in 0..3 {
            assert!(p.values[[255, c]].abs() < 1e-9, "channel {c} does not telescope");
        }
    }

    #[test]
    fn detrending_annihilates_polynomials() {
        // Profile values follow a quadratic in the sample index.
        let n = 128;
        let mut values = Array2::zeros((n, 2));
        for i in 0..n {
            let t = i as f64;
            values[[i, 0]] = 1.5 + 0.25 * t - 0.01 * t * t;
            values[[i, 1]] = -2.0 + 0.1 * t + 0.02 * t * t;
        }
        let profile = Profile { values, source_mean: vec![0.0, 0.0] };
        let res = segment_and_detrend(&profile, 16, &DetrendConfig::default()).unwrap();
        assert!(res.iter().all(|&v| v.abs() < 1e-9));
    }

    #[test]
    fn mirrored_segmentation_layout() {
        let n = 100;
        let mut values = Array2::zeros((n, 1));
        for i in 0..n {
            values[[i, 0]] = (i as f64).powi(2);
        }
        let profile = Profile { values: values.clone(), source_mean: vec![0.0] };
        let cfg = DetrendConfig { order: 0, mirrored: true };
        let res = segment_and_detrend(&profile, 30, &cfg).unwrap();
        assert_eq!(res.dim().0, 6);

        // Backward windows end at the last sample: rows [70,100), [40,70), [10,40).
        for (seg, start) in [(3usize, 70usize), (4, 40), (5, 10)] {
            let window: Vec<f64> = (start..start + 30).map(|i| values[[i, 0]]).collect();
            let mean = window.iter().sum::<f64>() / 30.0;
            for i in 0..30 {
                assert!(
                    (res[[seg, i, 0]] - (window[i] - mean)).abs() < 1e-9,
                    "segment {seg} row {i}"
                );
            }
        }
    }

    #[test]
    fn residuals_match_normal_equations_oracle() {
        // Independent least-squares solve on the raw monomial basis.
        fn oracle_residuals(y: &[f64], order: usize) -> Vec<f64> {
            let s = y.len();
            let cols = order + 1;
            let mut ata = vec![vec![0.0f64; cols]; cols];
            let mut aty = vec![0.0f64; cols];
            for i in 0..s {
                let mut powers = vec![1.0f64; cols];
                for k in 1..cols {
                    powers[k] = powers[k - 1] * i as f64;
                }
                for a in 0..cols {
                    aty[a] += powers[a] * y[i];
                    for b in 0..cols {
                        ata[a][b] += powers[a] * powers[b];
                    }
                }
            }
            // Gaussian elimination with partial pivoting.
            for col in 0..cols {
                let piv = (col..cols)
                    .max_by(|&a, &b| ata[a][col].abs().partial_cmp(&ata[b][col].abs()).unwrap())
                    .unwrap();
                ata.swap(col, piv);
                aty.swap(col, piv);
                let d = ata[col][col];
                for j in 0..cols {
                    ata[col][j] /= d;
                }
                aty[col] /= d;
                for row in 0..cols {
                    if row != col {
                        let f = ata[row][col];
                        for j in 0..cols {
                            ata[row][j] -= f * ata[col][j];
                        }
                        aty[row] -= f * aty[col];
                    }
                }
            }
            (0..s)
                .map(|i| {
                    let mut fit = 0.0;
                    let mut pow = 1.0;
                    for k in 0..cols {
                        fit += aty[k] * pow;
                        pow *= i as f64;
                    }
                    y[i] - fit
                })
                .collect()
        }

        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let n = 96;
        let values = Array2::from_shape_fn((n, 1), |_| rng.random::<f64>() * 10.0 - 5.0);
        let profile = Profile { values: values.clone(), source_mean: vec![0.0] };
        let cfg = DetrendConfig { order: 2, mirrored: false };
        let res = segment_and_detrend(&profile, 24, &cfg).unwrap();
        for seg in 0..4 {
            let window: Vec<f64> = (seg * 24..(seg + 1) * 24).map(|i| values[[i, 0]]).collect();
            let want = oracle_residuals(&window, 2);
            for i in 0..24 {
                assert!(
                    (res[[seg, i, 0]] - want[i]).abs() < 1e-8,
                    "segment {seg} sample {i}: {} vs {}",
                    res[[seg, i, 0]],
                    want[i]
                );
            }
        }
    }

    #[test]
    fn residuals_are_orthogonal_to_basis() {
        let s = gen_white_noise(512, 2, 21).unwrap();
        let profile = cumulative_profile(&s);
        let res = segment_and_detrend(&profile, 32, &DetrendConfig::default()).unwrap();
        let basis = detrend_basis(32, 2);
        let (n_seg, len, m) = res.dim();
        for seg in 0..n_seg {
            for c in 0..m {
                let norm: f64 =
                    (0..len).map(|i| res[[seg, i, c]] * res[[seg, i, c]]).sum::<f64>().sqrt();
                for k in 0..basis.ncols() {
                    let dot: f64 = (0..len).map(|i| res[[seg, i, c]] * basis[(i, k)]).sum();
                    assert!(dot.abs() <= 1e-8 * norm.max(1e-12));
                }
            }
        }
    }

    #[test]
    fn segmentation_errors() {
        let s = gen_white_noise(64, 1, 1).unwrap();
        let profile = cumulative_profile(&s);
        assert!(matches!(
            segment_and_detrend(&profile, 70, &DetrendConfig::default()),
            Err(Error::ScaleTooLarge { .. })
        ));
        let cfg = DetrendConfig { order: 4, mirrored: true };
        assert!(matches!(
            segment_and_detrend(&profile, 5, &cfg),
            Err(Error::RankDeficientFit { .. })
        ));
    }

    fn segments_for(series: &MultichannelSeries, scales: &[usize]) -> SegmentedFluctuations {
        let profile = cumulative_profile(series);
        let grid = ScaleGrid::new(scales.to_vec(), series.n_samples()).unwrap();
        SegmentedFluctuations::compute(&profile, &grid, &DetrendConfig::default()).unwrap()
    }

    #[test]
    fn constant_energy_segments_give_flat_moments() {
        // Hand-built residuals: every segment has the same energy E.
        let mut per_scale = BTreeMap::new();
        let mut res = Array3::zeros((8, 16, 1));
        for seg in 0..8 {
            for i in 0..16 {
                res[[seg, i, 0]] = if (seg + i) % 2 == 0 { 3.0 } else { -3.0 };
            }
        }
        per_scale.insert(16, res);
        let segments = SegmentedFluctuations::from_residuals(per_scale).unwrap();
        let q_grid = QGrid::new(vec![-4.0, -1.0, 0.0, 2.0, 4.0]).unwrap();
        let surface = fluctuation_univariate(&segments, &q_grid).unwrap();
        for qi in 0..q_grid.len() {
            assert!(rel_close(surface.values[[qi, 0]], 3.0, 1e-12));
        }
    }

    #[test]
    fn q2_equals_global_rms() {
        let s = gen_white_noise(2048, 1, 33).unwrap();
        let segments = segments_for(&s, &[32]);
        let q_grid = QGrid::new(vec![2.0]).unwrap();
        let surface = fluctuation_univariate(&segments, &q_grid).unwrap();
        let res = &segments.per_scale[&32];
        let count = res.len() as f64;
        let rms = (res.iter().map(|&v| v * v).sum::<f64>() / count).sqrt();
        assert!(rel_close(surface.values[[0, 0]], rms, 1e-12));
    }

    #[test]
    fn fm_with_identity_matches_mmfdfa_exactly() {
        let s = gen_fgn(2048, 3, 0.6, 0.4, 17).unwrap();
        let segments = segments_for(&s, &[16, 32, 64]);
        let q_grid = QGrid::default();
        let fm = fluctuation_fm(&segments, &SpdMatrix::identity(3), &q_grid).unwrap();
        let eu = fluctuation_mmfdfa(&segments, &q_grid).unwrap();
        assert_eq!(fm.values, eu.values);
    }

    #[test]
    fn single_channel_fm_matches_univariate() {
        let s = gen_white_noise(2048, 1, 5).unwrap();
        let segments = segments_for(&s, &[16, 32, 64]);
        let q_grid = QGrid::default();
        let fm = fluctuation_fm(&segments, &SpdMatrix::identity(1), &q_grid).unwrap();
        let uni = fluctuation_univariate(&segments, &q_grid).unwrap();
        for (a, b) in fm.values.iter().zip(uni.values.iter()) {
            assert!(rel_close(*a, *b, 1e-10));
        }
    }

    #[test]
    fn q_zero_is_the_limit_of_small_q() {
        let s = gen_fgn(4096, 2, 0.7, 0.3, 23).unwrap();
        let segments = segments_for(&s, &[16, 64, 256]);
        let q_grid = QGrid::new(vec![-0.01, 0.0, 0.01, 2.0]).unwrap();
        let cov = estimate_covariance(&segments, &CovarianceEstimator::default()).unwrap();
        let surface = fluctuation_fm(&segments, &cov, &q_grid).unwrap();
        for si in 0..surface.scales.len() {
            let f_neg = surface.values[[0, si]];
            let f_zero = surface.values[[1, si]];
            let f_pos = surface.values[[2, si]];
            assert!((f_pos - f_zero).abs() / f_zero < 0.01);
            assert!((f_neg - f_zero).abs() / f_zero < 0.01);
        }
    }

    #[test]
    fn mmfdfa_is_channel_permutation_invariant() {
        let s = gen_fgn(2048, 3, 0.6, 0.2, 29).unwrap();
        let permuted = s.select_channels(&[2, 0, 1]).unwrap();
        let q_grid = QGrid::default();
        let a = fluctuation_mmfdfa(&segments_for(&s, &[16, 32, 64]), &q_grid).unwrap();
        let b = fluctuation_mmfdfa(&segments_for(&permuted, &[16, 32, 64]), &q_grid).unwrap();
        for (x, y) in a.values.iter().zip(b.values.iter()) {
            assert!(rel_close(*x, *y, 1e-12));
        }
    }

    #[test]
    fn channel_scaling_moves_euclid_but_not_diagonal_mahalanobis() {
        let s = gen_fgn(2048, 2, 0.6, 0.2, 31).unwrap();
        let mut scaled = s.samples().clone();
        scaled.column_mut(1).mapv_inplace(|v| 5.0 * v);
        let scaled = validate_series(scaled, 1.0).unwrap();
        let q_grid = QGrid::default();
        let scales = [16, 32, 64];

        let base_seg = segments_for(&s, &scales);
        let scaled_seg = segments_for(&scaled, &scales);

        let eu_base = fluctuation_mmfdfa(&base_seg, &q_grid).unwrap();
        let eu_scaled = fluctuation_mmfdfa(&scaled_seg, &q_grid).unwrap();
        let moved = eu_base
            .values
            .iter()
            .zip(eu_scaled.values.iter())
            .any(|(a, b)| (a - b).abs() > 1e-6 * a.abs());
        assert!(moved, "Euclidean surface should react to channel scaling");

        let est = CovarianceEstimator {
            mode: CovarianceMode::DiagonalVariances,
            scope: CovarianceScope::GlobalDetrended,
        };
        let fm_base = fluctuation_fm_auto(&base_seg, &est, &q_grid).unwrap();
        let fm_scaled = fluctuation_fm_auto(&scaled_seg, &est, &q_grid).unwrap();
        for (a, b) in fm_base.values.iter().zip(fm_scaled.values.iter()) {
            assert!(rel_close(*a, *b, 1e-8), "{a} vs {b}");
        }
    }

    #[test]
    fn estimate_covariance_identity_and_correlated_channels() {
        let s = gen_white_noise(1024, 2, 3).unwrap();
        let segments = segments_for(&s, &[16, 32]);
        let est = CovarianceEstimator {
            mode: CovarianceMode::Identity,
            scope: CovarianceScope::GlobalDetrended,
        };
        let spd = estimate_covariance(&segments, &est).unwrap();
        assert_eq!(spd.sigma(), &DMatrix::identity(2, 2));

        // Perfectly correlated pair: estimation succeeds only through
        // shrinkage and the correlation survives nearly intact.
        let base = gen_white_noise(1024, 1, 4).unwrap();
        let mut dup = Array2::zeros((1024, 2));
        for i in 0..1024 {
            dup[[i, 0]] = base.samples()[[i, 0]];
            dup[[i, 1]] = base.samples()[[i, 0]];
        }
        let dup = validate_series(dup, 1.0).unwrap();
        let segments = segments_for(&dup, &[16, 32]);
        let spd = estimate_covariance(&segments, &CovarianceEstimator::default()).unwrap();
        let sig = spd.sigma();
        let rho = sig[(0, 1)] / (sig[(0, 0)] * sig[(1, 1)]).sqrt();
        assert!(rho >= 0.999, "correlation {rho}");
    }

    #[test]
    fn estimated_correlation_tracks_generator() {
        let s = gen_fgn(1 << 13, 2, 0.6, 0.8, 37).unwrap();
        let segments = segments_for(&s, &[16, 32, 64]);
        let spd = estimate_covariance(&segments, &CovarianceEstimator::default()).unwrap();
        let sig = spd.sigma();
        let rho = sig[(0, 1)] / (sig[(0, 0)] * sig[(1, 1)]).sqrt();
        assert!((rho - 0.8).abs() < 0.05, "correlation {rho}");
    }

    #[test]
    fn moments_are_nondecreasing_in_q() {
        let s = gen_fgn(4096, 2, 0.7, 0.5, 41).unwrap();
        let segments = segments_for(&s, &[16, 64, 256]);
        let q_grid = QGrid::default();
        let cov = estimate_covariance(&segments, &CovarianceEstimator::default()).unwrap();
        let surface = fluctuation_fm(&segments, &cov, &q_grid).unwrap();
        for si in 0..surface.scales.len() {
            for qi in 1..q_grid.len() {
                let lo = surface.values[[qi - 1, si]];
                let hi = surface.values[[qi, si]];
                assert!(hi >= lo * (1.0 - 1e-10), "q ordering broken at ({qi}, {si})");
            }
        }
    }

    #[test]
    fn global_scaling_homogeneity() {
        let s = gen_fgn(2048, 2, 0.6, 0.3, 43).unwrap();
        let k = 3.7;
        let scaled = validate_series(s.samples().mapv(|v| k * v), 1.0).unwrap();
        let q_grid = QGrid::default();
        let scales = [16, 32, 64];
        let seg_a = segments_for(&s, &scales);
        let seg_b = segments_for(&scaled, &scales);

        let id = SpdMatrix::identity(2);
        let a = fluctuation_fm(&seg_a, &id, &q_grid).unwrap();
        let b = fluctuation_fm(&seg_b, &id, &q_grid).unwrap();
        for (x, y) in a.values.iter().zip(b.values.iter()) {
            assert!(rel_close(*y, k * *x, 1e-12));
        }

        let est = CovarianceEstimator::default();
        let a = fluctuation_fm_auto(&seg_a, &est, &q_grid).unwrap();
        let b = fluctuation_fm_auto(&seg_b, &est, &q_grid).unwrap();
        for (x, y) in a.values.iter().zip(b.values.iter()) {
            assert!(rel_close(*x, *y, 1e-8), "{x} vs {y}");
        }
    }

    #[test]
    fn whitened_equivalence() {
        let s = gen_fgn(4096, 3, 0.65, 0.5, 47).unwrap();
        let segments = segments_for(&s, &[16, 64, 256]);
        let q_grid = QGrid::default();
        let cov = estimate_covariance(&segments, &CovarianceEstimator::default()).unwrap();
        let fm = fluctuation_fm(&segments, &cov, &q_grid).unwrap();
        let white = segments.whitened(&cov).unwrap();
        let eu = fluctuation_mmfdfa(&white, &q_grid).unwrap();
        for (a, b) in fm.values.iter().zip(eu.values.iter()) {
            assert!(rel_close(*a, *b, 1e-9), "{a} vs {b}");
        }
    }

    #[test]
    fn backward_block_equals_forward_block_of_reversed_profile() {
        let s = gen_white_noise(512, 2, 51).unwrap();
        let profile = cumulative_profile(&s);
        let n = profile.n_samples();
        let mut reversed = Array2::zeros((n, 2));
        for i in 0..n {
            for c in 0..2 {
                reversed[[i, c]] = profile.values[[n - 1 - i, c]];
            }
        }
        let rev_profile = Profile { values: reversed, source_mean: vec![0.0, 0.0] };

        let scale = 48;
        let both = segment_and_detrend(&profile, scale, &DetrendConfig::default()).unwrap();
        let fwd_only = DetrendConfig { order: 2, mirrored: false };
        let rev_fwd = segment_and_detrend(&rev_profile, scale, &fwd_only).unwrap();

        let l = n / scale;
        for v in 0..l {
            let back = both.index_axis(ndarray::Axis(0), l + v);
            let fwd = rev_fwd.index_axis(ndarray::Axis(0), v);
            let e_back: f64 = back.iter().map(|&x| x * x).sum();
            let e_fwd: f64 = fwd.iter().map(|&x| x * x).sum();
            assert!(rel_close(e_back, e_fwd, 1e-12), "segment {v}: {e_back} vs {e_fwd}");
        }
    }

    #[test]
    fn time_reversal_leaves_surface_nearly_unchanged() {
        // The profile anchors at the first sample, so windows of the
        // reversed series shift by one sample; the surfaces agree to a
        // small tolerance rather than exactly.
        let s = gen_fgn(4096, 2, 0.7, 0.4, 53).unwrap();
        let n = s.n_samples();
        let mut rev = Array2::zeros((n, 2));
        for i in 0..n {
            for c in 0..2 {
                rev[[i, c]] = s.samples()[[n - 1 - i, c]];
            }
        }
        let rev = validate_series(rev, 1.0).unwrap();
        let q_grid = QGrid::default();
        let scales = [32, 64, 128, 256];
        let id = SpdMatrix::identity(2);
        let a = fluctuation_fm(&segments_for(&s, &scales), &id, &q_grid).unwrap();
        let b = fluctuation_fm(&segments_for(&rev, &scales), &id, &q_grid).unwrap();
        for (x, y) in a.values.iter().zip(b.values.iter()) {
            assert!(rel_close(*x, *y, 0.05), "{x} vs {y}");
        }
    }

    #[test]
    fn degenerate_segments_raise_for_nonpositive_q() {
        let s = series_from_vec(vec![1.0; 256]);
        let profile = cumulative_profile(&s);
        let grid = ScaleGrid::new(vec![16, 32], 256).unwrap();
        let segments =
            SegmentedFluctuations::compute(&profile, &grid, &DetrendConfig::default()).unwrap();
        let q_grid = QGrid::new(vec![-2.0, 0.0, 2.0]).unwrap();
        assert!(matches!(
            fluctuation_univariate(&segments, &q_grid),
            Err(Error::DegenerateSegment { .. })
        ));
    }

    #[test]
    fn univariate_rejects_multichannel() {
        let s = gen_white_noise(512, 2, 55).unwrap();
        let segments = segments_for(&s, &[16, 32]);
        assert!(matches!(
            fluctuation_univariate(&segments, &QGrid::default()),
            Err(Error::MultichannelInput { channels: 2 })
        ));
    }

    #[test]
    fn per_scale_covariance_scope_runs() {
        let s = gen_fgn(4096, 2, 0.6, 0.5, 57).unwrap();
        let segments = segments_for(&s, &[16, 64, 256]);
        let est = CovarianceEstimator {
            mode: CovarianceMode::FullSample,
            scope: CovarianceScope::PerScale,
        };
        let surface = fluctuation_fm_auto(&segments, &est, &QGrid::default()).unwrap();
        assert!(surface.covariance_used.is_none());
        assert!(surface.values.iter().all(|&v| v.is_finite() && v > 0.0));
    }
}

//! The `L_pq` matrix-norm family and SPD factorization.
//!
//! Three aggregation layers appear throughout the crate: an innermost
//! vector norm over channels (plain power, Euclidean, or
//! covariance-weighted Mahalanobis), a middle power sum over time indices
//! within a segment, and an outer power sum over segments. The
//! Mahalanobis-weighted norm is always evaluated through the whitening
//! factor of the covariance, never by applying an explicit inverse.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, Array3, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exponent magnitude beyond which power sums switch to log-domain
/// accumulation to avoid overflow.
const LOG_DOMAIN_THRESHOLD: f64 = 50.0;

/// Relative tolerance for the symmetry check on covariance inputs.
const SYMMETRY_RTOL: f64 = 1e-8;

/// Exponent pair (and optional inner exponent) of an `L_pq`-family norm.
///
/// `p` must be at least one (or `f64::INFINITY` for a max over the inner
/// index); `q` may be any nonzero real for fluctuation use, but the norm
/// axioms are only guaranteed for `q >= 1`; `r` is the innermost exponent
/// of the three-layer variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormOrder {
    pub p: f64,
    pub q: f64,
    pub r: f64,
}

impl NormOrder {
    /// Order with inner exponent fixed at the Euclidean value `r = 2`.
    pub fn new(p: f64, q: f64) -> Result<Self> {
        Self::with_r(p, q, 2.0)
    }

    pub fn with_r(p: f64, q: f64, r: f64) -> Result<Self> {
        let order = Self { p, q, r };
        order.validate()?;
        Ok(order)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p.is_nan() || self.p < 1.0 {
            return Err(Error::InvalidParameter(format!("p = {} must be >= 1", self.p)));
        }
        if !self.q.is_finite() || self.q == 0.0 {
            return Err(Error::InvalidParameter(format!(
                "q = {} must be finite and nonzero",
                self.q
            )));
        }
        if !self.r.is_finite() || self.r < 1.0 {
            return Err(Error::InvalidParameter(format!("r = {} must be finite and >= 1", self.r)));
        }
        Ok(())
    }

    /// Whether the axiom proofs apply for this order.
    pub fn is_true_norm(&self) -> bool {
        self.p >= 1.0 && self.q >= 1.0
    }
}

/// `(sum_i d_i^q / c)^(1/q)` over nonnegative summaries.
///
/// Zero summaries contribute nothing for `q > 0` and are an error for
/// `q < 0` (a zero raised to a negative power has no finite moment).
/// Large `|q|` is routed through log-domain accumulation.
pub(crate) fn power_mean_root(values: &[f64], q: f64, normalizer: f64) -> Result<f64> {
    if q == 0.0 {
        return Err(Error::ZeroDivision);
    }
    let mut logs = Vec::with_capacity(values.len());
    for &d in values {
        debug_assert!(d >= 0.0);
        if d == 0.0 {
            if q < 0.0 {
                return Err(Error::DegenerateSegment { q });
            }
            continue;
        }
        logs.push(d.ln());
    }
    if logs.is_empty() {
        return Ok(0.0);
    }
    if q.abs() <= LOG_DOMAIN_THRESHOLD {
        let sum: f64 = logs.iter().map(|&l| (q * l).exp()).sum();
        Ok((sum / normalizer).powf(1.0 / q))
    } else {
        let scaled: Vec<f64> = logs.iter().map(|&l| q * l).collect();
        let peak = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let rest: f64 = scaled.iter().map(|&v| (v - peak).exp()).sum();
        Ok(((peak + rest.ln() - normalizer.ln()) / q).exp())
    }
}

/// Overflow-safe `(sum |x_i|^p)^(1/p)`; `p = infinity` gives the max.
pub(crate) fn stable_p_norm<I: Iterator<Item = f64>>(values: I, p: f64) -> f64 {
    let abs: Vec<f64> = values.map(f64::abs).collect();
    let max = abs.iter().cloned().fold(0.0f64, f64::max);
    if max == 0.0 {
        return 0.0;
    }
    if p.is_infinite() {
        return max;
    }
    if p == 2.0 {
        let sum: f64 = abs.iter().map(|&v| (v / max) * (v / max)).sum();
        return max * sum.sqrt();
    }
    let sum: f64 = abs.iter().map(|&v| (v / max).powf(p)).sum();
    max * sum.powf(1.0 / p)
}

fn check_finite_2d(z: &Array2<f64>) -> Result<()> {
    for ((i, j), &v) in z.indexed_iter() {
        if !v.is_finite() {
            return Err(Error::NonFinite { index: i, channel: j });
        }
    }
    Ok(())
}

fn check_finite_3d(z: &Array3<f64>) -> Result<()> {
    let v_dim = z.dim().1;
    for ((u, v, m), &x) in z.indexed_iter() {
        if !x.is_finite() {
            return Err(Error::NonFinite { index: u * v_dim + v, channel: m });
        }
    }
    Ok(())
}

/// Two-layer matrix norm: inner power sum over columns, outer over rows.
pub fn lpq_norm(z: &Array2<f64>, order: &NormOrder) -> Result<f64> {
    order.validate()?;
    check_finite_2d(z)?;
    let rows: Vec<f64> = z
        .rows()
        .into_iter()
        .map(|row| stable_p_norm(row.iter().cloned(), order.p))
        .collect();
    power_mean_root(&rows, order.q, 1.0)
}

/// Three-layer norm over a `U x V x M` array: innermost exponent `r`
/// over channels, then `p` over the middle index, then `q` over the
/// outer index.
pub fn lpqr_norm(z: &Array3<f64>, order: &NormOrder) -> Result<f64> {
    order.validate()?;
    check_finite_3d(z)?;
    aggregate_vector_norms(z, order, |vec| stable_p_norm(vec.iter().cloned(), order.r))
}

/// Three-layer norm with the inner layer fixed to the Euclidean vector
/// norm; identical to [`lpqr_norm`] with `r = 2`.
pub fn lpq_euclid_norm(z: &Array3<f64>, order: &NormOrder) -> Result<f64> {
    order.validate()?;
    check_finite_3d(z)?;
    aggregate_vector_norms(z, order, |vec| stable_p_norm(vec.iter().cloned(), 2.0))
}

/// Covariance-weighted norm: the inner Euclidean norm is replaced by the
/// Mahalanobis length `sqrt(z' Sigma^-1 z)`, evaluated as the Euclidean
/// norm of the whitened vector.
pub fn mahalanobis_lpq_norm(z: &Array3<f64>, cov: &SpdMatrix, order: &NormOrder) -> Result<f64> {
    order.validate()?;
    check_finite_3d(z)?;
    if z.dim().2 != cov.dim() {
        return Err(Error::DimensionMismatch { expected: cov.dim(), got: z.dim().2 });
    }
    aggregate_vector_norms(z, order, |vec| cov.mahalanobis_norm(vec))
}

fn aggregate_vector_norms<F>(z: &Array3<f64>, order: &NormOrder, inner: F) -> Result<f64>
where
    F: Fn(ArrayView1<'_, f64>) -> f64,
{
    let (u_dim, _, _) = z.dim();
    let mut outer = Vec::with_capacity(u_dim);
    for u in 0..u_dim {
        let slab = z.index_axis(ndarray::Axis(0), u);
        let distances: Vec<f64> =
            slab.rows().into_iter().map(&inner).collect();
        outer.push(stable_p_norm(distances.into_iter(), order.p));
    }
    power_mean_root(&outer, order.q, 1.0)
}

/// Symmetric positive-definite covariance with its spectral factorization.
///
/// Stores the eigendecomposition `Sigma = Q' Lambda Q`, the factor
/// `S = Lambda^(1/2) Q` (so `S' S = Sigma`), and the whitener
/// `W = Lambda^(-1/2) Q` (so `W' W = Sigma^-1` and `|W z|_2^2` is the
/// squared Mahalanobis length of `z`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpdMatrix {
    sigma: DMatrix<f64>,
    factor: DMatrix<f64>,
    whitener: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
}

impl SpdMatrix {
    pub fn identity(m: usize) -> Self {
        Self {
            sigma: DMatrix::identity(m, m),
            factor: DMatrix::identity(m, m),
            whitener: DMatrix::identity(m, m),
            eigenvalues: DVector::from_element(m, 1.0),
            eigenvectors: DMatrix::identity(m, m),
        }
    }

    /// Diagonal covariance from per-channel variances.
    pub fn from_diagonal(variances: &[f64]) -> Result<Self> {
        spd_factorize(&DMatrix::from_diagonal(&DVector::from_row_slice(variances)), 0.0)
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// Factor `S` with `S' S = Sigma`.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    /// Whitener `W` with `W' W = Sigma^-1`.
    pub fn whitener(&self) -> &DMatrix<f64> {
        &self.whitener
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// Orthogonal matrix `Q` of the decomposition `Sigma = Q' Lambda Q`
    /// (rows are eigenvectors).
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    /// Mahalanobis length `sqrt(z' Sigma^-1 z)` via the whitened form.
    pub fn mahalanobis_norm(&self, z: ArrayView1<'_, f64>) -> f64 {
        self.mahalanobis_sq(z).sqrt()
    }

    /// Squared Mahalanobis length `z' Sigma^-1 z = |W z|^2`.
    pub fn mahalanobis_sq(&self, z: ArrayView1<'_, f64>) -> f64 {
        let m = self.dim();
        debug_assert_eq!(z.len(), m);
        let mut total = 0.0;
        for i in 0..m {
            let mut coord = 0.0;
            for j in 0..m {
                coord += self.whitener[(i, j)] * z[j];
            }
            total += coord * coord;
        }
        total
    }

    /// Applies the whitener to a single vector.
    pub fn whiten(&self, z: ArrayView1<'_, f64>) -> Vec<f64> {
        let m = self.dim();
        (0..m)
            .map(|i| (0..m).map(|j| self.whitener[(i, j)] * z[j]).sum())
            .collect()
    }
}

/// Spectral factorization of a symmetric positive-definite matrix with
/// optional shrinkage toward the scaled identity:
/// `Sigma' = (1 - gamma) Sigma + gamma (tr Sigma / M) I`.
///
/// With zero shrinkage an indefinite input fails rather than being
/// repaired.
pub fn spd_factorize(sigma: &DMatrix<f64>, shrinkage: f64) -> Result<SpdMatrix> {
    let m = sigma.nrows();
    if m == 0 || sigma.ncols() != m {
        return Err(Error::DimensionMismatch { expected: m, got: sigma.ncols() });
    }
    if !(0.0..1.0).contains(&shrinkage) {
        return Err(Error::InvalidParameter(format!(
            "shrinkage {shrinkage} outside [0, 1)"
        )));
    }
    for &v in sigma.iter() {
        if !v.is_finite() {
            return Err(Error::NonFinite { index: 0, channel: 0 });
        }
    }
    let max_abs = sigma.iter().fold(0.0f64, |acc, &v| acc.max(v.abs()));
    let max_asym = (0..m)
        .flat_map(|i| (0..m).map(move |j| (i, j)))
        .fold(0.0f64, |acc, (i, j)| acc.max((sigma[(i, j)] - sigma[(j, i)]).abs()));
    if max_asym > SYMMETRY_RTOL * max_abs.max(f64::MIN_POSITIVE) {
        return Err(Error::NotSymmetric { max_asymmetry: max_asym });
    }

    // Symmetrize exactly, then shrink.
    let mut work = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            work[(i, j)] = 0.5 * (sigma[(i, j)] + sigma[(j, i)]);
        }
    }
    if shrinkage > 0.0 {
        let ridge = shrinkage * work.trace() / m as f64;
        work *= 1.0 - shrinkage;
        for i in 0..m {
            work[(i, i)] += ridge;
        }
    }

    let eig = work.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let eigenvalues = DVector::from_iterator(m, order.iter().map(|&i| eig.eigenvalues[i]));
    let min_eigenvalue = eigenvalues[0];
    if min_eigenvalue <= 0.0 {
        return Err(Error::NotPositiveDefinite { min_eigenvalue });
    }

    // Rows of Q are eigenvectors: Sigma = Q' Lambda Q.
    let mut q = DMatrix::zeros(m, m);
    for (row, &src) in order.iter().enumerate() {
        for j in 0..m {
            q[(row, j)] = eig.eigenvectors[(j, src)];
        }
    }
    let mut factor = q.clone();
    let mut whitener = q.clone();
    for row in 0..m {
        let root = eigenvalues[row].sqrt();
        for j in 0..m {
            factor[(row, j)] *= root;
            whitener[(row, j)] /= root;
        }
    }

    Ok(SpdMatrix { sigma: work, factor, whitener, eigenvalues, eigenvectors: q })
}

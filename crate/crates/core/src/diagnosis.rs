//! Feature-space distances, threshold calibration, and classification.
//!
//! A model is calibrated from healthy reference feature vectors: their
//! mean becomes the center, and a candidate's distance from that center
//! (standardized Euclidean, or Mahalanobis when enough references exist
//! to invert a feature covariance) is compared against a threshold. The
//! decision rule is strict: a machine is flagged faulty only when its
//! distance exceeds the threshold; the boundary itself stays healthy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureVector, MultifractalFeatures};
use crate::fluctuation::ESTIMATION_SHRINKAGE;
use crate::norms::{spd_factorize, SpdMatrix};

/// Relative margin added to the largest healthy distance by the
/// `MaxHealthy` policy.
pub const MAX_HEALTHY_MARGIN: f64 = 0.05;

/// References needed per feature dimension before a full covariance is
/// trusted.
const MAHALANOBIS_REFS_PER_DIM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DistanceKind {
    /// Euclidean distance on per-feature standardized coordinates.
    Euclidean,
    /// Mahalanobis distance under the reference feature covariance.
    Mahalanobis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MarginPolicy {
    /// Threshold just above the worst healthy reference.
    MaxHealthy,
    /// Halfway between the worst healthy and best faulty reference.
    Midpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HealthLabel {
    Healthy,
    Faulty,
}

/// Outcome of classifying one candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HealthDecision {
    pub distance: f64,
    pub threshold: f64,
    pub label: HealthLabel,
    /// `distance - threshold`; positive means faulty.
    pub margin: f64,
}

/// Calibrated feature-space model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosisModel {
    reference_features: Vec<FeatureVector>,
    distance_kind: DistanceKind,
    center: [f64; FeatureVector::DIM],
    scale: [f64; FeatureVector::DIM],
    reference_cov: Option<SpdMatrix>,
    threshold: f64,
    margin_policy: MarginPolicy,
}

impl DiagnosisModel {
    /// Assembles a model directly from its parts (used for hand-built
    /// models and tests; `calibrate_threshold` is the ordinary entry).
    pub fn from_parts(
        center: [f64; FeatureVector::DIM],
        scale: [f64; FeatureVector::DIM],
        reference_cov: Option<SpdMatrix>,
        distance_kind: DistanceKind,
        threshold: f64,
        margin_policy: MarginPolicy,
    ) -> Result<Self> {
        if scale.iter().any(|&s| s <= 0.0 || s.is_nan()) {
            return Err(Error::InvalidParameter("feature scales must be positive".into()));
        }
        if distance_kind == DistanceKind::Mahalanobis {
            match &reference_cov {
                Some(cov) if cov.dim() == FeatureVector::DIM => {}
                Some(cov) => {
                    return Err(Error::DimensionMismatch {
                        expected: FeatureVector::DIM,
                        got: cov.dim(),
                    })
                }
                None => {
                    return Err(Error::InvalidParameter(
                        "Mahalanobis distance needs a reference covariance".into(),
                    ))
                }
            }
        }
        Ok(Self {
            reference_features: Vec::new(),
            distance_kind,
            center,
            scale,
            reference_cov,
            threshold,
            margin_policy,
        })
    }

    pub fn distance_kind(&self) -> DistanceKind {
        self.distance_kind
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn margin_policy(&self) -> MarginPolicy {
        self.margin_policy
    }

    pub fn center(&self) -> &[f64; FeatureVector::DIM] {
        &self.center
    }

    /// Per-feature standardization scales (all ones under Mahalanobis).
    pub fn scale(&self) -> &[f64; FeatureVector::DIM] {
        &self.scale
    }

    pub fn reference_features(&self) -> &[FeatureVector] {
        &self.reference_features
    }

    /// Applies the model's own standardization to a feature vector.
    pub fn standardize(&self, fv: &FeatureVector) -> [f64; FeatureVector::DIM] {
        let raw = fv.as_array();
        let mut out = [0.0; FeatureVector::DIM];
        for i in 0..FeatureVector::DIM {
            out[i] = (raw[i] - self.center[i]) / self.scale[i];
        }
        out
    }

    /// Distance of a candidate from the healthy center.
    pub fn distance(&self, candidate: &FeatureVector) -> f64 {
        match self.distance_kind {
            DistanceKind::Euclidean => {
                let z = self.standardize(candidate);
                z.iter().map(|v| v * v).sum::<f64>().sqrt()
            }
            DistanceKind::Mahalanobis => {
                let raw = candidate.as_array();
                let mut diff = [0.0; FeatureVector::DIM];
                for i in 0..FeatureVector::DIM {
                    diff[i] = raw[i] - self.center[i];
                }
                let cov = self.reference_cov.as_ref().expect("validated at construction");
                cov.mahalanobis_norm(ndarray::ArrayView1::from(&diff[..]))
            }
        }
    }
}

/// Distance of a candidate from the model's healthy center.
pub fn feature_distance(candidate: &FeatureVector, model: &DiagnosisModel) -> f64 {
    model.distance(candidate)
}

fn feature_stats(
    refs: &[FeatureVector],
) -> ([f64; FeatureVector::DIM], [f64; FeatureVector::DIM]) {
    let n = refs.len() as f64;
    let mut center = [0.0; FeatureVector::DIM];
    for fv in refs {
        for (c, v) in center.iter_mut().zip(fv.as_array()) {
            *c += v;
        }
    }
    for c in &mut center {
        *c /= n;
    }
    let mut scale = [0.0; FeatureVector::DIM];
    for fv in refs {
        for i in 0..FeatureVector::DIM {
            let d = fv.as_array()[i] - center[i];
            scale[i] += d * d;
        }
    }
    for s in &mut scale {
        *s = (*s / (n - 1.0)).sqrt();
        if *s <= 0.0 || s.is_nan() {
            // A constant feature carries no spread information; leave it
            // unscaled rather than dividing by zero.
            *s = 1.0;
        }
    }
    (center, scale)
}

fn threshold_from_distances(
    healthy: &[f64],
    faulty: Option<&[f64]>,
    policy: MarginPolicy,
) -> Result<f64> {
    let max_healthy = healthy.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    match policy {
        MarginPolicy::MaxHealthy => Ok((1.0 + MAX_HEALTHY_MARGIN) * max_healthy),
        MarginPolicy::Midpoint => {
            let faulty = faulty.ok_or_else(|| {
                Error::InvalidParameter("midpoint policy needs faulty references".into())
            })?;
            if faulty.is_empty() {
                return Err(Error::InvalidParameter(
                    "midpoint policy needs faulty references".into(),
                ));
            }
            let min_faulty = faulty.iter().cloned().fold(f64::INFINITY, f64::min);
            if min_faulty <= max_healthy {
                return Err(Error::NoSeparation { max_healthy, min_faulty });
            }
            Ok(0.5 * (max_healthy + min_faulty))
        }
    }
}

/// Calibrates a model from healthy references (plus faulty ones for the
/// midpoint policy). The distance kind defaults to Mahalanobis when the
/// healthy set is large enough to support a feature covariance, else
/// standardized Euclidean.
pub fn calibrate_threshold(
    healthy: &[FeatureVector],
    faulty: Option<&[FeatureVector]>,
    policy: MarginPolicy,
) -> Result<DiagnosisModel> {
    if healthy.len() < 2 {
        return Err(Error::InsufficientReference { required: 2, got: healthy.len() });
    }
    let (center, std) = feature_stats(healthy);

    let use_mahalanobis = healthy.len() >= MAHALANOBIS_REFS_PER_DIM * FeatureVector::DIM;
    let (distance_kind, scale, reference_cov) = if use_mahalanobis {
        let d = FeatureVector::DIM;
        let mut cov = nalgebra::DMatrix::zeros(d, d);
        for fv in healthy {
            let raw = fv.as_array();
            for a in 0..d {
                for b in a..d {
                    cov[(a, b)] += (raw[a] - center[a]) * (raw[b] - center[b]);
                }
            }
        }
        for a in 0..d {
            for b in a..d {
                let v = cov[(a, b)] / (healthy.len() - 1) as f64;
                cov[(a, b)] = v;
                cov[(b, a)] = v;
            }
        }
        let spd = spd_factorize(&cov, ESTIMATION_SHRINKAGE)?;
        (DistanceKind::Mahalanobis, [1.0; FeatureVector::DIM], Some(spd))
    } else {
        (DistanceKind::Euclidean, std, None)
    };

    let mut model = DiagnosisModel {
        reference_features: healthy.to_vec(),
        distance_kind,
        center,
        scale,
        reference_cov,
        threshold: 0.0,
        margin_policy: policy,
    };
    let healthy_d: Vec<f64> = healthy.iter().map(|fv| model.distance(fv)).collect();
    let faulty_d: Option<Vec<f64>> =
        faulty.map(|set| set.iter().map(|fv| model.distance(fv)).collect());
    model.threshold = threshold_from_distances(&healthy_d, faulty_d.as_deref(), policy)?;
    Ok(model)
}

/// Applies the strict decision rule: faulty only when the distance
/// exceeds the threshold; the boundary counts as healthy.
pub fn classify(candidate: &FeatureVector, model: &DiagnosisModel) -> HealthDecision {
    let distance = model.distance(candidate);
    let threshold = model.threshold;
    let label = if distance > threshold { HealthLabel::Faulty } else { HealthLabel::Healthy };
    HealthDecision { distance, threshold, label, margin: distance - threshold }
}

/// Pointwise L2 distance between two feature-curve triples
/// `(tau_q, H_q, f(alpha_q))` on a shared q grid; the raw-curve
/// alternative to the scalar feature distance.
pub fn curve_distance(a: &MultifractalFeatures, b: &MultifractalFeatures) -> Result<f64> {
    if a.q_values.len() != b.q_values.len()
        || a.q_values
            .iter()
            .zip(&b.q_values)
            .any(|(x, y)| (x - y).abs() > 1e-9)
    {
        return Err(Error::DimensionMismatch {
            expected: a.q_values.len(),
            got: b.q_values.len(),
        });
    }
    let mut acc = 0.0;
    for i in 0..a.q_values.len() {
        acc += (a.tau_q[i] - b.tau_q[i]).powi(2);
        acc += (a.h_q[i] - b.h_q[i]).powi(2);
        acc += (a.f_alpha[i] - b.f_alpha[i]).powi(2);
    }
    Ok(acc.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fv(values: [f64; 6]) -> FeatureVector {
        FeatureVector {
            delta_h: values[0],
            spectrum_width: values[1],
            spectrum_skew: values[2],
            alpha_peak: values[3],
            h2: values[4],
            tau_curvature: values[5],
        }
    }

    fn jittered_cluster(center: [f64; 6], spread: f64, n: usize, seed: u64) -> Vec<FeatureVector> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let mut v = center;
                for x in &mut v {
                    *x += spread * (rng.random::<f64>() - 0.5);
                }
                fv(v)
            })
            .collect()
    }

    #[test]
    fn distance_to_own_center_is_zero() {
        let healthy = jittered_cluster([0.2, 0.4, 0.0, 0.7, 0.6, -0.1], 0.1, 6, 1);
        let model = calibrate_threshold(&healthy, None, MarginPolicy::MaxHealthy).unwrap();
        let center = fv(*model.center());
        assert!(feature_distance(&center, &model) < 1e-12);
    }

    #[test]
    fn identity_covariance_matches_standardized_euclidean() {
        let center = [0.0; 6];
        let maha = DiagnosisModel::from_parts(
            center,
            [1.0; 6],
            Some(SpdMatrix::identity(6)),
            DistanceKind::Mahalanobis,
            1.0,
            MarginPolicy::MaxHealthy,
        )
        .unwrap();
        let eucl = DiagnosisModel::from_parts(
            center,
            [1.0; 6],
            None,
            DistanceKind::Euclidean,
            1.0,
            MarginPolicy::MaxHealthy,
        )
        .unwrap();
        let candidate = fv([0.5, -1.0, 2.0, 0.25, -0.75, 1.5]);
        let a = feature_distance(&candidate, &maha);
        let b = feature_distance(&candidate, &eucl);
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn diagonal_covariance_hand_case() {
        // Two live features with variances (1, 4); remaining diagonal
        // entries are ones so the covariance stays well defined.
        let mut vars = [1.0; 6];
        vars[1] = 4.0;
        let cov = SpdMatrix::from_diagonal(&vars).unwrap();
        let model = DiagnosisModel::from_parts(
            [0.0; 6],
            [1.0; 6],
            Some(cov),
            DistanceKind::Mahalanobis,
            10.0,
            MarginPolicy::MaxHealthy,
        )
        .unwrap();
        let candidate = fv([1.0, 2.0, 0.0, 0.0, 0.0, 0.0]);
        let d = feature_distance(&candidate, &model);
        assert!((d - 2.0_f64.sqrt()).abs() < 1e-12, "distance {d}");
    }

    #[test]
    fn threshold_formulas() {
        assert_eq!(
            threshold_from_distances(&[1.0, 2.0], Some(&[6.0, 8.0]), MarginPolicy::Midpoint)
                .unwrap(),
            4.0
        );
        let t = threshold_from_distances(&[1.0, 2.0], None, MarginPolicy::MaxHealthy).unwrap();
        assert!((t - 2.1).abs() < 1e-12);
        assert!(matches!(
            threshold_from_distances(&[1.0, 5.0], Some(&[4.0, 8.0]), MarginPolicy::Midpoint),
            Err(Error::NoSeparation { .. })
        ));
    }

    #[test]
    fn calibration_needs_two_references() {
        let healthy = jittered_cluster([0.0; 6], 0.1, 1, 2);
        assert!(matches!(
            calibrate_threshold(&healthy, None, MarginPolicy::MaxHealthy),
            Err(Error::InsufficientReference { .. })
        ));
    }

    #[test]
    fn boundary_is_healthy_and_margins_order() {
        let model = DiagnosisModel::from_parts(
            [0.0; 6],
            [1.0; 6],
            None,
            DistanceKind::Euclidean,
            2.0,
            MarginPolicy::MaxHealthy,
        )
        .unwrap();
        let on_boundary = fv([2.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let decision = classify(&on_boundary, &model);
        assert_eq!(decision.label, HealthLabel::Healthy);
        assert_eq!(decision.margin, 0.0);

        let near = classify(&fv([1.0, 0.0, 0.0, 0.0, 0.0, 0.0]), &model);
        let far = classify(&fv([3.0, 0.0, 0.0, 0.0, 0.0, 0.0]), &model);
        assert!(far.distance > near.distance && far.margin > near.margin);
        assert_eq!(far.label, HealthLabel::Faulty);
    }

    #[test]
    fn healthy_references_classify_healthy_under_their_own_model() {
        let healthy = jittered_cluster([0.3, 0.5, 0.1, 0.8, 0.55, -0.2], 0.2, 8, 3);
        let model = calibrate_threshold(&healthy, None, MarginPolicy::MaxHealthy).unwrap();
        for fv in &healthy {
            assert_eq!(classify(fv, &model).label, HealthLabel::Healthy);
        }
    }

    #[test]
    fn standardization_leaves_labels_unchanged() {
        let healthy = jittered_cluster([0.3, 0.5, 0.1, 0.8, 0.55, -0.2], 0.3, 10, 4);
        let candidates = jittered_cluster([0.9, 1.2, 0.4, 1.5, 0.9, 0.6], 0.3, 10, 5);
        let model = calibrate_threshold(&healthy, None, MarginPolicy::MaxHealthy).unwrap();

        let transform = |v: &FeatureVector| fv(model.standardize(v));
        let healthy_std: Vec<FeatureVector> = healthy.iter().map(transform).collect();
        let model_std =
            calibrate_threshold(&healthy_std, None, MarginPolicy::MaxHealthy).unwrap();

        for candidate in &candidates {
            let a = classify(candidate, &model).label;
            let b = classify(&transform(candidate), &model_std).label;
            assert_eq!(a, b);
        }
    }

    #[test]
    fn large_reference_sets_switch_to_mahalanobis() {
        let healthy = jittered_cluster([0.3, 0.5, 0.1, 0.8, 0.55, -0.2], 0.3, 20, 6);
        let model = calibrate_threshold(&healthy, None, MarginPolicy::MaxHealthy).unwrap();
        assert_eq!(model.distance_kind(), DistanceKind::Mahalanobis);
        let small = jittered_cluster([0.3, 0.5, 0.1, 0.8, 0.55, -0.2], 0.3, 5, 7);
        let model = calibrate_threshold(&small, None, MarginPolicy::MaxHealthy).unwrap();
        assert_eq!(model.distance_kind(), DistanceKind::Euclidean);
    }

    #[test]
    fn curve_distance_requires_matching_grids() {
        let mk = |qs: Vec<f64>| MultifractalFeatures {
            q_values: qs.clone(),
            h_q: vec![0.5; qs.len()],
            h_fit_r2: vec![1.0; qs.len()],
            tau_q: qs.iter().map(|q| q * 0.5 - 1.0).collect(),
            alpha_q: vec![0.5; qs.len()],
            f_alpha: vec![1.0; qs.len()],
            low_quality: vec![false; qs.len()],
            monotonicity_violations: vec![],
        };
        let a = mk(vec![-1.0, 0.0, 1.0, 2.0]);
        let b = mk(vec![-1.0, 0.0, 1.0, 2.0]);
        assert_eq!(curve_distance(&a, &b).unwrap(), 0.0);
        let c = mk(vec![0.0, 1.0, 2.0]);
        assert!(curve_distance(&a, &c).is_err());
    }
}

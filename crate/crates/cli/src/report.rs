//! Run report and plot-table serialization.
//!
//! Reports are JSON (field order fixed by the struct, numbers in Rust's
//! shortest round-trip form, so equal runs produce equal bytes up to the
//! timestamp). Plot tables are TSV with log-log columns for the
//! fluctuation surface.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use multifract::diagnosis::HealthDecision;
use multifract::features::{FeatureVector, MultifractalFeatures};
use multifract::fluctuation::{FluctuationSurface, SurfaceVariant};
use multifract::mvmd::ModeSet;

use crate::error::CliResult;
use crate::io::write_atomic;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub timestamp_unix_ms: u64,
}

impl Provenance {
    pub fn new(config_hash: String, seed: Option<u64>) -> Self {
        let timestamp_unix_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash,
            seed,
            timestamp_unix_ms,
        }
    }
}

/// Fluctuation surface as plain rows (one per q value).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurfaceTable {
    pub variant: SurfaceVariant,
    pub scales: Vec<usize>,
    pub q_values: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl From<&FluctuationSurface> for SurfaceTable {
    fn from(surface: &FluctuationSurface) -> Self {
        let values = (0..surface.q_grid.len())
            .map(|qi| surface.values.row(qi).to_vec())
            .collect();
        Self {
            variant: surface.variant,
            scales: surface.scales.clone(),
            q_values: surface.q_grid.values().to_vec(),
            values,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeSummary {
    pub k: usize,
    pub omegas: Vec<f64>,
    pub hurst_per_mode: Vec<f64>,
    pub k1: usize,
    pub residual_energy_ratio: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl ModeSummary {
    pub fn from_modes(modes: &ModeSet, k1: usize) -> Self {
        Self {
            k: modes.k(),
            omegas: modes.omegas().to_vec(),
            hurst_per_mode: modes.hurst_per_mode().to_vec(),
            k1,
            residual_energy_ratio: modes.residual_energy_ratio(),
            converged: modes.converged(),
            iterations: modes.iterations(),
        }
    }
}

/// Everything one pipeline run produces.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub provenance: Provenance,
    pub surface: SurfaceTable,
    pub features: MultifractalFeatures,
    pub feature_vector: FeatureVector,
    pub modes: Option<ModeSummary>,
    pub decision: Option<HealthDecision>,
}

impl RunReport {
    pub fn to_json(&self) -> CliResult<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }
}

fn tsv(columns: &[(&str, Vec<String>)]) -> String {
    let mut out = String::new();
    out.push_str(&columns.iter().map(|(h, _)| *h).collect::<Vec<_>>().join("\t"));
    out.push('\n');
    let rows = columns.first().map_or(0, |(_, c)| c.len());
    for r in 0..rows {
        let row: Vec<&str> = columns.iter().map(|(_, c)| c[r].as_str()).collect();
        out.push_str(&row.join("\t"));
        out.push('\n');
    }
    out
}

fn fmt_col(values: impl IntoIterator<Item = f64>) -> Vec<String> {
    values.into_iter().map(|v| format!("{v}")).collect()
}

/// `fluctuation.tsv`: scale, log10(scale), then log10(F) per q column.
pub fn write_surface_tsv(path: &Path, table: &SurfaceTable) -> CliResult<()> {
    let mut columns: Vec<(String, Vec<String>)> = Vec::new();
    columns.push(("scale".into(), table.scales.iter().map(|s| s.to_string()).collect()));
    columns.push((
        "log10_scale".into(),
        fmt_col(table.scales.iter().map(|&s| (s as f64).log10())),
    ));
    for (qi, &q) in table.q_values.iter().enumerate() {
        columns.push((
            format!("log10_F[q={q}]"),
            fmt_col(table.values[qi].iter().map(|&f| f.log10())),
        ));
    }
    let borrowed: Vec<(&str, Vec<String>)> =
        columns.iter().map(|(h, c)| (h.as_str(), c.clone())).collect();
    write_atomic(path, tsv(&borrowed).as_bytes())
}

/// `hurst.tsv`, `tau.tsv`, `spectrum.tsv`: the per-q feature curves.
pub fn write_feature_tsvs(dir: &Path, features: &MultifractalFeatures) -> CliResult<()> {
    let q = fmt_col(features.q_values.iter().copied());
    write_atomic(
        &dir.join("hurst.tsv"),
        tsv(&[
            ("q", q.clone()),
            ("H_q", fmt_col(features.h_q.iter().copied())),
            ("r_squared", fmt_col(features.h_fit_r2.iter().copied())),
        ])
        .as_bytes(),
    )?;
    write_atomic(
        &dir.join("tau.tsv"),
        tsv(&[("q", q.clone()), ("tau_q", fmt_col(features.tau_q.iter().copied()))]).as_bytes(),
    )?;
    write_atomic(
        &dir.join("spectrum.tsv"),
        tsv(&[
            ("q", q),
            ("alpha", fmt_col(features.alpha_q.iter().copied())),
            ("f_alpha", fmt_col(features.f_alpha.iter().copied())),
        ])
        .as_bytes(),
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_json_round_trips_numeric_tables() {
        let report = RunReport {
            provenance: Provenance::new("abc".into(), Some(5)),
            surface: SurfaceTable {
                variant: SurfaceVariant::MahalanobisFm,
                scales: vec![16, 32],
                q_values: vec![-1.0, 2.0],
                values: vec![vec![0.123_456_789_012_345_68, 2.5], vec![1e-17, 3.7e200]],
            },
            features: MultifractalFeatures {
                q_values: vec![-1.0, 0.0, 2.0],
                h_q: vec![0.7, 0.65, 0.6],
                h_fit_r2: vec![0.999, 0.998, 0.997],
                tau_q: vec![-1.7, -1.0, 0.2],
                alpha_q: vec![0.71, 0.66, 0.61],
                f_alpha: vec![0.99, 1.0, 0.98],
                low_quality: vec![false, false, false],
                monotonicity_violations: vec![],
            },
            feature_vector: FeatureVector {
                delta_h: 0.1,
                spectrum_width: 0.2,
                spectrum_skew: 0.0,
                alpha_peak: 0.66,
                h2: 0.6,
                tau_curvature: -0.01,
            },
            modes: None,
            decision: None,
        };
        let text = report.to_json().unwrap();
        let back: RunReport = serde_json::from_str(&text).unwrap();
        for (a, b) in report
            .surface
            .values
            .iter()
            .flatten()
            .zip(back.surface.values.iter().flatten())
        {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        // Identical reports serialize to identical bytes.
        assert_eq!(text, back.to_json().unwrap());
    }
}

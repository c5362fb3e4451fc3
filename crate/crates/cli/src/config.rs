//! Pipeline configuration: a JSON config file with command-line flag
//! overrides (flags win), plus the semantic config hash recorded in
//! every report.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use multifract::fluctuation::{CovarianceEstimator, CovarianceMode, CovarianceScope, DetrendConfig};
use multifract::mvmd::{MvmdConfig, OmegaInit};
use multifract::signal::{QGrid, ScaleGrid};

use crate::error::{CliError, CliResult};

/// Signal file encodings accepted by `ingest`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    /// Header row of channel labels, one row per sample.
    Csv,
    /// Little-endian 64-bit floats, channel-interleaved.
    Raw64,
}

impl std::str::FromStr for InputFormat {
    type Err = CliError;
    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "raw64" => Ok(Self::Raw64),
            other => Err(CliError::InvalidArgument(format!("unknown format '{other}'"))),
        }
    }
}

/// A channel picked by zero-based index or by header label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ChannelSel {
    Index(usize),
    Label(String),
}

/// Which fluctuation function the pipeline computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Uni,
    Mmfdfa,
    Fm,
}

impl std::str::FromStr for Variant {
    type Err = CliError;
    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "uni" => Ok(Self::Uni),
            "mmfdfa" => Ok(Self::Mmfdfa),
            "fm" => Ok(Self::Fm),
            other => Err(CliError::InvalidArgument(format!("unknown variant '{other}'"))),
        }
    }
}

/// `min:max:count` log-spaced scale specification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleSpec {
    pub min: usize,
    pub max: usize,
    pub count: usize,
}

impl ScaleSpec {
    pub fn build(&self, n: usize) -> CliResult<ScaleGrid> {
        Ok(ScaleGrid::log_spaced(self.min, self.max, self.count, n)?)
    }
}

impl std::str::FromStr for ScaleSpec {
    type Err = CliError;
    fn from_str(s: &str) -> CliResult<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(CliError::InvalidArgument(format!(
                "scales spec '{s}' is not MIN:MAX:COUNT"
            )));
        }
        let parse = |p: &str| {
            p.parse::<usize>()
                .map_err(|_| CliError::InvalidArgument(format!("bad scale component '{p}'")))
        };
        Ok(Self { min: parse(parts[0])?, max: parse(parts[1])?, count: parse(parts[2])? })
    }
}

/// `min:max:step` arithmetic moment-grid specification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QSpec {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl QSpec {
    pub fn build(&self) -> CliResult<QGrid> {
        Ok(QGrid::from_range(self.min, self.max, self.step)?)
    }
}

impl std::str::FromStr for QSpec {
    type Err = CliError;
    fn from_str(s: &str) -> CliResult<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(CliError::InvalidArgument(format!("q spec '{s}' is not MIN:MAX:STEP")));
        }
        let parse = |p: &str| {
            p.parse::<f64>()
                .map_err(|_| CliError::InvalidArgument(format!("bad q component '{p}'")))
        };
        Ok(Self { min: parse(parts[0])?, max: parse(parts[1])?, step: parse(parts[2])? })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovMode {
    Identity,
    Diag,
    Full,
}

impl std::str::FromStr for CovMode {
    type Err = CliError;
    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "identity" => Ok(Self::Identity),
            "diag" => Ok(Self::Diag),
            "full" => Ok(Self::Full),
            other => Err(CliError::InvalidArgument(format!("unknown covariance '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovScope {
    Global,
    PerScale,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CovSpec {
    pub mode: CovMode,
    pub scope: CovScope,
}

impl Default for CovSpec {
    fn default() -> Self {
        Self { mode: CovMode::Full, scope: CovScope::Global }
    }
}

impl CovSpec {
    pub fn to_estimator(self) -> CovarianceEstimator {
        CovarianceEstimator {
            mode: match self.mode {
                CovMode::Identity => CovarianceMode::Identity,
                CovMode::Diag => CovarianceMode::DiagonalVariances,
                CovMode::Full => CovarianceMode::FullSample,
            },
            scope: match self.scope {
                CovScope::Global => CovarianceScope::GlobalDetrended,
                CovScope::PerScale => CovarianceScope::PerScale,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetrendSettings {
    pub order: usize,
    pub mirrored: bool,
}

impl Default for DetrendSettings {
    fn default() -> Self {
        let d = DetrendConfig::default();
        Self { order: d.order, mirrored: d.mirrored }
    }
}

impl DetrendSettings {
    pub fn to_config(self) -> DetrendConfig {
        DetrendConfig { order: self.order, mirrored: self.mirrored }
    }
}

/// Decomposition settings; presence of this block enables MVMD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MvmdSettings {
    pub k: usize,
    pub penalty_alpha: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    /// "uniform", "zero", or a numeric seed for random initialization.
    pub omega_init: String,
    pub dual_step: f64,
    /// Manual override of the structured/noise cutoff.
    pub k1_override: Option<usize>,
}

impl Default for MvmdSettings {
    fn default() -> Self {
        let d = MvmdConfig::default();
        Self {
            k: d.k_modes,
            penalty_alpha: d.penalty_alpha,
            tolerance: d.tolerance,
            max_iterations: d.max_iterations,
            omega_init: "uniform".into(),
            dual_step: d.dual_step,
            k1_override: None,
        }
    }
}

impl MvmdSettings {
    pub fn to_config(&self) -> CliResult<MvmdConfig> {
        let omega_init = match self.omega_init.as_str() {
            "uniform" => OmegaInit::UniformSpread,
            "zero" => OmegaInit::Zero,
            other => match other.parse::<u64>() {
                Ok(seed) => OmegaInit::Random(seed),
                Err(_) => {
                    return Err(CliError::InvalidArgument(format!(
                        "omega_init '{other}' is not 'uniform', 'zero', or a seed"
                    )))
                }
            },
        };
        Ok(MvmdConfig {
            k_modes: self.k,
            penalty_alpha: self.penalty_alpha,
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
            omega_init,
            dual_step: self.dual_step,
        })
    }
}

/// Full pipeline configuration. Serialized form is the config file
/// schema; the CLI overlays flag values on top of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub input_path: PathBuf,
    pub input_format: InputFormat,
    /// Channel count for raw64 inputs (labels become ch1..chM).
    #[serde(default)]
    pub raw_channels: Option<usize>,
    #[serde(default = "default_rate")]
    pub sample_rate_hz: f64,
    /// Channels entering the analysis, in order; absent means all.
    #[serde(default)]
    pub channels: Option<Vec<ChannelSel>>,
    /// Present = run MVMD denoising before the fluctuation analysis.
    #[serde(default)]
    pub mvmd: Option<MvmdSettings>,
    #[serde(default)]
    pub detrend: DetrendSettings,
    #[serde(default)]
    pub scales: Option<ScaleSpec>,
    #[serde(default)]
    pub q_grid: Option<QSpec>,
    #[serde(default)]
    pub covariance: CovSpec,
    #[serde(default = "default_variant")]
    pub variant: Variant,
    /// Scale sub-interval for the Hurst fit.
    #[serde(default)]
    pub fit_range: Option<(usize, usize)>,
    /// Classify against this calibrated model.
    #[serde(default)]
    pub model_path: Option<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_rate() -> f64 {
    1.0
}

fn default_variant() -> Variant {
    Variant::Fm
}

impl PipelineConfig {
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Validates cross-field constraints that serde cannot express.
    pub fn validate(&self) -> CliResult<()> {
        if self.input_format == InputFormat::Raw64 && self.raw_channels.is_none() {
            return Err(CliError::InvalidArgument(
                "raw64 input needs raw_channels in the config".into(),
            ));
        }
        if self.variant == Variant::Uni {
            let single = match &self.channels {
                Some(sel) => sel.len() == 1,
                None => self.raw_channels == Some(1),
            };
            if !single {
                return Err(CliError::InvalidArgument(
                    "the univariate variant requires exactly one selected channel".into(),
                ));
            }
        }
        Ok(())
    }

    /// Hash of every semantically meaningful field (the output directory
    /// does not change results and is excluded).
    pub fn semantic_hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        hex::encode(digest)
    }
}

/// Parses a `--channels` flag: comma-separated indices or labels.
pub fn parse_channel_list(s: &str) -> CliResult<Vec<ChannelSel>> {
    s.split(',')
        .map(|part| {
            let part = part.trim();
            if part.is_empty() {
                return Err(CliError::InvalidArgument("empty channel selector".into()));
            }
            Ok(match part.parse::<usize>() {
                Ok(idx) => ChannelSel::Index(idx),
                Err(_) => ChannelSel::Label(part.to_string()),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_config() -> PipelineConfig {
        PipelineConfig {
            input_path: "in.csv".into(),
            input_format: InputFormat::Csv,
            raw_channels: None,
            sample_rate_hz: 1000.0,
            channels: None,
            mvmd: None,
            detrend: DetrendSettings::default(),
            scales: None,
            q_grid: None,
            covariance: CovSpec::default(),
            variant: Variant::Fm,
            fit_range: None,
            model_path: None,
            output_dir: "out".into(),
            seed: Some(7),
        }
    }

    #[test]
    fn specs_parse_from_flag_syntax() {
        let s: ScaleSpec = "16:4096:20".parse().unwrap();
        assert_eq!(s, ScaleSpec { min: 16, max: 4096, count: 20 });
        let q: QSpec = "-5:5:0.5".parse().unwrap();
        assert_eq!(q.min, -5.0);
        assert!("16:20".parse::<ScaleSpec>().is_err());
        let sel = parse_channel_list("0,AN4,2").unwrap();
        assert_eq!(
            sel,
            vec![
                ChannelSel::Index(0),
                ChannelSel::Label("AN4".into()),
                ChannelSel::Index(2)
            ]
        );
    }

    #[test]
    fn hash_tracks_semantic_fields_only() {
        let a = base_config();
        let mut b = a.clone();
        b.output_dir = "elsewhere".into();
        assert_eq!(a.semantic_hash(), b.semantic_hash());
        let mut c = a.clone();
        c.variant = Variant::Mmfdfa;
        assert_ne!(a.semantic_hash(), c.semantic_hash());
        let mut d = a.clone();
        d.seed = Some(8);
        assert_ne!(a.semantic_hash(), d.semantic_hash());
    }

    #[test]
    fn univariate_needs_one_channel() {
        let mut cfg = base_config();
        cfg.variant = Variant::Uni;
        assert!(cfg.validate().is_err());
        cfg.channels = Some(vec![ChannelSel::Index(0)]);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn config_round_trips_through_json() {
        let mut cfg = base_config();
        cfg.mvmd = Some(MvmdSettings { k1_override: Some(3), ..Default::default() });
        cfg.scales = Some(ScaleSpec { min: 16, max: 1024, count: 12 });
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: PipelineConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }
}

//! Synthetic dataset emission: generator output plus a sidecar metadata
//! file recording the exact parameters and seed.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use multifract::signal::{
    gen_cascade, gen_fgn, gen_tone_mix, gen_white_noise, CascadeLayout, CascadeParams,
    MultichannelSeries, ToneMixParams,
};

use crate::config::InputFormat;
use crate::error::{CliError, CliResult};
use crate::io::{emit_csv, emit_raw64, Sidecar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthKind {
    White,
    Fgn,
    Cascade,
    Tones,
}

impl std::str::FromStr for SynthKind {
    type Err = CliError;
    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "white" => Ok(Self::White),
            "fgn" => Ok(Self::Fgn),
            "cascade" => Ok(Self::Cascade),
            "tones" => Ok(Self::Tones),
            other => Err(CliError::InvalidArgument(format!("unknown synth kind '{other}'"))),
        }
    }
}

/// Generator parameters as they arrive from flags.
#[derive(Debug, Clone)]
pub struct SynthParams {
    pub kind: SynthKind,
    pub n: usize,
    pub m: usize,
    pub seed: u64,
    pub hurst: f64,
    pub cross_corr: f64,
    pub weights: (f64, f64),
    pub modulated: bool,
    pub deterministic_cascade: bool,
    pub freqs_hz: Vec<f64>,
    pub sample_rate_hz: f64,
    pub noise_std: f64,
}

impl SynthParams {
    fn generate(&self) -> CliResult<(MultichannelSeries, serde_json::Value)> {
        match self.kind {
            SynthKind::White => {
                let s = gen_white_noise(self.n, self.m, self.seed)?;
                Ok((s, json!({ "n": self.n, "m": self.m })))
            }
            SynthKind::Fgn => {
                let s = gen_fgn(self.n, self.m, self.hurst, self.cross_corr, self.seed)?;
                Ok((
                    s,
                    json!({
                        "n": self.n, "m": self.m,
                        "hurst": self.hurst, "cross_corr": self.cross_corr
                    }),
                ))
            }
            SynthKind::Cascade => {
                if !self.n.is_power_of_two() {
                    return Err(CliError::InvalidArgument(format!(
                        "cascade length {} must be a power of two",
                        self.n
                    )));
                }
                let params = CascadeParams {
                    levels: self.n.trailing_zeros(),
                    weights: self.weights,
                    cross_corr: self.cross_corr,
                    modulated: self.modulated,
                    layout: if self.deterministic_cascade {
                        CascadeLayout::Deterministic
                    } else {
                        CascadeLayout::RandomPermutation
                    },
                };
                let s = gen_cascade(&params, self.m, self.seed)?;
                Ok((
                    s,
                    json!({
                        "n": self.n, "m": self.m,
                        "weights": [self.weights.0, self.weights.1],
                        "cross_corr": self.cross_corr,
                        "modulated": self.modulated,
                        "deterministic": self.deterministic_cascade
                    }),
                ))
            }
            SynthKind::Tones => {
                let params = ToneMixParams {
                    n: self.n,
                    sample_rate_hz: self.sample_rate_hz,
                    freqs_hz: self.freqs_hz.clone(),
                    noise_std: self.noise_std,
                };
                let s = gen_tone_mix(&params, self.m, self.seed)?;
                Ok((
                    s,
                    json!({
                        "n": self.n, "m": self.m,
                        "freqs_hz": self.freqs_hz,
                        "sample_rate_hz": self.sample_rate_hz,
                        "noise_std": self.noise_std
                    }),
                ))
            }
        }
    }
}

/// Generates a dataset, writes it in the requested format, and drops a
/// sidecar with the exact parameters.
pub fn emit_synthetic(
    params: &SynthParams,
    path: &Path,
    format: InputFormat,
    hex_floats: bool,
) -> CliResult<MultichannelSeries> {
    let (series, param_json) = params.generate()?;
    match format {
        InputFormat::Csv => emit_csv(path, &series, hex_floats)?,
        InputFormat::Raw64 => emit_raw64(path, &series)?,
    }
    let sidecar = Sidecar {
        kind: format!("{:?}", params.kind).to_lowercase(),
        params: param_json,
        seed: params.seed,
        format,
        sample_rate_hz: series.sample_rate_hz(),
        channels: series.n_channels(),
        samples: series.n_samples(),
    };
    sidecar.write(path)?;
    Ok(series)
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            kind: SynthKind::White,
            n: 1 << 14,
            m: 1,
            seed: 0,
            hurst: 0.7,
            cross_corr: 0.0,
            weights: (0.6, 0.4),
            modulated: false,
            deterministic_cascade: false,
            freqs_hz: vec![50.0, 120.0],
            sample_rate_hz: 1000.0,
            noise_std: 0.0,
        }
    }
}

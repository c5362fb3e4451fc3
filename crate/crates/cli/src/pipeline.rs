//! Pipeline orchestration: ingest, optional MVMD denoising, fluctuation
//! analysis, feature extraction, and optional classification, with all
//! outputs written to the run's output directory.

use std::path::{Path, PathBuf};

use serde_json::json;

use multifract::diagnosis::{classify, DiagnosisModel};
use multifract::features::{derive_spectrum, fit_hurst, summarize_features};
use multifract::fluctuation::{
    cumulative_profile, fluctuation_fm_auto, fluctuation_mmfdfa, fluctuation_univariate,
    SegmentedFluctuations,
};
use multifract::mvmd::{
    mvmd_decompose, reconstruct_signal, score_modes_hurst, select_k1, HurstScoringConfig, ModeSet,
};
use multifract::signal::{MultichannelSeries, QGrid, ScaleGrid};

use crate::config::{PipelineConfig, Variant};
use crate::error::{CliError, CliResult};
use crate::io::{emit_raw64, ingest, write_atomic};
use crate::report::{ModeSummary, Provenance, RunReport, SurfaceTable};
use crate::report::{write_feature_tsvs, write_surface_tsv};

fn stage<T, E: Into<CliError>>(name: &'static str, result: Result<T, E>) -> CliResult<T> {
    result.map_err(|e| {
        let inner: CliError = e.into();
        CliError::Stage { stage: name, message: inner.to_string() }
    })
}

fn scale_grid_for(cfg: &PipelineConfig, n: usize) -> CliResult<ScaleGrid> {
    match &cfg.scales {
        Some(spec) => spec.build(n),
        None => Ok(ScaleGrid::default_for_len(n)?),
    }
}

fn q_grid_for(cfg: &PipelineConfig) -> CliResult<QGrid> {
    match &cfg.q_grid {
        Some(spec) => spec.build(),
        None => Ok(QGrid::default()),
    }
}

/// Runs MVMD, scores the modes, picks (or accepts) the cutoff, and
/// returns the fault-relevant reconstruction with the mode summary.
fn denoise(
    cfg: &PipelineConfig,
    series: &MultichannelSeries,
) -> CliResult<(MultichannelSeries, ModeSet, usize)> {
    let settings = cfg.mvmd.as_ref().expect("caller checked");
    let mut modes = mvmd_decompose(series, &settings.to_config()?)?;
    let scoring = HurstScoringConfig {
        detrend: cfg.detrend.to_config(),
        scales: match &cfg.scales {
            Some(spec) => Some(spec.build(series.n_samples())?),
            None => None,
        },
        covariance: cfg.covariance.to_estimator(),
    };
    score_modes_hurst(&mut modes, &scoring)?;
    let k1 = match settings.k1_override {
        Some(k1) => k1,
        None if modes.k() == 1 => 1,
        None => select_k1(&modes)?,
    };
    modes.set_k1(k1)?;
    let recon = reconstruct_signal(&modes, k1)?;
    Ok((recon, modes, k1))
}

/// The analysis stages downstream of ingestion/denoising.
pub fn analyze_series(
    cfg: &PipelineConfig,
    series: &MultichannelSeries,
) -> CliResult<(SurfaceTable, multifract::features::MultifractalFeatures)> {
    let n = series.n_samples();
    let scale_grid = stage("scale-grid", scale_grid_for(cfg, n))?;
    let q_grid = stage("q-grid", q_grid_for(cfg))?;
    let profile = cumulative_profile(series);
    let segments = stage(
        "segment-detrend",
        SegmentedFluctuations::compute(&profile, &scale_grid, &cfg.detrend.to_config()),
    )?;
    let surface = stage(
        "fluctuation",
        match cfg.variant {
            Variant::Uni => fluctuation_univariate(&segments, &q_grid),
            Variant::Mmfdfa => fluctuation_mmfdfa(&segments, &q_grid),
            Variant::Fm => {
                fluctuation_fm_auto(&segments, &cfg.covariance.to_estimator(), &q_grid)
            }
        },
    )?;
    let fit = stage("hurst-fit", fit_hurst(&surface, cfg.fit_range))?;
    let features = stage("spectrum", derive_spectrum(&fit))?;
    Ok((SurfaceTable::from(&surface), features))
}

fn execute(cfg: &PipelineConfig) -> CliResult<RunReport> {
    let series = stage(
        "ingest",
        ingest(
            &cfg.input_path,
            cfg.input_format,
            cfg.raw_channels,
            cfg.sample_rate_hz,
            cfg.channels.as_deref(),
        ),
    )?;

    let (series, mode_summary) = if cfg.mvmd.is_some() {
        let (recon, modes, k1) = stage("mvmd", denoise(cfg, &series))?;
        (recon, Some(ModeSummary::from_modes(&modes, k1)))
    } else {
        (series, None)
    };

    let (surface, features) = analyze_series(cfg, &series)?;
    let feature_vector = summarize_features(&features);

    let decision = match &cfg.model_path {
        Some(path) => {
            let model = stage("load-model", load_model(path))?;
            Some(classify(&feature_vector, &model))
        }
        None => None,
    };

    Ok(RunReport {
        provenance: Provenance::new(cfg.semantic_hash(), cfg.seed),
        surface,
        features,
        feature_vector,
        modes: mode_summary,
        decision,
    })
}

/// Runs the full pipeline and writes `report.json` plus the plot tables
/// into the output directory. On failure a `failure.json` marker with
/// the failed stage is flushed before the error propagates.
pub fn run_pipeline(cfg: &PipelineConfig) -> CliResult<RunReport> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    match execute(cfg) {
        Ok(report) => {
            report.write(&cfg.output_dir.join("report.json"))?;
            write_surface_tsv(&cfg.output_dir.join("fluctuation.tsv"), &report.surface)?;
            write_feature_tsvs(&cfg.output_dir, &report.features)?;
            Ok(report)
        }
        Err(err) => {
            let marker = json!({
                "failed": true,
                "stage": match &err {
                    CliError::Stage { stage, .. } => *stage,
                    _ => "setup",
                },
                "error": err.to_string(),
            });
            let _ = write_atomic(
                &cfg.output_dir.join("failure.json"),
                serde_json::to_string_pretty(&marker)
                    .unwrap_or_default()
                    .as_bytes(),
            );
            Err(err)
        }
    }
}

/// Decomposition-only run: writes `decompose.json` and, when requested,
/// one raw64 file per mode plus the reconstruction.
pub fn run_decompose(cfg: &PipelineConfig, emit_modes: bool) -> CliResult<ModeSummary> {
    if cfg.mvmd.is_none() {
        return Err(CliError::InvalidArgument(
            "decompose needs MVMD settings (pass --k or a config with an mvmd block)".into(),
        ));
    }
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let series = stage(
        "ingest",
        ingest(
            &cfg.input_path,
            cfg.input_format,
            cfg.raw_channels,
            cfg.sample_rate_hz,
            cfg.channels.as_deref(),
        ),
    )?;
    let (recon, modes, k1) = stage("mvmd", denoise(cfg, &series))?;
    let summary = ModeSummary::from_modes(&modes, k1);
    write_atomic(
        &cfg.output_dir.join("decompose.json"),
        serde_json::to_string_pretty(&summary)?.as_bytes(),
    )?;
    if emit_modes {
        for k in 0..modes.k() {
            let mode = modes.mode_series(k)?;
            emit_raw64(&cfg.output_dir.join(format!("mode_{:02}.f64", k + 1)), &mode)?;
        }
        emit_raw64(&cfg.output_dir.join("reconstructed.f64"), &recon)?;
    }
    Ok(summary)
}

pub fn load_model(path: &Path) -> CliResult<DiagnosisModel> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn save_model(path: &Path, model: &DiagnosisModel) -> CliResult<()> {
    write_atomic(path, serde_json::to_string_pretty(model)?.as_bytes())
}

/// Loads run reports and calibrates a model from their feature vectors.
pub fn run_calibrate(
    healthy_reports: &[PathBuf],
    faulty_reports: &[PathBuf],
    policy: multifract::diagnosis::MarginPolicy,
    out: &Path,
) -> CliResult<DiagnosisModel> {
    let load = |paths: &[PathBuf]| -> CliResult<Vec<multifract::features::FeatureVector>> {
        paths
            .iter()
            .map(|p| RunReport::from_file(p).map(|r| r.feature_vector))
            .collect()
    };
    let healthy = load(healthy_reports)?;
    let faulty = load(faulty_reports)?;
    let model = multifract::diagnosis::calibrate_threshold(
        &healthy,
        if faulty.is_empty() { None } else { Some(&faulty) },
        policy,
    )?;
    save_model(out, &model)?;
    Ok(model)
}

/// Classifies the feature vector of an existing report against a model.
pub fn run_classify(
    model_path: &Path,
    report_path: &Path,
) -> CliResult<multifract::diagnosis::HealthDecision> {
    let model = load_model(model_path)?;
    let report = RunReport::from_file(report_path)?;
    Ok(classify(&report.feature_vector, &model))
}

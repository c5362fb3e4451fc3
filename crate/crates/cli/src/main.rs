//! Batch CLI for multivariate multifractal analysis of multichannel
//! vibration recordings.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use multifract::diagnosis::MarginPolicy;
use multifract_cli::config::{
    parse_channel_list, CovSpec, DetrendSettings, InputFormat, PipelineConfig, QSpec, ScaleSpec,
    Variant,
};
use multifract_cli::error::{CliError, CliResult};
use multifract_cli::pipeline::{run_calibrate, run_classify, run_decompose, run_pipeline};
use multifract_cli::synth::{emit_synthetic, SynthKind, SynthParams};

#[derive(Parser)]
#[command(name = "multifract", version, about = "Multivariate multifractal analysis toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full analysis pipeline on one recording.
    Analyze(AnalyzeArgs),
    /// Decompose a recording into narrowband modes and score them.
    Decompose(DecomposeArgs),
    /// Calibrate a health model from analysis reports.
    Calibrate(CalibrateArgs),
    /// Classify a report's features against a calibrated model.
    Classify(ClassifyArgs),
    /// Emit a synthetic benchmark dataset with a metadata sidecar.
    Synth(SynthArgs),
}

/// Flags shared by analyze/decompose; every flag overrides the config
/// file value.
#[derive(Args)]
struct CommonArgs {
    /// JSON config file; flags win over its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    /// csv | raw64
    #[arg(long)]
    format: Option<String>,
    /// Comma-separated channel indices or labels.
    #[arg(long)]
    channels: Option<String>,
    /// Channel count for raw64 inputs.
    #[arg(long)]
    raw_channels: Option<usize>,
    /// Sampling rate in Hz.
    #[arg(long)]
    rate: Option<f64>,
    /// uni | mmfdfa | fm
    #[arg(long)]
    variant: Option<String>,
    /// Mode count; enables MVMD denoising.
    #[arg(long)]
    k: Option<usize>,
    /// Manual structured/noise cutoff override.
    #[arg(long)]
    k1: Option<usize>,
    /// MIN:MAX:COUNT log-spaced scales.
    #[arg(long)]
    scales: Option<String>,
    /// MIN:MAX:STEP moment grid.
    #[arg(long)]
    q: Option<String>,
    #[arg(long)]
    detrend_order: Option<usize>,
    /// identity | diag | full
    #[arg(long)]
    cov: Option<String>,
    /// MIN:MAX scale sub-interval for the Hurst fit.
    #[arg(long)]
    fit_range: Option<String>,
    /// Classify the result against this model.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct DecomposeArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Also write each mode (and the reconstruction) as raw64 files.
    #[arg(long)]
    emit_modes: bool,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Comma-separated healthy report paths.
    #[arg(long)]
    healthy: String,
    /// Comma-separated faulty report paths (required for midpoint).
    #[arg(long)]
    faulty: Option<String>,
    /// max-healthy | midpoint
    #[arg(long, default_value = "max-healthy")]
    policy: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    report: PathBuf,
    /// Write the decision JSON here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// white | fgn | cascade | tones
    #[arg(long)]
    kind: String,
    #[arg(long, default_value_t = 16384)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    m: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.7)]
    hurst: f64,
    #[arg(long, default_value_t = 0.0)]
    cross_corr: f64,
    /// Cascade weights as "W1,W2".
    #[arg(long, default_value = "0.6,0.4")]
    weights: String,
    /// Multiply cascade samples by independent Gaussians.
    #[arg(long)]
    modulated: bool,
    /// Use the fixed textbook cascade layout instead of a seeded one.
    #[arg(long)]
    deterministic: bool,
    /// Tone frequencies in Hz, comma-separated.
    #[arg(long, default_value = "50,120")]
    freqs: String,
    #[arg(long, default_value_t = 1000.0)]
    rate: f64,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// csv | raw64
    #[arg(long, default_value = "raw64")]
    format: String,
    /// Encode CSV cells as exact hex floats.
    #[arg(long)]
    hex_floats: bool,
    #[arg(long)]
    out: PathBuf,
}

fn merge_config(args: &CommonArgs) -> CliResult<PipelineConfig> {
    let mut cfg = match &args.config {
        Some(path) => PipelineConfig::from_file(path)?,
        None => PipelineConfig {
            input_path: PathBuf::new(),
            input_format: InputFormat::Csv,
            raw_channels: None,
            sample_rate_hz: 1.0,
            channels: None,
            mvmd: None,
            detrend: DetrendSettings::default(),
            scales: None,
            q_grid: None,
            covariance: CovSpec::default(),
            variant: Variant::Fm,
            fit_range: None,
            model_path: None,
            output_dir: PathBuf::new(),
            seed: None,
        },
    };
    if let Some(input) = &args.input {
        cfg.input_path = input.clone();
    }
    if let Some(format) = &args.format {
        cfg.input_format = format.parse()?;
    }
    if let Some(channels) = &args.channels {
        cfg.channels = Some(parse_channel_list(channels)?);
    }
    if let Some(raw_channels) = args.raw_channels {
        cfg.raw_channels = Some(raw_channels);
    }
    if let Some(rate) = args.rate {
        cfg.sample_rate_hz = rate;
    }
    if let Some(variant) = &args.variant {
        cfg.variant = variant.parse()?;
    }
    if let Some(k) = args.k {
        let mut settings = cfg.mvmd.unwrap_or_default();
        settings.k = k;
        cfg.mvmd = Some(settings);
    }
    if let Some(k1) = args.k1 {
        let mut settings = cfg.mvmd.unwrap_or_default();
        settings.k1_override = Some(k1);
        cfg.mvmd = Some(settings);
    }
    if let Some(scales) = &args.scales {
        cfg.scales = Some(scales.parse::<ScaleSpec>()?);
    }
    if let Some(q) = &args.q {
        cfg.q_grid = Some(q.parse::<QSpec>()?);
    }
    if let Some(order) = args.detrend_order {
        cfg.detrend.order = order;
    }
    if let Some(cov) = &args.cov {
        cfg.covariance.mode = cov.parse()?;
    }
    if let Some(range) = &args.fit_range {
        let parts: Vec<&str> = range.split(':').collect();
        if parts.len() != 2 {
            return Err(CliError::InvalidArgument(format!(
                "fit range '{range}' is not MIN:MAX"
            )));
        }
        let lo = parts[0]
            .parse()
            .map_err(|_| CliError::InvalidArgument(format!("bad fit range '{range}'")))?;
        let hi = parts[1]
            .parse()
            .map_err(|_| CliError::InvalidArgument(format!("bad fit range '{range}'")))?;
        cfg.fit_range = Some((lo, hi));
    }
    if let Some(model) = &args.model {
        cfg.model_path = Some(model.clone());
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = args.seed {
        cfg.seed = Some(seed);
    }
    if cfg.input_path.as_os_str().is_empty() {
        return Err(CliError::InvalidArgument("no input path (use --input or --config)".into()));
    }
    if cfg.output_dir.as_os_str().is_empty() {
        return Err(CliError::InvalidArgument("no output directory (use --out)".into()));
    }
    Ok(cfg)
}

fn parse_paths(list: &str) -> Vec<PathBuf> {
    list.split(',').map(|s| PathBuf::from(s.trim())).filter(|p| !p.as_os_str().is_empty()).collect()
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Analyze(args) => {
            let cfg = merge_config(&args.common)?;
            let report = run_pipeline(&cfg)?;
            println!(
                "analyze: wrote {} (h2 = {:.4}, width = {:.4}{})",
                cfg.output_dir.join("report.json").display(),
                report.feature_vector.h2,
                report.feature_vector.spectrum_width,
                match &report.decision {
                    Some(d) => format!(", label = {:?}", d.label),
                    None => String::new(),
                }
            );
            Ok(())
        }
        Command::Decompose(args) => {
            let cfg = merge_config(&args.common)?;
            let summary = run_decompose(&cfg, args.emit_modes)?;
            println!(
                "decompose: K = {}, K1 = {}, omegas = {:?}",
                summary.k, summary.k1, summary.omegas
            );
            Ok(())
        }
        Command::Calibrate(args) => {
            let policy = match args.policy.as_str() {
                "max-healthy" => MarginPolicy::MaxHealthy,
                "midpoint" => MarginPolicy::Midpoint,
                other => {
                    return Err(CliError::InvalidArgument(format!("unknown policy '{other}'")))
                }
            };
            let healthy = parse_paths(&args.healthy);
            let faulty = args.faulty.as_deref().map(parse_paths).unwrap_or_default();
            let model = run_calibrate(&healthy, &faulty, policy, &args.out)?;
            println!(
                "calibrate: {} references, threshold {:.6}, wrote {}",
                healthy.len(),
                model.threshold(),
                args.out.display()
            );
            Ok(())
        }
        Command::Classify(args) => {
            let decision = run_classify(&args.model, &args.report)?;
            let text = serde_json::to_string_pretty(&decision)?;
            println!("{text}");
            if let Some(out) = &args.out {
                multifract_cli::io::write_atomic(out, text.as_bytes())?;
            }
            Ok(())
        }
        Command::Synth(args) => {
            let kind: SynthKind = args.kind.parse()?;
            let weights = {
                let parts: Vec<&str> = args.weights.split(',').collect();
                if parts.len() != 2 {
                    return Err(CliError::InvalidArgument(format!(
                        "weights '{}' is not W1,W2",
                        args.weights
                    )));
                }
                let w = |s: &str| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| CliError::InvalidArgument(format!("bad weight '{s}'")))
                };
                (w(parts[0])?, w(parts[1])?)
            };
            let freqs: Result<Vec<f64>, _> = args
                .freqs
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| CliError::InvalidArgument(format!("bad frequency '{s}'")))
                })
                .collect();
            let params = SynthParams {
                kind,
                n: args.n,
                m: args.m,
                seed: args.seed,
                hurst: args.hurst,
                cross_corr: args.cross_corr,
                weights,
                modulated: args.modulated,
                deterministic_cascade: args.deterministic,
                freqs_hz: freqs?,
                sample_rate_hz: args.rate,
                noise_std: args.noise,
            };
            let format: InputFormat = args.format.parse()?;
            let series = emit_synthetic(&params, &args.out, format, args.hex_floats)?;
            println!(
                "synth: wrote {} ({} samples x {} channels)",
                args.out.display(),
                series.n_samples(),
                series.n_channels()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}

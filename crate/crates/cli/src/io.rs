//! Signal file ingestion and emission.
//!
//! Two encodings: CSV with a header row of channel labels (decimal or
//! hex-float cells, locale-independent), and raw little-endian 64-bit
//! floats interleaved by channel. All writes go through a temp file and
//! an atomic rename.

use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use multifract::signal::MultichannelSeries;

use crate::config::{ChannelSel, InputFormat};
use crate::error::{CliError, CliResult};

/// Writes bytes atomically: temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let tmp = path.with_extension("tmp.partial");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Exact hex encoding of a finite f64 as integer mantissa times a power
/// of two, e.g. `0x1999999999999ap-56`.
pub fn format_hex_f64(v: f64) -> String {
    if v == 0.0 {
        return if v.is_sign_negative() { "-0x0p+0".into() } else { "0x0p+0".into() };
    }
    let bits = v.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let exp_field = ((bits >> 52) & 0x7ff) as i64;
    let frac = bits & ((1u64 << 52) - 1);
    let (mantissa, exp) = if exp_field == 0 {
        (frac, -1074i64)
    } else {
        ((1u64 << 52) | frac, exp_field - 1075)
    };
    format!("{sign}0x{mantissa:x}p{exp:+}")
}

/// Exact power of two for exponents in the f64 range, built from bits
/// (`powi` overflows internally for deeply subnormal results).
fn pow2(e: i64) -> f64 {
    if e >= -1022 {
        f64::from_bits(((e + 1023) as u64) << 52)
    } else {
        f64::from_bits(1u64 << (e + 1074))
    }
}

/// Parses either the hex encoding above or ordinary decimal.
pub fn parse_float(s: &str) -> Option<f64> {
    let neg = s.starts_with('-');
    let body = s.strip_prefix('-').unwrap_or(s);
    if let Some(hex) = body.strip_prefix("0x") {
        let (m, e) = hex.split_once('p')?;
        let mantissa = u64::from_str_radix(m, 16).ok()?;
        let exp: i64 = e.parse().ok()?;
        if !(-1074..=1023).contains(&exp) {
            return None;
        }
        let value = mantissa as f64 * pow2(exp);
        Some(if neg { -value } else { value })
    } else {
        s.parse::<f64>().ok()
    }
}

/// Reads a signal file and applies the channel selection.
pub fn ingest(
    path: &Path,
    format: InputFormat,
    raw_channels: Option<usize>,
    sample_rate_hz: f64,
    selection: Option<&[ChannelSel]>,
) -> CliResult<MultichannelSeries> {
    let series = match format {
        InputFormat::Csv => ingest_csv(path, sample_rate_hz)?,
        InputFormat::Raw64 => {
            let channels = raw_channels.ok_or_else(|| {
                CliError::InvalidArgument("raw64 input needs a channel count".into())
            })?;
            ingest_raw64(path, channels, sample_rate_hz)?
        }
    };
    match selection {
        None => Ok(series),
        Some(sel) => {
            let indices = resolve_selection(series.channel_labels(), sel)?;
            Ok(series.select_channels(&indices)?)
        }
    }
}

fn resolve_selection(labels: &[String], selection: &[ChannelSel]) -> CliResult<Vec<usize>> {
    selection
        .iter()
        .map(|sel| match sel {
            ChannelSel::Index(i) => {
                if *i < labels.len() {
                    Ok(*i)
                } else {
                    Err(CliError::ChannelNotFound(format!("index {i}")))
                }
            }
            ChannelSel::Label(name) => labels
                .iter()
                .position(|l| l == name)
                .ok_or_else(|| CliError::ChannelNotFound(name.clone())),
        })
        .collect()
}

fn ingest_csv(path: &Path, sample_rate_hz: f64) -> CliResult<MultichannelSeries> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let labels: Vec<String> =
        reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if labels.is_empty() {
        return Err(CliError::ParseError {
            path: path.to_path_buf(),
            line: 1,
            message: "empty header".into(),
        });
    }
    let mut data: Vec<f64> = Vec::new();
    let mut rows = 0usize;
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2;
        let record = record.map_err(|e| CliError::ParseError {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
        if record.len() != labels.len() {
            return Err(CliError::TruncatedRecord {
                path: path.to_path_buf(),
                detail: format!("line {line}: {} fields, expected {}", record.len(), labels.len()),
            });
        }
        for cell in record.iter() {
            let v = parse_float(cell.trim()).ok_or_else(|| CliError::ParseError {
                path: path.to_path_buf(),
                line,
                message: format!("bad float '{cell}'"),
            })?;
            data.push(v);
        }
        rows += 1;
    }
    let samples = Array2::from_shape_vec((rows, labels.len()), data)
        .expect("row-major cells match the declared shape");
    Ok(MultichannelSeries::with_labels(samples, sample_rate_hz, labels)?)
}

fn ingest_raw64(path: &Path, channels: usize, sample_rate_hz: f64) -> CliResult<MultichannelSeries> {
    if channels == 0 {
        return Err(CliError::InvalidArgument("raw64 channel count must be >= 1".into()));
    }
    let bytes = std::fs::read(path)?;
    let stride = 8 * channels;
    if bytes.is_empty() || bytes.len() % stride != 0 {
        return Err(CliError::TruncatedRecord {
            path: path.to_path_buf(),
            detail: format!("{} bytes is not a multiple of {stride}", bytes.len()),
        });
    }
    let rows = bytes.len() / stride;
    let mut data = Vec::with_capacity(rows * channels);
    for chunk in bytes.chunks_exact(8) {
        data.push(f64::from_le_bytes(chunk.try_into().expect("8-byte chunk")));
    }
    let samples =
        Array2::from_shape_vec((rows, channels), data).expect("length checked above");
    Ok(MultichannelSeries::new(samples, sample_rate_hz)?)
}

/// Writes a series as CSV; `hex_floats` selects the exact hex encoding
/// over round-trip decimal.
pub fn emit_csv(path: &Path, series: &MultichannelSeries, hex_floats: bool) -> CliResult<()> {
    let mut out = String::new();
    out.push_str(&series.channel_labels().join(","));
    out.push('\n');
    for row in series.samples().rows() {
        let cells: Vec<String> = row
            .iter()
            .map(|&v| if hex_floats { format_hex_f64(v) } else { format!("{v}") })
            .collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Writes a series as raw little-endian f64, channel-interleaved.
pub fn emit_raw64(path: &Path, series: &MultichannelSeries) -> CliResult<()> {
    let mut bytes = Vec::with_capacity(series.samples().len() * 8);
    for row in series.samples().rows() {
        for &v in row.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_atomic(path, &bytes)
}

/// Sidecar metadata written next to every emitted synthetic file.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Sidecar {
    pub kind: String,
    pub params: serde_json::Value,
    pub seed: u64,
    pub format: InputFormat,
    pub sample_rate_hz: f64,
    pub channels: usize,
    pub samples: usize,
}

impl Sidecar {
    pub fn path_for(data_path: &Path) -> PathBuf {
        let mut name = data_path.file_name().unwrap_or_default().to_os_string();
        name.push(".meta.json");
        data_path.with_file_name(name)
    }

    pub fn write(&self, data_path: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self)?;
        write_atomic(&Self::path_for(data_path), text.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hex_floats_round_trip_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let v = (rng.random::<f64>() - 0.5) * 10f64.powi(rng.random_range(-300..300));
            let s = format_hex_f64(v);
            let back = parse_float(&s).unwrap();
            assert_eq!(v.to_bits(), back.to_bits(), "{v} -> {s} -> {back}");
        }
        for v in [0.0, -0.0, f64::MIN_POSITIVE, 5e-324, f64::MAX] {
            let back = parse_float(&format_hex_f64(v)).unwrap();
            assert_eq!(v.to_bits(), back.to_bits());
        }
    }

    #[test]
    fn decimal_display_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let v: f64 = rng.random::<f64>() * 2e3 - 1e3;
            let back: f64 = format!("{v}").parse().unwrap();
            assert_eq!(v.to_bits(), back.to_bits());
        }
    }

    #[test]
    fn csv_hand_file_with_selection() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hand.csv");
        std::fs::write(&path, "t,AN3,AN4\n0.0,1.5,2.5\n1.0,3.5,4.5\n").unwrap();
        let series = ingest(
            &path,
            InputFormat::Csv,
            None,
            40_000.0,
            Some(&[ChannelSel::Label("AN4".into())]),
        )
        .unwrap();
        assert_eq!(series.n_samples(), 2);
        assert_eq!(series.n_channels(), 1);
        assert_eq!(series.samples()[[0, 0]], 2.5);
        assert_eq!(series.samples()[[1, 0]], 4.5);

        let err = ingest(
            &path,
            InputFormat::Csv,
            None,
            40_000.0,
            Some(&[ChannelSel::Label("AN9".into())]),
        )
        .unwrap_err();
        assert!(matches!(err, CliError::ChannelNotFound(_)));
    }

    #[test]
    fn csv_reports_bad_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "a,b\n1.0,2.0\n3.0,oops\n").unwrap();
        match ingest(&path, InputFormat::Csv, None, 1.0, None) {
            Err(CliError::ParseError { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn raw64_shape_arithmetic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.f64");
        let mut bytes = Vec::new();
        for i in 0..16 {
            bytes.extend_from_slice(&(i as f64).to_le_bytes());
        }
        std::fs::write(&path, &bytes).unwrap();
        let series = ingest(&path, InputFormat::Raw64, Some(2), 10.0, None).unwrap();
        assert_eq!(series.n_samples(), 8);
        assert_eq!(series.n_channels(), 2);
        assert_eq!(series.samples()[[3, 1]], 7.0);

        std::fs::write(&path, &bytes[..20]).unwrap();
        assert!(matches!(
            ingest(&path, InputFormat::Raw64, Some(2), 10.0, None),
            Err(CliError::TruncatedRecord { .. })
        ));
    }

    #[test]
    fn emit_ingest_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let series = multifract::signal::gen_white_noise(128, 3, 9).unwrap();

        let raw = dir.path().join("s.f64");
        emit_raw64(&raw, &series).unwrap();
        let back = ingest(&raw, InputFormat::Raw64, Some(3), 1.0, None).unwrap();
        assert_eq!(series.samples(), back.samples());

        for hex in [false, true] {
            let csv = dir.path().join(format!("s_{hex}.csv"));
            emit_csv(&csv, &series, hex).unwrap();
            let back = ingest(&csv, InputFormat::Csv, None, 1.0, None).unwrap();
            assert_eq!(series.samples(), back.samples());
            assert_eq!(series.channel_labels(), back.channel_labels());
        }
    }
}

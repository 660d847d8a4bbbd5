//! File layouts written and read by the command-line tool.
//!
//! Floats are written with Rust's shortest round-trip formatting, so every
//! CSV written here reads back to the identical values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::benchmark::{ResidualRow, ResidualSummary, RunCurve};
use crate::calibration::CalibrationRecord;
use crate::chirp::{Cplx, SampledSignal};
use crate::config::{DataFormat, ScenarioConfig};
use crate::netsim::{AmplifierTruth, CaptureRecord, Distortion, Element, PathId, TemperatureCaptures};
use crate::optimizer::Algorithm;
use crate::units::wrap_degrees;
use crate::{Error, Result};

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().has_headers(false).from_writer(w)
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::Format {
        line,
        message: e.to_string(),
    }
}

/// Reads a CSV with the exact `header`, returning each data row with its
/// 1-based line number.
fn read_rows<R: Read>(r: R, header: &[&str]) -> Result<Vec<(u64, csv::StringRecord)>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(r);
    let mut rows = rdr.records();
    let first = match rows.next() {
        Some(rec) => rec.map_err(csv_error)?,
        None => {
            return Err(Error::Format {
                line: 0,
                message: "empty file".into(),
            })
        }
    };
    if first.iter().collect::<Vec<_>>() != header {
        return Err(Error::Format {
            line: 1,
            message: format!("expected header '{}'", header.join(",")),
        });
    }
    let mut out = Vec::new();
    for rec in rows {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != header.len() {
            return Err(Error::Format {
                line,
                message: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        out.push((line, rec));
    }
    Ok(out)
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, line: u64, i: usize, name: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    rec[i].parse().map_err(|e| Error::Format {
        line,
        message: format!("bad {name} '{}': {e}", &rec[i]),
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::from(e).context(dir.display().to_string()))?;
        }
    }
    let f = File::create(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
    Ok(BufWriter::new(f))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
    Ok(BufReader::new(f))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_reader(open(path)?).map_err(|e| Error::from(e).context(path.display().to_string()))
}

// ---------------------------------------------------------------- signals

const SIGNAL_HEADER: [&str; 4] = ["index", "t_seconds", "i", "q"];

/// `index,t_seconds,i,q`.
pub fn write_signal_csv<W: Write>(w: W, sig: &SampledSignal) -> Result<()> {
    let mut wr = csv_writer(w);
    wr.write_record(SIGNAL_HEADER).map_err(csv_error)?;
    for (i, s) in sig.samples().iter().enumerate() {
        wr.write_record([
            i.to_string(),
            sig.time(i).to_string(),
            s.re.to_string(),
            s.im.to_string(),
        ])
        .map_err(csv_error)?;
    }
    wr.flush()?;
    Ok(())
}

/// Parses `index,t_seconds,i,q`. The sample rate is taken from the time
/// column, which therefore needs at least two rows.
pub fn read_signal_csv<R: Read>(r: R) -> Result<SampledSignal> {
    let rows = read_rows(r, &SIGNAL_HEADER)?;
    if rows.len() < 2 {
        return Err(Error::Format {
            line: rows.first().map_or(1, |r| r.0),
            message: "a signal needs at least two samples to fix its sample rate".into(),
        });
    }
    let mut samples = Vec::with_capacity(rows.len());
    let mut times = Vec::with_capacity(rows.len());
    for (k, (line, rec)) in rows.iter().enumerate() {
        let idx: usize = field(rec, *line, 0, "index")?;
        if idx != k {
            return Err(Error::Format {
                line: *line,
                message: format!("expected index {k}, found {idx}"),
            });
        }
        times.push(field::<f64>(rec, *line, 1, "t_seconds")?);
        let re: f64 = field(rec, *line, 2, "i")?;
        let im: f64 = field(rec, *line, 3, "q")?;
        if !(re.is_finite() && im.is_finite()) {
            return Err(Error::Format {
                line: *line,
                message: "non-finite sample".into(),
            });
        }
        samples.push(Cplx::new(re, im));
    }
    let n = times.len();
    let span = times[n - 1] - times[0];
    if !(span > 0.0 && span.is_finite()) {
        return Err(Error::Format {
            line: rows[n - 1].0,
            message: "time column must increase".into(),
        });
    }
    let fs = (n - 1) as f64 / span;
    SampledSignal::new(samples, fs, times[0])
}

pub fn save_signal_csv(path: &Path, sig: &SampledSignal) -> Result<()> {
    write_signal_csv(create(path)?, sig)
}

pub fn load_signal_csv(path: &Path) -> Result<SampledSignal> {
    read_signal_csv(open(path)?).map_err(|e| e.context(path.display().to_string()))
}

// --------------------------------------------------------------- captures

const CAPTURE_HEADER: [&str; 6] = ["temperature", "path", "pulse_index", "sample_index", "i", "q"];

/// `temperature,path,pulse_index,sample_index,i,q`, one row per sample.
pub fn write_captures_csv<W: Write>(w: W, records: &[CaptureRecord]) -> Result<()> {
    let mut wr = csv_writer(w);
    wr.write_record(CAPTURE_HEADER).map_err(csv_error)?;
    for c in records {
        let t = c.temperature.to_string();
        let path = c.path.to_string();
        let pulse = c.pulse_index.to_string();
        for (i, s) in c.pulse.samples().iter().enumerate() {
            wr.write_record([
                t.as_str(),
                path.as_str(),
                pulse.as_str(),
                &i.to_string(),
                &s.re.to_string(),
                &s.im.to_string(),
            ])
            .map_err(csv_error)?;
        }
    }
    wr.flush()?;
    Ok(())
}

/// A pulse read back from a capture file.
#[derive(Debug, Clone, PartialEq)]
pub struct CapturedPulse {
    pub temperature: f64,
    pub path: PathId,
    pub pulse_index: usize,
    pub pulse: SampledSignal,
}

pub fn read_captures_csv<R: Read>(r: R, sample_rate: f64) -> Result<Vec<CapturedPulse>> {
    let rows = read_rows(r, &CAPTURE_HEADER)?;
    let mut out: Vec<CapturedPulse> = Vec::new();
    let mut current: Option<(f64, PathId, usize, Vec<Cplx>)> = None;
    let flush = |cur: Option<(f64, PathId, usize, Vec<Cplx>)>, out: &mut Vec<CapturedPulse>| -> Result<()> {
        if let Some((t, p, k, s)) = cur {
            out.push(CapturedPulse {
                temperature: t,
                path: p,
                pulse_index: k,
                pulse: SampledSignal::new(s, sample_rate, 0.0)?,
            });
        }
        Ok(())
    };
    for (line, rec) in &rows {
        let t: f64 = field(rec, *line, 0, "temperature")?;
        let path: PathId = rec[1].parse().map_err(|e: Error| Error::Format {
            line: *line,
            message: e.to_string(),
        })?;
        let k: usize = field(rec, *line, 2, "pulse_index")?;
        let idx: usize = field(rec, *line, 3, "sample_index")?;
        let s = Cplx::new(field(rec, *line, 4, "i")?, field(rec, *line, 5, "q")?);
        let same = matches!(&current, Some((ct, cp, ck, _)) if *ct == t && *cp == path && *ck == k);
        if !same {
            flush(current.take(), &mut out)?;
            current = Some((t, path, k, Vec::new()));
        }
        let buf = &mut current.as_mut().expect("set above").3;
        if idx != buf.len() {
            return Err(Error::Format {
                line: *line,
                message: format!("expected sample_index {}, found {idx}", buf.len()),
            });
        }
        buf.push(s);
    }
    flush(current, &mut out)?;
    Ok(out)
}

/// Raw little-endian `f64` pairs (I, Q), sample after sample.
pub fn write_iq_bin<W: Write>(mut w: W, samples: &[Cplx]) -> Result<()> {
    for s in samples {
        w.write_all(&s.re.to_le_bytes())?;
        w.write_all(&s.im.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_iq_bin<R: Read>(mut r: R) -> Result<Vec<Cplx>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() % 16 != 0 {
        return Err(Error::Format {
            line: 0,
            message: format!("binary I/Q length {} is not a multiple of 16 bytes", bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().expect("8 bytes"));
            let im = f64::from_le_bytes(c[8..].try_into().expect("8 bytes"));
            Cplx::new(re, im)
        })
        .collect())
}

/// One (temperature, path) dwell in a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureSetEntry {
    pub temperature: f64,
    pub path: PathId,
    pub pulses: usize,
    /// Relative to the manifest's directory.
    pub file: String,
    pub truth: Distortion,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplifier_truth: Option<AmplifierTruth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub seed: u64,
    pub config_hash: String,
    pub data_format: DataFormat,
    pub sample_rate: f64,
    pub samples_per_pulse: usize,
    pub temperatures: Vec<f64>,
    pub capture_sets: Vec<CaptureSetEntry>,
    pub config: ScenarioConfig,
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn set_file_name(t: f64, path: PathId, format: DataFormat) -> String {
    let ext = match format {
        DataFormat::Csv => "csv",
        DataFormat::Json => "json",
        DataFormat::Bin => "bin",
    };
    format!("captures/T{t:07.3}_{path}.{ext}")
}

/// Writes every dwell of a sweep plus `manifest.json` into `dir`.
pub fn write_capture_set(
    dir: &Path,
    sweep: &[TemperatureCaptures],
    config: &ScenarioConfig,
    format: DataFormat,
) -> Result<Manifest> {
    let params = config.chirp_params()?;
    let mut entries = Vec::new();
    for tc in sweep {
        for id in PathId::ALL {
            let recs: Vec<CaptureRecord> = tc.path(id).cloned().collect();
            let Some(first) = recs.first() else { continue };
            let file = set_file_name(tc.temperature, id, format);
            let full = dir.join(&file);
            match format {
                DataFormat::Csv => write_captures_csv(create(&full)?, &recs)?,
                DataFormat::Json => write_json(&full, &recs)?,
                DataFormat::Bin => {
                    let all: Vec<Cplx> = recs.iter().flat_map(|r| r.pulse.samples().iter().copied()).collect();
                    write_iq_bin(create(&full)?, &all)?;
                }
            }
            entries.push(CaptureSetEntry {
                temperature: tc.temperature,
                path: id,
                pulses: recs.len(),
                file,
                truth: first.truth,
                amplifier_truth: first.amplifier_truth,
            });
        }
    }
    let manifest = Manifest {
        format_version: 1,
        seed: config.seed,
        config_hash: config.config_hash()?,
        data_format: format,
        sample_rate: params.sample_rate,
        samples_per_pulse: params.num_samples(),
        temperatures: sweep.iter().map(|t| t.temperature).collect(),
        capture_sets: entries,
        config: config.clone(),
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Loads a manifest and every capture set it lists.
pub fn load_capture_set(manifest_path: &Path) -> Result<(Manifest, Vec<TemperatureCaptures>)> {
    let manifest: Manifest = read_json(manifest_path)?;
    let base: PathBuf = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let n = manifest.samples_per_pulse;
    let mut sweep: Vec<TemperatureCaptures> = manifest
        .temperatures
        .iter()
        .map(|&t| TemperatureCaptures {
            temperature: t,
            captures: Vec::new(),
        })
        .collect();
    for e in &manifest.capture_sets {
        let full = base.join(&e.file);
        let ctx = |err: Error| err.context(full.display().to_string());
        let pulses: Vec<SampledSignal> = match manifest.data_format {
            DataFormat::Csv => read_captures_csv(open(&full)?, manifest.sample_rate)
                .map_err(ctx)?
                .into_iter()
                .map(|p| p.pulse)
                .collect(),
            DataFormat::Json => read_json::<Vec<CaptureRecord>>(&full)?
                .into_iter()
                .map(|c| c.pulse)
                .collect(),
            DataFormat::Bin => {
                let all = read_iq_bin(open(&full)?).map_err(ctx)?;
                if n == 0 || all.len() % n != 0 {
                    return Err(ctx(Error::Format {
                        line: 0,
                        message: format!("{} samples is not a whole number of {n}-sample pulses", all.len()),
                    }));
                }
                all.chunks(n)
                    .map(|c| SampledSignal::new(c.to_vec(), manifest.sample_rate, 0.0))
                    .collect::<Result<_>>()
                    .map_err(ctx)?
            }
        };
        if pulses.len() != e.pulses || pulses.iter().any(|p| p.len() != n) {
            return Err(ctx(Error::Format {
                line: 0,
                message: format!("expected {} pulses of {n} samples", e.pulses),
            }));
        }
        let records = pulses.into_iter().enumerate().map(|(k, pulse)| CaptureRecord {
            temperature: e.temperature,
            path: e.path,
            pulse_index: k,
            pulse,
            truth: e.truth,
            amplifier_truth: e.amplifier_truth,
        });
        match sweep
            .iter_mut()
            .find(|t| (t.temperature - e.temperature).abs() <= crate::netsim::TEMPERATURE_TOLERANCE)
        {
            Some(t) => t.captures.extend(records),
            None => sweep.push(TemperatureCaptures {
                temperature: e.temperature,
                captures: records.collect(),
            }),
        }
    }
    Ok((manifest, sweep))
}

// ------------------------------------------------------------ calibration

const CALIBRATION_HEADER: [&str; 8] = [
    "element",
    "temperature_C",
    "G_meas_dB",
    "phi_meas_deg",
    "k_dB",
    "theta_deg",
    "G_comp_dB",
    "phi_comp_deg",
];

/// One line of the calibration CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationRow {
    pub element: Element,
    pub temperature: f64,
    pub g_meas_db: f64,
    pub phi_meas_deg: f64,
    pub k_db: f64,
    pub theta_deg: f64,
    pub g_comp_db: f64,
    pub phi_comp_deg: f64,
}

impl From<&CalibrationRecord> for CalibrationRow {
    fn from(r: &CalibrationRecord) -> Self {
        CalibrationRow {
            element: r.element,
            temperature: r.temperature,
            g_meas_db: r.measured_gain_db,
            phi_meas_deg: wrap_degrees(r.measured_phase.to_degrees()),
            k_db: r.k_db,
            theta_deg: wrap_degrees(r.theta.to_degrees()),
            g_comp_db: r.compensated_gain_db,
            phi_comp_deg: wrap_degrees(r.compensated_phase.to_degrees()),
        }
    }
}

pub fn write_calibration_csv<W: Write>(w: W, records: &[CalibrationRecord]) -> Result<()> {
    let mut wr = csv_writer(w);
    wr.write_record(CALIBRATION_HEADER).map_err(csv_error)?;
    for r in records {
        let row = CalibrationRow::from(r);
        wr.write_record([
            row.element.to_string(),
            row.temperature.to_string(),
            row.g_meas_db.to_string(),
            row.phi_meas_deg.to_string(),
            row.k_db.to_string(),
            row.theta_deg.to_string(),
            row.g_comp_db.to_string(),
            row.phi_comp_deg.to_string(),
        ])
        .map_err(csv_error)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_calibration_csv<R: Read>(r: R) -> Result<Vec<CalibrationRow>> {
    read_rows(r, &CALIBRATION_HEADER)?
        .iter()
        .map(|(line, rec)| {
            let line = *line;
            Ok(CalibrationRow {
                element: rec[0].parse().map_err(|e: Error| Error::Format {
                    line,
                    message: e.to_string(),
                })?,
                temperature: field(rec, line, 1, "temperature_C")?,
                g_meas_db: field(rec, line, 2, "G_meas_dB")?,
                phi_meas_deg: field(rec, line, 3, "phi_meas_deg")?,
                k_db: field(rec, line, 4, "k_dB")?,
                theta_deg: field(rec, line, 5, "theta_deg")?,
                g_comp_db: field(rec, line, 6, "G_comp_dB")?,
                phi_comp_deg: field(rec, line, 7, "phi_comp_deg")?,
            })
        })
        .collect()
}

// -------------------------------------------------------- fit and bench

/// `epoch,E`.
pub fn write_history_csv<W: Write>(w: W, history: &[f64]) -> Result<()> {
    let mut wr = csv_writer(w);
    wr.write_record(["epoch", "E"]).map_err(csv_error)?;
    for (k, e) in history.iter().enumerate() {
        wr.write_record([k.to_string(), e.to_string()]).map_err(csv_error)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_history_csv<R: Read>(r: R) -> Result<Vec<f64>> {
    let rows = read_rows(r, &["epoch", "E"])?;
    rows.iter()
        .enumerate()
        .map(|(k, (line, rec))| {
            let epoch: usize = field(rec, *line, 0, "epoch")?;
            if epoch != k {
                return Err(Error::Format {
                    line: *line,
                    message: format!("expected epoch {k}, found {epoch}"),
                });
            }
            field(rec, *line, 1, "E")
        })
        .collect()
}

/// `algorithm,seed,epoch,E`. With `stride > 1` only every `stride`-th epoch
/// is kept, plus each run's last epoch.
pub fn write_curves_csv<W: Write>(w: W, curves: &[RunCurve], stride: usize) -> Result<()> {
    let stride = stride.max(1);
    let mut wr = csv_writer(w);
    wr.write_record(["algorithm", "seed", "epoch", "E"]).map_err(csv_error)?;
    for c in curves {
        let last = c.error_history.len().saturating_sub(1);
        for (k, e) in c.error_history.iter().enumerate() {
            if k % stride == 0 || k == last {
                wr.write_record([c.algorithm.name().to_string(), c.seed.to_string(), k.to_string(), e.to_string()])
                    .map_err(csv_error)?;
            }
        }
    }
    wr.flush()?;
    Ok(())
}

/// A row of the curves CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub epoch: usize,
    pub cost: f64,
}

pub fn read_curves_csv<R: Read>(r: R) -> Result<Vec<CurvePoint>> {
    read_rows(r, &["algorithm", "seed", "epoch", "E"])?
        .iter()
        .map(|(line, rec)| {
            let line = *line;
            Ok(CurvePoint {
                algorithm: rec[0].parse().map_err(|e: Error| Error::Format {
                    line,
                    message: e.to_string(),
                })?,
                seed: field(rec, line, 1, "seed")?,
                epoch: field(rec, line, 2, "epoch")?,
                cost: field(rec, line, 3, "E")?,
            })
        })
        .collect()
}

const RESIDUAL_HEADER: [&str; 5] = ["row", "hpa_gain_dB", "hpa_phase_deg", "lna_gain_dB", "lna_phase_deg"];

/// Two rows, `Uncomp` and `Comp`, with HPA and LNA gain/phase maxima as
/// columns.
pub fn write_residual_csv<W: Write>(w: W, summary: &ResidualSummary) -> Result<()> {
    let cell = |e: Element, f: fn(&ResidualRow) -> f64| summary.row(e).map_or(String::new(), |r| f(r).to_string());
    let mut wr = csv_writer(w);
    wr.write_record(RESIDUAL_HEADER).map_err(csv_error)?;
    wr.write_record([
        "Uncomp".to_string(),
        cell(Element::Hpa, |r| r.uncomp_gain_db),
        cell(Element::Hpa, |r| r.uncomp_phase_deg),
        cell(Element::Lna, |r| r.uncomp_gain_db),
        cell(Element::Lna, |r| r.uncomp_phase_deg),
    ])
    .map_err(csv_error)?;
    wr.write_record([
        "Comp".to_string(),
        cell(Element::Hpa, |r| r.comp_gain_db),
        cell(Element::Hpa, |r| r.comp_phase_deg),
        cell(Element::Lna, |r| r.comp_gain_db),
        cell(Element::Lna, |r| r.comp_phase_deg),
    ])
    .map_err(csv_error)?;
    wr.flush()?;
    Ok(())
}

pub fn read_residual_csv<R: Read>(r: R) -> Result<ResidualSummary> {
    let rows = read_rows(r, &RESIDUAL_HEADER)?;
    let find = |name: &str| {
        rows.iter()
            .find(|(_, rec)| &rec[0] == name)
            .ok_or_else(|| Error::Format {
                line: 0,
                message: format!("missing '{name}' row"),
            })
    };
    let (ul, u) = find("Uncomp")?;
    let (cl, c) = find("Comp")?;
    let mut out = Vec::new();
    for (e, col) in [(Element::Hpa, 1), (Element::Lna, 3)] {
        if u[col].is_empty() {
            continue;
        }
        out.push(ResidualRow {
            element: e,
            uncomp_gain_db: field(u, *ul, col, "gain")?,
            uncomp_phase_deg: field(u, *ul, col + 1, "phase")?,
            comp_gain_db: field(c, *cl, col, "gain")?,
            comp_phase_deg: field(c, *cl, col + 1, "phase")?,
        });
    }
    Ok(ResidualSummary { rows: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chirp::{add_awgn, generate_chirp, ChirpParams};
    use crate::netsim::{thermal_sweep, NetworkModel};

    #[test]
    fn signal_csv_round_trip() {
        let sig = add_awgn(&generate_chirp(&ChirpParams::default()).unwrap(), 10.0, 3).unwrap();
        let mut buf = Vec::new();
        write_signal_csv(&mut buf, &sig).unwrap();
        let back = read_signal_csv(&buf[..]).unwrap();
        assert_eq!(back.samples(), sig.samples());
        assert!((back.sample_rate() - sig.sample_rate()).abs() < 1e-6 * sig.sample_rate());
    }

    #[test]
    fn signal_csv_errors_carry_line_numbers() {
        assert!(matches!(read_signal_csv(&b""[..]), Err(Error::Format { line: 0, .. })));
        let bad = "index,t_seconds,i,q\n0,0,1,0\n1,1e-9,abc,0\n";
        match read_signal_csv(bad.as_bytes()) {
            Err(Error::Format { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("abc"));
            }
            other => panic!("{other:?}"),
        }
        let short = "index,t_seconds,i,q\n0,0,1,0\n1,1e-9,1\n";
        assert!(matches!(read_signal_csv(short.as_bytes()), Err(Error::Format { line: 3, .. })));
        assert!(read_signal_csv("a,b\n".as_bytes()).is_err());
    }

    #[test]
    fn iq_bin_round_trip() {
        let v = vec![Cplx::new(1.5, -2.0), Cplx::new(f64::MIN_POSITIVE, 1e300)];
        let mut buf = Vec::new();
        write_iq_bin(&mut buf, &v).unwrap();
        assert_eq!(buf.len(), 32);
        assert_eq!(&buf[..8], &1.5f64.to_le_bytes());
        assert_eq!(read_iq_bin(&buf[..]).unwrap(), v);
        assert!(read_iq_bin(&buf[..31]).is_err());
    }

    #[test]
    fn capture_set_round_trip_all_formats() {
        let mut cfg = ScenarioConfig::default();
        cfg.sweep.t_max = 25.2;
        cfg.sweep.pulses_per_dwell = 2;
        let params = cfg.chirp_params().unwrap();
        let net: NetworkModel = cfg.network_model().unwrap();
        let sweep = thermal_sweep(&params, &net).unwrap();
        for format in [DataFormat::Csv, DataFormat::Json, DataFormat::Bin] {
            let dir = tempfile::tempdir().unwrap();
            let m = write_capture_set(dir.path(), &sweep, &cfg, format).unwrap();
            assert_eq!(m.capture_sets.len(), 6);
            let (m2, back) = load_capture_set(&dir.path().join(MANIFEST_FILE)).unwrap();
            assert_eq!(m, m2);
            for (a, b) in sweep.iter().zip(&back) {
                assert_eq!(a.temperature, b.temperature);
                for (x, y) in a.captures.iter().zip(&b.captures) {
                    assert_eq!(x.pulse.samples(), y.pulse.samples());
                    assert_eq!((x.path, x.truth, x.amplifier_truth), (y.path, y.truth, y.amplifier_truth));
                }
            }
        }
    }

    #[test]
    fn history_and_curves_round_trip() {
        let h = vec![1.0, 0.5, 1e-3, 2.5e-17];
        let mut buf = Vec::new();
        write_history_csv(&mut buf, &h).unwrap();
        assert_eq!(read_history_csv(&buf[..]).unwrap(), h);

        let c = RunCurve {
            algorithm: Algorithm::MomentumGd,
            seed: 9,
            converged_epoch: Some(2),
            diverged: false,
            amplitude: 1.0,
            phase: 0.0,
            error_history: h.clone(),
        };
        let mut buf = Vec::new();
        write_curves_csv(&mut buf, std::slice::from_ref(&c), 1).unwrap();
        let pts = read_curves_csv(&buf[..]).unwrap();
        assert_eq!(pts.len(), 4);
        assert_eq!(pts[3], CurvePoint { algorithm: Algorithm::MomentumGd, seed: 9, epoch: 3, cost: 2.5e-17 });

        let mut buf = Vec::new();
        write_curves_csv(&mut buf, &[c], 3).unwrap();
        let pts = read_curves_csv(&buf[..]).unwrap();
        assert_eq!(pts.iter().map(|p| p.epoch).collect::<Vec<_>>(), vec![0, 3]);
    }

    #[test]
    fn calibration_and_residual_round_trip() {
        use crate::calibration::{derive_factors, AmplifierMeasurement};
        let m = |e, g, p| AmplifierMeasurement { element: e, temperature: 26.4, gain_db: g, phase: p };
        let recs = vec![
            derive_factors(&m(Element::Hpa, 30.3, 3.1), &m(Element::Hpa, 30.0, -3.1)).unwrap(),
            derive_factors(&m(Element::Lna, 24.7, -1.0), &m(Element::Lna, 25.0, -1.2)).unwrap(),
        ];
        let mut buf = Vec::new();
        write_calibration_csv(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("element,temperature_C,G_meas_dB,phi_meas_deg,k_dB,theta_deg,G_comp_dB,phi_comp_deg\nHPA,26.4,"));
        let rows = read_calibration_csv(&buf[..]).unwrap();
        assert_eq!(rows[0], CalibrationRow::from(&recs[0]));
        assert!(rows.iter().all(|r| r.theta_deg > -180.0 && r.theta_deg <= 180.0));

        let s = crate::benchmark::summarize_residuals(&recs).unwrap();
        let mut buf = Vec::new();
        write_residual_csv(&mut buf, &s).unwrap();
        assert_eq!(read_residual_csv(&buf[..]).unwrap(), s);
    }
}

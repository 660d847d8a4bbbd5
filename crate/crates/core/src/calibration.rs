//! From captured pulses to amplifier gain/phase and calibration factors.
//!
//! Each capture is first aligned in time (cross-correlation against the
//! generator chirp), then its complex gain `A·e^{jω}` is fitted. Comparing
//! the amplifier paths with the amplifier-free path P3 isolates the HPA and
//! LNA; comparing those against their reference-temperature values gives the
//! factors
//!
//! ```text
//! Gʳ = G · k        φʳ = φ + θ
//! ```

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chirp::{apply_delay, fft_pair, generate_chirp, ChirpParams, Cplx, SampledSignal};
use crate::netsim::{CaptureRecord, Element, PathId, TemperatureCaptures, TEMPERATURE_TOLERANCE};
use crate::optimizer::{fit_model, ChirpModel, FitParams, FitResult, OptimizerConfig};
use crate::units::{amplitude_to_db, circular_distance, db_to_amplitude, wrap_phase};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathMeasurement {
    pub path: PathId,
    pub temperature: f64,
    pub amplitude: f64,
    pub phase: f64,
    /// Estimated group delay, seconds.
    pub delay: f64,
    pub final_cost: f64,
    pub epochs_run: usize,
    pub converged_epoch: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmplifierMeasurement {
    pub element: Element,
    pub temperature: f64,
    pub gain_db: f64,
    pub phase: f64,
}

/// Ground-truth amplifier state carried along by simulated data so that the
/// real post-compensation error can be reported.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecordTruth {
    pub gain_db: f64,
    pub phase: f64,
    pub reference_gain_db: f64,
    pub reference_phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub element: Element,
    pub temperature: f64,
    pub measured_gain_db: f64,
    pub measured_phase: f64,
    pub reference_gain_db: f64,
    pub reference_phase: f64,
    /// Linear gain factor.
    pub k: f64,
    pub k_db: f64,
    pub theta: f64,
    pub compensated_gain_db: f64,
    pub compensated_phase: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<RecordTruth>,
}

impl CalibrationRecord {
    /// (|G − Gʳ| dB, circular |φ − φʳ| rad).
    pub fn uncompensated_residual(&self) -> (f64, f64) {
        (
            (self.measured_gain_db - self.reference_gain_db).abs(),
            circular_distance(self.measured_phase, self.reference_phase),
        )
    }

    /// Error left after applying (k, θ) to the amplifier.
    ///
    /// With ground truth this is how far the compensated amplifier sits from
    /// its true reference state, `(G_true + k_dB) − G_true(T_ref)`; it carries
    /// the measurement error at both temperatures. Without truth, only the
    /// bookkeeping identity `G·k − Gʳ` is available.
    pub fn compensated_residual(&self) -> (f64, f64) {
        match self.truth {
            Some(t) => (
                (t.gain_db + self.k_db - t.reference_gain_db).abs(),
                circular_distance(t.phase + self.theta, t.reference_phase),
            ),
            None => (
                (self.compensated_gain_db - self.reference_gain_db).abs(),
                circular_distance(self.compensated_phase, self.reference_phase),
            ),
        }
    }
}

/// Group delay of `received` relative to `reference`, in seconds.
///
/// The integer lag maximizing the cross-correlation magnitude is found with
/// an FFT. The correlation at that lag and its two neighbours is then
/// recomputed over the sample window all three lags share, and a parabola
/// through those magnitudes gives the fractional part. Using one common
/// window keeps the three values comparable, so an integer delay comes back
/// exactly.
pub fn estimate_delay(received: &SampledSignal, reference: &SampledSignal) -> Result<f64> {
    received.check_compatible(reference)?;
    let n = received.len();
    if n < 3 {
        return Err(Error::param("delay estimation needs at least 3 samples"));
    }
    let m = (2 * n).next_power_of_two();
    let (fwd, inv) = fft_pair(m);
    let padded = |s: &SampledSignal| {
        let mut v = s.samples().to_vec();
        v.resize(m, Cplx::new(0.0, 0.0));
        fwd.process(&mut v);
        v
    };
    let r = padded(received);
    let s = padded(reference);
    let mut c: Vec<Cplx> = r.iter().zip(&s).map(|(a, b)| a * b.conj()).collect();
    inv.process(&mut c);

    let lag = |i: usize| if i < m / 2 { i as i64 } else { i as i64 - m as i64 };
    let mut best = (0i64, -1.0f64);
    for (i, v) in c.iter().enumerate() {
        let k = lag(i);
        if k.unsigned_abs() as usize >= n {
            continue;
        }
        let mag = v.norm();
        if mag > best.1 {
            best = (k, mag);
        }
    }
    let k0 = best.0;
    let edge = n as i64 - 1;
    if k0.abs() >= edge {
        return Err(Error::DelayOutOfRange(format!(
            "correlation peak at lag {k0} is on the edge of the ±{edge} sample search range"
        )));
    }

    let lo = 0.max(k0 + 1) as usize;
    let hi = (n as i64).min(n as i64 + k0 - 1) as usize;
    let rs = received.samples();
    let ss = reference.samples();
    let at = |k: i64| -> f64 {
        (lo..hi)
            .map(|i| rs[i] * ss[(i as i64 - k) as usize].conj())
            .sum::<Cplx>()
            .norm()
    };
    let (ym, y0, yp) = (at(k0 - 1), at(k0), at(k0 + 1));
    let denom = ym - 2.0 * y0 + yp;
    let mut offset = if denom < 0.0 && denom.is_finite() {
        (0.5 * (ym - yp) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    if offset.abs() < 1e-9 {
        // rounding noise of a symmetric peak
        offset = 0.0;
    }
    Ok((k0 as f64 + offset) / received.sample_rate())
}

/// Delay estimate plus the (A, ω) fit of one pulse.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalMeasurement {
    pub delay: f64,
    pub fit: FitResult,
}

/// Estimates the delay of `pulse` against the generator chirp, then fits
/// `A·e^{jω}` times the equally delayed generator chirp to it.
///
/// Delaying the template rather than advancing the capture keeps both sides
/// truncated the same way at the window edges, so the fit sees no edge bias.
pub fn measure_signal(
    pulse: &SampledSignal,
    generator: &ChirpParams,
    config: &OptimizerConfig,
) -> Result<SignalMeasurement> {
    let reference = generate_chirp(&generator.with_amplitude_phase(1.0, 0.0))?;
    let delay = estimate_delay(pulse, &reference)?;
    let template = if delay == 0.0 {
        reference
    } else {
        apply_delay(&reference, delay)?
    };
    let fit = fit_model(&ChirpModel::from_waveform(template), pulse, FitParams::initial(), config)?;
    Ok(SignalMeasurement { delay, fit })
}

pub fn measure_path(
    capture: &CaptureRecord,
    generator: &ChirpParams,
    config: &OptimizerConfig,
) -> Result<PathMeasurement> {
    let m = measure_signal(&capture.pulse, generator, config)
        .map_err(|e| e.context(format!("{} at {} °C", capture.path, capture.temperature)))?;
    Ok(path_measurement(capture.path, capture.temperature, m))
}

fn path_measurement(path: PathId, temperature: f64, m: SignalMeasurement) -> PathMeasurement {
    PathMeasurement {
        path,
        temperature,
        amplitude: m.fit.amplitude,
        phase: m.fit.phase,
        delay: m.delay,
        final_cost: m.fit.final_cost,
        epochs_run: m.fit.epochs_run,
        converged_epoch: m.fit.converged_epoch,
    }
}

/// Sample-wise complex mean of equally shaped, already aligned pulses.
pub fn coherent_sum(pulses: &[SampledSignal]) -> Result<SampledSignal> {
    let first = pulses
        .first()
        .ok_or_else(|| Error::param("coherent sum needs at least one pulse"))?;
    if pulses.len() == 1 {
        return Ok(first.clone());
    }
    let mut acc = vec![Cplx::new(0.0, 0.0); first.len()];
    for p in pulses {
        first.check_compatible(p)?;
        acc.iter_mut().zip(p.samples()).for_each(|(a, s)| *a += s);
    }
    let scale = 1.0 / pulses.len() as f64;
    acc.iter_mut().for_each(|a| *a *= scale);
    SampledSignal::new(acc, first.sample_rate(), first.start_time())
}

/// Path-level (gain dB, phase rad) offset that is not part of the amplifier.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PathOffset {
    pub gain_db: f64,
    pub phase: f64,
}

/// Passive offsets of P1 and P2 relative to P3.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct OffsetTable {
    pub p1: PathOffset,
    pub p2: PathOffset,
}

impl OffsetTable {
    pub fn get(&self, path: PathId) -> Result<PathOffset> {
        match path {
            PathId::P1 => Ok(self.p1),
            PathId::P2 => Ok(self.p2),
            PathId::P3 => Err(Error::param("P3 is the reference path and has no offset entry")),
        }
    }

    /// Offsets known from the network description.
    pub fn from_network(model: &crate::netsim::NetworkModel) -> Self {
        let p3 = model.path(PathId::P3);
        let rel = |id: PathId| {
            let p = model.path(id);
            PathOffset {
                gain_db: p.passive_gain_db - p3.passive_gain_db,
                phase: wrap_phase(p.passive_phase - p3.passive_phase),
            }
        };
        OffsetTable {
            p1: rel(PathId::P1),
            p2: rel(PathId::P2),
        }
    }

    /// Offsets characterized at the reference temperature: whatever the
    /// measured P1/P3 and P2/P3 ratios hold beyond the amplifiers' nominal
    /// reference values.
    pub fn characterize(
        hpa_ratio: AmplifierMeasurement,
        lna_ratio: AmplifierMeasurement,
        nominal: &NominalAmplifiers,
    ) -> Self {
        let off = |m: AmplifierMeasurement, n: AmplifierReference| PathOffset {
            gain_db: m.gain_db - n.gain_db,
            phase: wrap_phase(m.phase - n.phase),
        };
        OffsetTable {
            p1: off(hpa_ratio, nominal.hpa),
            p2: off(lna_ratio, nominal.lna),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmplifierReference {
    pub gain_db: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NominalAmplifiers {
    pub hpa: AmplifierReference,
    pub lna: AmplifierReference,
}

impl NominalAmplifiers {
    pub fn get(&self, element: Element) -> AmplifierReference {
        match element {
            Element::Hpa => self.hpa,
            Element::Lna => self.lna,
        }
    }
}

/// How passive path offsets are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffsetMode {
    /// Use a known table.
    Table(OffsetTable),
    /// Measure them at the reference temperature against nominal amplifier
    /// values.
    Characterize(NominalAmplifiers),
}

/// Where Gʳ and φʳ come from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceMode {
    /// The measurement at the reference temperature in the same run.
    #[default]
    FirstRun,
    /// A fixed external table.
    External(NominalAmplifiers),
}

/// Amplifier gain/phase from an amplifier path and the reference path P3 at
/// the same temperature, with the passive offsets removed.
pub fn derive_amplifier(
    active: &PathMeasurement,
    reference_path: &PathMeasurement,
    offsets: &OffsetTable,
) -> Result<AmplifierMeasurement> {
    let element = active
        .path
        .element()
        .ok_or_else(|| Error::param(format!("{} is not an amplifier path", active.path)))?;
    if reference_path.path != PathId::P3 {
        return Err(Error::param(format!(
            "reference path must be P3, got {}",
            reference_path.path
        )));
    }
    if (active.temperature - reference_path.temperature).abs() > TEMPERATURE_TOLERANCE {
        return Err(Error::param(format!(
            "temperature mismatch: {} at {} °C vs P3 at {} °C",
            active.path, active.temperature, reference_path.temperature
        )));
    }
    if !(active.amplitude > 0.0 && reference_path.amplitude > 0.0) {
        return Err(Error::Measurement(format!(
            "nonpositive fitted amplitude at {} °C",
            active.temperature
        )));
    }
    let off = offsets.get(active.path)?;
    Ok(AmplifierMeasurement {
        element,
        temperature: active.temperature,
        gain_db: amplitude_to_db(active.amplitude / reference_path.amplitude) - off.gain_db,
        phase: wrap_phase(active.phase - reference_path.phase - off.phase),
    })
}

/// Calibration factors bringing `measured` back to `reference`.
pub fn derive_factors(
    measured: &AmplifierMeasurement,
    reference: &AmplifierMeasurement,
) -> Result<CalibrationRecord> {
    if measured.element != reference.element {
        return Err(Error::param(format!(
            "element mismatch: {} vs {}",
            measured.element, reference.element
        )));
    }
    let g = db_to_amplitude(measured.gain_db);
    let g_ref = db_to_amplitude(reference.gain_db);
    if !(g > 0.0 && g.is_finite() && g_ref > 0.0 && g_ref.is_finite()) {
        return Err(Error::Measurement(format!(
            "{} gain must be positive and finite (measured {} dB, reference {} dB)",
            measured.element, measured.gain_db, reference.gain_db
        )));
    }
    let k = g_ref / g;
    let theta = wrap_phase(reference.phase - measured.phase);
    Ok(CalibrationRecord {
        element: measured.element,
        temperature: measured.temperature,
        measured_gain_db: measured.gain_db,
        measured_phase: measured.phase,
        reference_gain_db: reference.gain_db,
        reference_phase: reference.phase,
        k,
        k_db: reference.gain_db - measured.gain_db,
        theta,
        compensated_gain_db: amplitude_to_db(g * k),
        compensated_phase: wrap_phase(measured.phase + theta),
        truth: None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSettings {
    pub optimizer: OptimizerConfig,
    pub reference_temperature: f64,
    pub offsets: OffsetMode,
    pub reference: ReferenceMode,
    /// Temperatures that must be present besides those seen in the data.
    pub expected_temperatures: Vec<f64>,
}

impl CalibrationSettings {
    pub fn new(optimizer: OptimizerConfig, reference_temperature: f64, offsets: OffsetMode) -> Self {
        CalibrationSettings {
            optimizer,
            reference_temperature,
            offsets,
            reference: ReferenceMode::FirstRun,
            expected_temperatures: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationRun {
    /// Sorted by (element, temperature).
    pub records: Vec<CalibrationRecord>,
    /// Sorted by (temperature, path).
    pub measurements: Vec<PathMeasurement>,
    pub offsets: OffsetTable,
}

/// Temperature key with the tolerance used everywhere else.
fn temp_key(t: f64) -> i64 {
    (t / TEMPERATURE_TOLERANCE).round() as i64
}

/// Full procedure: coherent sum per (temperature, path), delay + (A, ω) fit,
/// amplifier extraction against P3, offsets, factors.
pub fn run_calibration(
    sweep: &[TemperatureCaptures],
    generator: &ChirpParams,
    settings: &CalibrationSettings,
) -> Result<CalibrationRun> {
    settings.optimizer.validate()?;

    // (temperature, path) → pulses, and the amplifier truth if present
    let mut groups: BTreeMap<(i64, PathId), (f64, Vec<&CaptureRecord>)> = BTreeMap::new();
    let mut temps: BTreeMap<i64, f64> = BTreeMap::new();
    for tc in sweep {
        temps.insert(temp_key(tc.temperature), tc.temperature);
        for c in &tc.captures {
            temps.entry(temp_key(c.temperature)).or_insert(c.temperature);
            groups
                .entry((temp_key(c.temperature), c.path))
                .or_insert_with(|| (c.temperature, Vec::new()))
                .1
                .push(c);
        }
    }
    for &t in &settings.expected_temperatures {
        temps.entry(temp_key(t)).or_insert(t);
    }
    let ref_key = temp_key(settings.reference_temperature);

    let mut gaps = Vec::new();
    if !temps.contains_key(&ref_key) {
        gaps.push(format!(
            "no captures at reference temperature {:.3} °C",
            settings.reference_temperature
        ));
    }
    for (&key, &t) in &temps {
        for id in PathId::ALL {
            if !groups.contains_key(&(key, id)) {
                gaps.push(format!("{id} missing at {t:.3} °C"));
            }
        }
    }
    if !gaps.is_empty() {
        return Err(Error::Coverage(gaps));
    }

    let jobs: Vec<_> = groups.iter().collect();
    let measured: Vec<PathMeasurement> = jobs
        .par_iter()
        .map(|((_, id), (t, caps))| {
            let pulses: Vec<SampledSignal> = caps.iter().map(|c| c.pulse.clone()).collect();
            let ctx = || format!("{id} at {t} °C");
            let summed = coherent_sum(&pulses).map_err(|e| e.context(ctx()))?;
            let m = measure_signal(&summed, generator, &settings.optimizer).map_err(|e| e.context(ctx()))?;
            Ok(path_measurement(*id, *t, m))
        })
        .collect::<Result<_>>()?;
    let by_key: BTreeMap<(i64, PathId), &PathMeasurement> = measured
        .iter()
        .map(|m| ((temp_key(m.temperature), m.path), m))
        .collect();
    let truth_of = |key: i64, element: Element| {
        groups
            .get(&(key, element.path()))
            .and_then(|(_, caps)| caps[0].amplifier_truth)
            .filter(|t| t.element == element)
    };

    // raw amplifier-path / P3 ratios, offsets not yet removed
    let zero = OffsetTable::default();
    let ratio = |key: i64, element: Element| -> Result<AmplifierMeasurement> {
        derive_amplifier(by_key[&(key, element.path())], by_key[&(key, PathId::P3)], &zero)
    };
    let offsets = match settings.offsets {
        OffsetMode::Table(t) => t,
        OffsetMode::Characterize(nominal) => {
            OffsetTable::characterize(ratio(ref_key, Element::Hpa)?, ratio(ref_key, Element::Lna)?, &nominal)
        }
    };

    let mut records = Vec::with_capacity(2 * temps.len());
    for element in Element::ALL {
        let off = offsets.get(element.path())?;
        let amp = |key: i64| -> Result<AmplifierMeasurement> {
            let r = ratio(key, element)?;
            Ok(AmplifierMeasurement {
                gain_db: r.gain_db - off.gain_db,
                phase: wrap_phase(r.phase - off.phase),
                ..r
            })
        };
        let reference = match settings.reference {
            ReferenceMode::FirstRun => amp(ref_key)?,
            ReferenceMode::External(table) => {
                let r = table.get(element);
                AmplifierMeasurement {
                    element,
                    temperature: settings.reference_temperature,
                    gain_db: r.gain_db,
                    phase: r.phase,
                }
            }
        };
        let ref_truth = truth_of(ref_key, element);
        for &key in temps.keys() {
            let mut rec = derive_factors(&amp(key)?, &reference)?;
            rec.truth = match (truth_of(key, element), ref_truth) {
                (Some(t), Some(r)) => Some(RecordTruth {
                    gain_db: t.gain_db,
                    phase: t.phase,
                    reference_gain_db: r.gain_db,
                    reference_phase: r.phase,
                }),
                _ => None,
            };
            records.push(rec);
        }
    }

    Ok(CalibrationRun {
        records,
        measurements: measured,
        offsets,
    })
}

//! Simulated internal-calibration network.
//!
//! Three switchable loop-back paths share one chirp generator:
//!
//! | path | route                      | active element |
//! |------|----------------------------|----------------|
//! | P1   | coupler → HPA → coupler    | HPA            |
//! | P2   | coupler → LNA → coupler    | LNA            |
//! | P3   | couplers and switches only | none           |
//!
//! Each path applies a passive gain/phase, its amplifier's temperature
//! dependent gain/phase, a group delay, and white noise. Coupler and switch
//! losses are lumped into the passive terms.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chirp::{add_awgn, apply_delay, apply_gain_phase, generate_chirp_at, ChirpParams, SampledSignal};
use crate::units::wrap_phase;
use crate::{Error, Result};

/// Slack for temperature comparisons, °C.
pub const TEMPERATURE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PathId {
    P1,
    P2,
    P3,
}

impl PathId {
    pub const ALL: [PathId; 3] = [PathId::P1, PathId::P2, PathId::P3];

    pub fn index(self) -> usize {
        self as usize
    }

    /// The amplifier a path is built around, if any.
    pub fn element(self) -> Option<Element> {
        match self {
            PathId::P1 => Some(Element::Hpa),
            PathId::P2 => Some(Element::Lna),
            PathId::P3 => None,
        }
    }
}

impl fmt::Display for PathId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "P{}", self.index() + 1)
    }
}

impl FromStr for PathId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "P1" => Ok(PathId::P1),
            "P2" => Ok(PathId::P2),
            "P3" => Ok(PathId::P3),
            other => Err(Error::param(format!("unknown path id '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Element {
    #[serde(rename = "HPA")]
    Hpa,
    #[serde(rename = "LNA")]
    Lna,
}

impl Element {
    pub const ALL: [Element; 2] = [Element::Hpa, Element::Lna];

    /// The path that carries this element.
    pub fn path(self) -> PathId {
        match self {
            Element::Hpa => PathId::P1,
            Element::Lna => PathId::P2,
        }
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Element::Hpa => "HPA",
            Element::Lna => "LNA",
        })
    }
}

impl FromStr for Element {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "HPA" => Ok(Element::Hpa),
            "LNA" => Ok(Element::Lna),
            other => Err(Error::param(format!("unknown element '{other}'"))),
        }
    }
}

/// Piecewise-linear function of temperature, defined between its first and
/// last knot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct DriftCurve {
    knots: Vec<[f64; 2]>,
}

impl DriftCurve {
    /// Knots are `(temperature °C, value)` with strictly increasing
    /// temperatures.
    pub fn new(knots: Vec<[f64; 2]>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::param("drift curve needs at least one knot"));
        }
        if knots.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::param("drift curve knots must be finite"));
        }
        if knots.windows(2).any(|w| w[1][0] <= w[0][0]) {
            return Err(Error::param("drift curve temperatures must be strictly increasing"));
        }
        Ok(DriftCurve { knots })
    }

    /// Straight line through `(t0, 0)` with the given slope, over `[t0, t1]`.
    pub fn linear(t0: f64, t1: f64, slope: f64) -> Result<Self> {
        DriftCurve::new(vec![[t0, 0.0], [t1, slope * (t1 - t0)]])
    }

    /// Zero everywhere on `[t0, t1]`.
    pub fn flat(t0: f64, t1: f64) -> Self {
        DriftCurve {
            knots: vec![[t0, 0.0], [t1, 0.0]],
        }
    }

    pub fn knots(&self) -> &[[f64; 2]] {
        &self.knots
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.knots[0][0], self.knots[self.knots.len() - 1][0])
    }

    pub fn covers(&self, t: f64) -> bool {
        let (lo, hi) = self.domain();
        t >= lo - TEMPERATURE_TOLERANCE && t <= hi + TEMPERATURE_TOLERANCE
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        if !self.covers(t) {
            let (lo, hi) = self.domain();
            return Err(Error::param(format!(
                "temperature {t} °C outside drift curve domain [{lo}, {hi}]"
            )));
        }
        let k = &self.knots;
        if t <= k[0][0] {
            return Ok(k[0][1]);
        }
        for w in k.windows(2) {
            let ([t0, v0], [t1, v1]) = (w[0], w[1]);
            if t <= t1 {
                return Ok(v0 + (v1 - v0) * (t - t0) / (t1 - t0));
            }
        }
        Ok(k[k.len() - 1][1])
    }

    /// Shifts the values so the curve passes through zero at `t_ref`.
    pub fn anchored_at(&self, t_ref: f64) -> Result<Self> {
        let offset = self.eval(t_ref)?;
        Ok(DriftCurve {
            knots: self.knots.iter().map(|&[t, v]| [t, v - offset]).collect(),
        })
    }

    /// Largest |value| over the knots (the extreme of a piecewise-linear
    /// curve always sits on a knot).
    pub fn max_excursion(&self) -> f64 {
        self.knots.iter().map(|k| k[1].abs()).fold(0.0, f64::max)
    }
}

impl TryFrom<Vec<[f64; 2]>> for DriftCurve {
    type Error = Error;

    fn try_from(knots: Vec<[f64; 2]>) -> Result<Self> {
        DriftCurve::new(knots)
    }
}

impl From<DriftCurve> for Vec<[f64; 2]> {
    fn from(c: DriftCurve) -> Self {
        c.knots
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplifierModel {
    pub element: Element,
    pub reference_gain_db: f64,
    /// Radians.
    pub reference_phase: f64,
    /// Δgain in dB versus temperature.
    pub gain_drift: DriftCurve,
    /// Δphase in radians versus temperature.
    pub phase_drift: DriftCurve,
}

impl AmplifierModel {
    pub fn gain_db_at(&self, t: f64) -> Result<f64> {
        Ok(self.reference_gain_db + self.gain_drift.eval(t)?)
    }

    pub fn phase_at(&self, t: f64) -> Result<f64> {
        Ok(wrap_phase(self.reference_phase + self.phase_drift.eval(t)?))
    }

    /// Checks that both drift curves vanish at `t_ref`.
    pub fn validate(&self, t_ref: f64) -> Result<()> {
        let dg = self.gain_drift.eval(t_ref)?;
        let dp = self.phase_drift.eval(t_ref)?;
        if dg.abs() > 1e-12 || dp.abs() > 1e-12 {
            return Err(Error::param(format!(
                "{} drift must be zero at the reference temperature {t_ref} °C (got {dg} dB, {dp} rad)",
                self.element
            )));
        }
        Ok(())
    }
}

/// Optional temperature dependence of a path's passive part. Left empty in
/// normal scenarios; set it on P3 to see what an imperfect reference path
/// does to the calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassiveDrift {
    pub gain_drift: DriftCurve,
    pub phase_drift: DriftCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathModel {
    pub id: PathId,
    pub passive_gain_db: f64,
    pub passive_phase: f64,
    /// Seconds.
    pub group_delay: f64,
    pub amplifier: Option<AmplifierModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub passive_drift: Option<PassiveDrift>,
}

impl PathModel {
    /// A path with no offsets, delay or amplifier.
    pub fn transparent(id: PathId) -> Self {
        PathModel {
            id,
            passive_gain_db: 0.0,
            passive_phase: 0.0,
            group_delay: 0.0,
            amplifier: None,
            passive_drift: None,
        }
    }

    /// Total (gain dB, phase rad) at `t`.
    pub fn distortion_at(&self, t: f64) -> Result<(f64, f64)> {
        let (mut g, mut p) = (self.passive_gain_db, self.passive_phase);
        if let Some(d) = &self.passive_drift {
            g += d.gain_drift.eval(t)?;
            p += d.phase_drift.eval(t)?;
        }
        if let Some(a) = &self.amplifier {
            g += a.gain_db_at(t)?;
            p += a.phase_at(t)?;
        }
        Ok((g, wrap_phase(p)))
    }

    pub fn validate(&self, params: &ChirpParams, t_ref: f64) -> Result<()> {
        match (&self.amplifier, self.id.element()) {
            (None, None) => {}
            (Some(a), Some(e)) if a.element == e => a.validate(t_ref)?,
            _ => {
                return Err(Error::param(format!(
                    "{} must carry {}",
                    self.id,
                    self.id.element().map_or("no amplifier".to_string(), |e| e.to_string())
                )))
            }
        }
        if !(self.group_delay >= 0.0 && self.group_delay < params.pri) {
            return Err(Error::param(format!(
                "{} group delay {} s must lie in [0, PRI)",
                self.id, self.group_delay
            )));
        }
        if !(self.passive_gain_db.is_finite() && self.passive_phase.is_finite()) {
            return Err(Error::param(format!("{} passive offsets must be finite", self.id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkModel {
    /// P1, P2, P3 in that order.
    pub paths: [PathModel; 3],
    /// Per-capture SNR; `None` disables noise.
    pub snr_db: Option<f64>,
    pub temperature_step: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub reference_temperature: f64,
    /// Pulses captured per path and temperature, for coherent summation.
    pub pulses_per_dwell: usize,
    pub seed: u64,
}

impl Default for NetworkModel {
    fn default() -> Self {
        default_network()
    }
}

impl NetworkModel {
    pub fn path(&self, id: PathId) -> &PathModel {
        &self.paths[id.index()]
    }

    pub fn path_mut(&mut self, id: PathId) -> &mut PathModel {
        &mut self.paths[id.index()]
    }

    pub fn amplifier(&self, element: Element) -> Option<&AmplifierModel> {
        self.path(element.path()).amplifier.as_ref()
    }

    /// Sweep temperatures `t_min + k·step`, up to and including `t_max`.
    pub fn temperatures(&self) -> Vec<f64> {
        let count = ((self.t_max - self.t_min) / self.temperature_step + 1e-9).floor() as usize;
        (0..=count)
            .map(|k| round_temperature(self.t_min + k as f64 * self.temperature_step))
            .collect()
    }

    pub fn validate(&self, params: &ChirpParams) -> Result<()> {
        params.validate()?;
        if !(self.temperature_step > 0.0 && self.temperature_step.is_finite()) {
            return Err(Error::param("temperature step must be positive"));
        }
        if !(self.t_min < self.t_max) {
            return Err(Error::param(format!(
                "sweep range [{}, {}] is empty",
                self.t_min, self.t_max
            )));
        }
        if self.reference_temperature < self.t_min - TEMPERATURE_TOLERANCE
            || self.reference_temperature > self.t_max + TEMPERATURE_TOLERANCE
        {
            return Err(Error::param("reference temperature outside the sweep range"));
        }
        if self.pulses_per_dwell < 1 {
            return Err(Error::param("pulses per dwell must be at least 1"));
        }
        if let Some(snr) = self.snr_db {
            if snr.is_nan() {
                return Err(Error::param("SNR must be a number"));
            }
        }
        for (k, p) in self.paths.iter().enumerate() {
            if p.id != PathId::ALL[k] {
                return Err(Error::param(format!("path slot {k} holds {}", p.id)));
            }
            p.validate(params, self.reference_temperature)?;
        }
        Ok(())
    }
}

pub(crate) fn round_temperature(t: f64) -> f64 {
    (t * 1e9).round() / 1e9
}

/// The distortion a capture went through.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Distortion {
    pub gain_db: f64,
    pub phase: f64,
    pub delay: f64,
}

/// True amplifier state at capture time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmplifierTruth {
    pub element: Element,
    pub gain_db: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureRecord {
    pub temperature: f64,
    pub path: PathId,
    pub pulse_index: usize,
    pub pulse: SampledSignal,
    /// Ground truth; for checks only, never read by the estimators.
    pub truth: Distortion,
    pub amplifier_truth: Option<AmplifierTruth>,
}

/// Sends one generator pulse through `path` at `temperature`.
pub fn propagate(
    params: &ChirpParams,
    path: &PathModel,
    temperature: f64,
    snr_db: Option<f64>,
    seed: u64,
) -> Result<CaptureRecord> {
    propagate_at(params, path, temperature, snr_db, seed, 0, 0.0)
}

fn propagate_at(
    params: &ChirpParams,
    path: &PathModel,
    temperature: f64,
    snr_db: Option<f64>,
    seed: u64,
    pulse_index: usize,
    start_time: f64,
) -> Result<CaptureRecord> {
    let (gain_db, phase) = path.distortion_at(temperature)?;
    let ideal = generate_chirp_at(params, start_time)?;
    let mut pulse = apply_gain_phase(&ideal, gain_db, phase);
    if path.group_delay != 0.0 {
        pulse = apply_delay(&pulse, path.group_delay)?;
    }
    if let Some(snr) = snr_db {
        pulse = add_awgn(&pulse, snr, seed)?;
    }
    let amplifier_truth = match &path.amplifier {
        Some(a) => Some(AmplifierTruth {
            element: a.element,
            gain_db: a.gain_db_at(temperature)?,
            phase: a.phase_at(temperature)?,
        }),
        None => None,
    };
    Ok(CaptureRecord {
        temperature,
        path: path.id,
        pulse_index,
        pulse,
        truth: Distortion {
            gain_db,
            phase,
            delay: path.group_delay,
        },
        amplifier_truth,
    })
}

/// Pulse train captured while the switches step through `schedule`.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingCapture {
    pub records: Vec<CaptureRecord>,
    /// Indices `i` where `records[i]` is on a different path than
    /// `records[i - 1]`.
    pub boundaries: Vec<usize>,
}

/// Captures consecutive pulses, one PRI apart, routed per `schedule`.
/// Switching happens only between pulses.
pub fn capture_switching_sequence(
    params: &ChirpParams,
    model: &NetworkModel,
    schedule: &[(PathId, usize)],
    temperature: f64,
) -> Result<SwitchingCapture> {
    if schedule.iter().map(|s| s.1).sum::<usize>() == 0 {
        return Err(Error::param("switching schedule is empty"));
    }
    let mut records = Vec::new();
    let mut boundaries = Vec::new();
    let mut k = 0usize;
    for &(id, count) in schedule {
        let path = model.path(id);
        for _ in 0..count {
            if let Some(prev) = records.last() {
                let prev: &CaptureRecord = prev;
                if prev.path != id {
                    boundaries.push(k);
                }
            }
            let seed = derive_seed(model.seed, &[0x5357, temperature.to_bits(), k as u64]);
            records.push(propagate_at(
                params,
                path,
                temperature,
                model.snr_db,
                seed,
                k,
                k as f64 * params.pri,
            )?);
            k += 1;
        }
    }
    Ok(SwitchingCapture { records, boundaries })
}

/// All captures at one sweep temperature: `pulses_per_dwell` pulses for each
/// of P1, P2, P3, in path order.
#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureCaptures {
    pub temperature: f64,
    pub captures: Vec<CaptureRecord>,
}

impl TemperatureCaptures {
    pub fn path(&self, id: PathId) -> impl Iterator<Item = &CaptureRecord> {
        self.captures.iter().filter(move |c| c.path == id)
    }
}

/// Runs the full temperature sweep. Temperatures are simulated in parallel;
/// every pulse draws noise from its own seed, so the result does not depend
/// on scheduling.
pub fn thermal_sweep(params: &ChirpParams, model: &NetworkModel) -> Result<Vec<TemperatureCaptures>> {
    model.validate(params)?;
    let dwell = model.pulses_per_dwell;
    model
        .temperatures()
        .into_par_iter()
        .enumerate()
        .map(|(ti, t)| {
            let mut captures = Vec::with_capacity(3 * dwell);
            for id in PathId::ALL {
                for p in 0..dwell {
                    let k = id.index() * dwell + p;
                    let seed = derive_seed(model.seed, &[ti as u64, id.index() as u64, p as u64]);
                    let rec = propagate_at(params, model.path(id), t, model.snr_db, seed, p, k as f64 * params.pri)
                        .map_err(|e| e.context(format!("{id} at {t} °C")))?;
                    captures.push(rec);
                }
            }
            Ok(TemperatureCaptures {
                temperature: t,
                captures,
            })
        })
        .collect()
}

/// Mixes `parts` into `base` (SplitMix64 finalizer per word).
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    parts.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}

/// HPA drift extremes over the default sweep (gain dB, phase degrees).
pub const DEFAULT_HPA_EXTREMES: (f64, f64) = (0.43, 31.73);
/// LNA drift extremes over the default sweep (gain dB, phase degrees).
pub const DEFAULT_LNA_EXTREMES: (f64, f64) = (0.49, 12.60);

/// The default scenario: 25 → 30 °C in 0.2 °C steps, reference at 25 °C,
/// near-linear drifts reaching the extremes above at 30 °C, 30 dB SNR and 16
/// pulses per dwell.
pub fn default_network() -> NetworkModel {
    let (t0, t1) = (25.0, 30.0);
    let mid = 27.5;
    let curve = |mid_v: f64, end: f64| DriftCurve::new(vec![[t0, 0.0], [mid, mid_v], [t1, end]]).expect("valid knots");
    let deg = |d: f64| d.to_radians();
    let hpa = AmplifierModel {
        element: Element::Hpa,
        reference_gain_db: 30.0,
        reference_phase: 0.9,
        gain_drift: curve(0.2, DEFAULT_HPA_EXTREMES.0),
        phase_drift: curve(deg(15.5), deg(DEFAULT_HPA_EXTREMES.1)),
    };
    let lna = AmplifierModel {
        element: Element::Lna,
        reference_gain_db: 25.0,
        reference_phase: -1.3,
        gain_drift: curve(-0.23, -DEFAULT_LNA_EXTREMES.0),
        phase_drift: curve(deg(-6.1), deg(-DEFAULT_LNA_EXTREMES.1)),
    };
    NetworkModel {
        paths: [
            PathModel {
                id: PathId::P1,
                passive_gain_db: -30.0,
                passive_phase: 0.35,
                group_delay: 12.4e-9,
                amplifier: Some(hpa),
                passive_drift: None,
            },
            PathModel {
                id: PathId::P2,
                passive_gain_db: -25.0,
                passive_phase: -0.6,
                group_delay: 9.1e-9,
                amplifier: Some(lna),
                passive_drift: None,
            },
            PathModel {
                id: PathId::P3,
                passive_gain_db: 0.0,
                passive_phase: 0.0,
                group_delay: 6.0e-9,
                amplifier: None,
                passive_drift: None,
            },
        ],
        snr_db: Some(30.0),
        temperature_step: 0.2,
        t_min: t0,
        t_max: t1,
        reference_temperature: t0,
        pulses_per_dwell: 16,
        seed: 2024,
    }
}

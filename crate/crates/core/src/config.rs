//! Scenario files.
//!
//! A scenario is a TOML document with `chirp`, `network`, `sweep`,
//! `optimizer`, `calibration`, `bench` and `output` sections. Angles are in
//! degrees and delays in nanoseconds; everything is converted to radians and
//! seconds on the way in. Every field has a default, so an empty file is the
//! default calibration scenario.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::benchmark::BenchScenario;
use crate::calibration::{
    AmplifierReference, CalibrationSettings, NominalAmplifiers, OffsetMode, OffsetTable, ReferenceMode,
};
use crate::chirp::{ChirpParams, PhaseConvention};
use crate::netsim::{
    default_network, AmplifierModel, DriftCurve, Element, NetworkModel, PassiveDrift, PathId, PathModel,
};
use crate::optimizer::{Algorithm, FitParams, OptimizerConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChirpSection {
    pub amplitude: f64,
    pub phase_deg: f64,
    pub bandwidth_hz: f64,
    pub pulse_duration_s: f64,
    pub sample_rate_hz: f64,
    pub pri_s: f64,
    /// Frequency at the pulse start; defaults to −bandwidth/2.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start_frequency_hz: Option<f64>,
    pub convention: PhaseConvention,
}

impl Default for ChirpSection {
    fn default() -> Self {
        let p = ChirpParams::default();
        ChirpSection {
            amplitude: p.amplitude,
            phase_deg: p.phase.to_degrees(),
            bandwidth_hz: p.bandwidth(),
            pulse_duration_s: p.pulse_duration,
            sample_rate_hz: p.sample_rate,
            pri_s: p.pri,
            start_frequency_hz: None,
            convention: p.convention,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmplifierSection {
    pub reference_gain_db: f64,
    pub reference_phase_deg: f64,
    /// `[temperature °C, Δgain dB]` knots.
    pub gain_drift_db: Vec<[f64; 2]>,
    /// `[temperature °C, Δphase °]` knots.
    pub phase_drift_deg: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PassiveDriftSection {
    pub gain_drift_db: Vec<[f64; 2]>,
    pub phase_drift_deg: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSection {
    #[serde(default)]
    pub passive_gain_db: f64,
    #[serde(default)]
    pub passive_phase_deg: f64,
    #[serde(default)]
    pub group_delay_ns: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplifier: Option<AmplifierSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub passive_drift: Option<PassiveDriftSection>,
}

impl PathSection {
    fn from_model(p: &PathModel) -> Self {
        let deg = |c: &DriftCurve| c.knots().iter().map(|&[t, v]| [t, v.to_degrees()]).collect();
        PathSection {
            passive_gain_db: p.passive_gain_db,
            passive_phase_deg: p.passive_phase.to_degrees(),
            group_delay_ns: p.group_delay * 1e9,
            amplifier: p.amplifier.as_ref().map(|a| AmplifierSection {
                reference_gain_db: a.reference_gain_db,
                reference_phase_deg: a.reference_phase.to_degrees(),
                gain_drift_db: a.gain_drift.knots().to_vec(),
                phase_drift_deg: deg(&a.phase_drift),
            }),
            passive_drift: p.passive_drift.as_ref().map(|d| PassiveDriftSection {
                gain_drift_db: d.gain_drift.knots().to_vec(),
                phase_drift_deg: deg(&d.phase_drift),
            }),
        }
    }

    fn to_model(&self, id: PathId) -> Result<PathModel> {
        let ctx = |e: Error| Error::Config(format!("network.{}: {e}", id.to_string().to_lowercase()));
        let rad = |knots: &[[f64; 2]]| DriftCurve::new(knots.iter().map(|&[t, v]| [t, v.to_radians()]).collect());
        let amplifier = match (&self.amplifier, id.element()) {
            (Some(a), Some(element)) => Some(AmplifierModel {
                element,
                reference_gain_db: a.reference_gain_db,
                reference_phase: a.reference_phase_deg.to_radians(),
                gain_drift: DriftCurve::new(a.gain_drift_db.clone()).map_err(ctx)?,
                phase_drift: rad(&a.phase_drift_deg).map_err(ctx)?,
            }),
            (None, None) => None,
            (Some(_), None) => return Err(ctx(Error::param("P3 carries no amplifier"))),
            (None, Some(e)) => return Err(ctx(Error::param(format!("missing {e} amplifier section")))),
        };
        let passive_drift = match &self.passive_drift {
            Some(d) => Some(PassiveDrift {
                gain_drift: DriftCurve::new(d.gain_drift_db.clone()).map_err(ctx)?,
                phase_drift: rad(&d.phase_drift_deg).map_err(ctx)?,
            }),
            None => None,
        };
        Ok(PathModel {
            id,
            passive_gain_db: self.passive_gain_db,
            passive_phase: self.passive_phase_deg.to_radians(),
            group_delay: self.group_delay_ns / 1e9,
            amplifier,
            passive_drift,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    /// Per-capture SNR in dB; `inf` for noiseless captures.
    #[serde(with = "snr_serde")]
    pub snr_db: f64,
    pub p1: PathSection,
    pub p2: PathSection,
    pub p3: PathSection,
}

impl Default for NetworkSection {
    fn default() -> Self {
        let n = default_network();
        NetworkSection {
            snr_db: n.snr_db.unwrap_or(f64::INFINITY),
            p1: PathSection::from_model(n.path(PathId::P1)),
            p2: PathSection::from_model(n.path(PathId::P2)),
            p3: PathSection::from_model(n.path(PathId::P3)),
        }
    }
}

fn snr_option(snr_db: f64) -> Option<f64> {
    (snr_db != f64::INFINITY).then_some(snr_db)
}

/// JSON has no infinity, so "no noise" is written as the string `"inf"`;
/// a bare TOML `inf` is accepted too.
mod snr_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if *v == f64::INFINITY {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Number(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("expected a number or \"inf\", got \"{t}\""))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub t_min: f64,
    pub t_max: f64,
    pub step: f64,
    pub t_ref: f64,
    pub pulses_per_dwell: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        let n = default_network();
        SweepSection {
            t_min: n.t_min,
            t_max: n.t_max,
            step: n.temperature_step,
            t_ref: n.reference_temperature,
            pulses_per_dwell: n.pulses_per_dwell,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffsetSource {
    /// Measure the passive offsets at the reference temperature against the
    /// amplifiers' nominal reference values.
    #[default]
    Characterize,
    /// Take them from the network description.
    Table,
    /// Assume none.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalReference {
    pub hpa_gain_db: f64,
    pub hpa_phase_deg: f64,
    pub lna_gain_db: f64,
    pub lna_phase_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSection {
    pub offsets: OffsetSource,
    /// Reference values from a table instead of the reference-temperature
    /// measurement.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub external_reference: Option<ExternalReference>,
    /// `calibrate --gate` thresholds on the compensated maxima.
    pub gate_gain_db: f64,
    pub gate_phase_deg: f64,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        CalibrationSection {
            offsets: OffsetSource::Characterize,
            external_reference: None,
            gate_gain_db: 0.06,
            gate_phase_deg: 2.42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub true_amplitude: f64,
    pub true_phase_deg: f64,
    /// `inf` for noiseless runs.
    #[serde(with = "snr_serde")]
    pub snr_db: f64,
    pub seeds: u64,
    pub algorithms: Vec<Algorithm>,
}

impl Default for BenchSection {
    fn default() -> Self {
        let s = BenchScenario::standard();
        BenchSection {
            true_amplitude: s.true_amplitude,
            true_phase_deg: s.true_phase.to_degrees(),
            snr_db: s.snr_db.unwrap_or(f64::INFINITY),
            seeds: 20,
            algorithms: vec![Algorithm::Adam, Algorithm::MomentumGd],
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    #[default]
    Csv,
    Json,
    Bin,
}

impl std::str::FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(DataFormat::Csv),
            "json" => Ok(DataFormat::Json),
            "bin" => Ok(DataFormat::Bin),
            other => Err(Error::param(format!("unknown format '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub directory: Option<String>,
    pub format: DataFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub chirp: ChirpSection,
    pub network: NetworkSection,
    pub sweep: SweepSection,
    pub optimizer: OptimizerConfig,
    pub calibration: CalibrationSection,
    pub bench: BenchSection,
    pub output: OutputSection,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: default_network().seed,
            chirp: ChirpSection::default(),
            network: NetworkSection::default(),
            sweep: SweepSection::default(),
            optimizer: OptimizerConfig::default(),
            calibration: CalibrationSection::default(),
            bench: BenchSection::default(),
            output: OutputSection::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
        Self::from_toml_str(&text).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.chirp_params()?;
        self.network_model()?.validate(&p).map_err(|e| Error::Config(e.to_string()))?;
        self.optimizer.validate().map_err(|e| Error::Config(format!("optimizer: {e}")))?;
        if self.bench.seeds == 0 {
            return Err(Error::Config("bench.seeds must be at least 1".into()));
        }
        if !(self.bench.true_amplitude > 0.0) {
            return Err(Error::Config("bench.true_amplitude must be positive".into()));
        }
        if !(self.calibration.gate_gain_db >= 0.0 && self.calibration.gate_phase_deg >= 0.0) {
            return Err(Error::Config("gate thresholds must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn chirp_params(&self) -> Result<ChirpParams> {
        let c = &self.chirp;
        let mut p = ChirpParams::from_bandwidth(c.bandwidth_hz, c.pulse_duration_s, c.sample_rate_hz, c.pri_s);
        if let Some(f) = c.start_frequency_hz {
            p.frequency = f;
        }
        p = p.with_amplitude_phase(c.amplitude, c.phase_deg.to_radians());
        p.convention = c.convention;
        p.validate().map_err(|e| Error::Config(format!("chirp: {e}")))?;
        Ok(p)
    }

    pub fn network_model(&self) -> Result<NetworkModel> {
        let n = &self.network;
        Ok(NetworkModel {
            paths: [
                n.p1.to_model(PathId::P1)?,
                n.p2.to_model(PathId::P2)?,
                n.p3.to_model(PathId::P3)?,
            ],
            snr_db: snr_option(n.snr_db),
            temperature_step: self.sweep.step,
            t_min: self.sweep.t_min,
            t_max: self.sweep.t_max,
            reference_temperature: self.sweep.t_ref,
            pulses_per_dwell: self.sweep.pulses_per_dwell,
            seed: self.seed,
        })
    }

    /// Nominal amplifier reference values from the network section.
    pub fn nominal_amplifiers(&self) -> Result<NominalAmplifiers> {
        let net = self.network_model()?;
        let get = |e: Element| {
            let a = net
                .amplifier(e)
                .ok_or_else(|| Error::Config(format!("network has no {e}")))?;
            Ok::<_, Error>(AmplifierReference {
                gain_db: a.reference_gain_db,
                phase: a.reference_phase,
            })
        };
        Ok(NominalAmplifiers {
            hpa: get(Element::Hpa)?,
            lna: get(Element::Lna)?,
        })
    }

    pub fn calibration_settings(&self) -> Result<CalibrationSettings> {
        let net = self.network_model()?;
        let offsets = match self.calibration.offsets {
            OffsetSource::Characterize => OffsetMode::Characterize(self.nominal_amplifiers()?),
            OffsetSource::Table => OffsetMode::Table(OffsetTable::from_network(&net)),
            OffsetSource::None => OffsetMode::Table(OffsetTable::default()),
        };
        let mut s = CalibrationSettings::new(self.optimizer, self.sweep.t_ref, offsets);
        if let Some(r) = self.calibration.external_reference {
            s.reference = ReferenceMode::External(NominalAmplifiers {
                hpa: AmplifierReference {
                    gain_db: r.hpa_gain_db,
                    phase: r.hpa_phase_deg.to_radians(),
                },
                lna: AmplifierReference {
                    gain_db: r.lna_gain_db,
                    phase: r.lna_phase_deg.to_radians(),
                },
            });
        }
        s.expected_temperatures = net.temperatures();
        Ok(s)
    }

    pub fn bench_scenario(&self) -> Result<BenchScenario> {
        Ok(BenchScenario {
            id: if *self == ScenarioConfig::default() {
                "standard".into()
            } else {
                format!("custom-{}", &self.config_hash()?[..12])
            },
            generator: self.chirp_params()?,
            true_amplitude: self.bench.true_amplitude,
            true_phase: self.bench.true_phase_deg.to_radians(),
            snr_db: snr_option(self.bench.snr_db),
            init: FitParams::initial(),
        })
    }

    /// Bench seeds `seed, seed + 1, …`.
    pub fn bench_seeds(&self) -> Vec<u64> {
        (0..self.bench.seeds).map(|k| self.seed.wrapping_add(k)).collect()
    }

    /// SHA-256 over every field except the output section, as hex.
    pub fn config_hash(&self) -> Result<String> {
        let semantic = ScenarioConfig {
            output: OutputSection::default(),
            ..self.clone()
        };
        let bytes = serde_json::to_vec(&semantic)?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }
}

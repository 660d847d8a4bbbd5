//! Linear-FM chirp generation and the complex-baseband signal arithmetic
//! shared by the simulator and the estimators.
//!
//! A pulse is modelled as
//!
//! ```text
//! s(t) = A · exp(j(π·Kr·t² + c·π·f·t + ω)),   0 ≤ t < T
//! ```
//!
//! with `c = 2` under [`PhaseConvention::Standard`] and `c = 1` under
//! [`PhaseConvention::PaperLiteral`]. `f` is the instantaneous frequency at
//! the pulse start, so the default settings (`f = −B/2`) sweep symmetrically
//! across baseband.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::units::wrap_phase;
use crate::{Error, Result};

pub type Cplx = Complex64;

/// Coefficient of the linear frequency term in the chirp phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseConvention {
    /// `2π·f·t`, the usual complex-exponential convention.
    #[default]
    Standard,
    /// `π·f·t`, the literal variant of the frequency term (halves the effective frequency).
    PaperLiteral,
}

impl PhaseConvention {
    fn frequency_coefficient(self) -> f64 {
        match self {
            PhaseConvention::Standard => 2.0 * PI,
            PhaseConvention::PaperLiteral => PI,
        }
    }
}

/// Parametric chirp plus the timing it is sampled with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChirpParams {
    /// Linear amplitude `A`.
    pub amplitude: f64,
    /// Chirp rate `Kr` in Hz/s.
    pub chirp_rate: f64,
    /// Instantaneous frequency at the pulse start, Hz.
    pub frequency: f64,
    /// Phase `ω` in radians.
    pub phase: f64,
    /// Pulse duration `T` in seconds.
    pub pulse_duration: f64,
    /// Sample rate in Hz.
    pub sample_rate: f64,
    /// Pulse repetition interval in seconds.
    pub pri: f64,
    #[serde(default)]
    pub convention: PhaseConvention,
}

impl Default for ChirpParams {
    /// Ku-band calibration setting: 80 MHz sweep over 1.001 µs, sampled at
    /// 350 MHz, 20 µs PRI, unit amplitude and zero phase.
    fn default() -> Self {
        ChirpParams::from_bandwidth(80e6, 1.001e-6, 350e6, 20e-6)
    }
}

impl ChirpParams {
    /// Chirp sweeping `bandwidth` Hz over `pulse_duration`, centred at
    /// baseband (start frequency −B/2).
    pub fn from_bandwidth(bandwidth: f64, pulse_duration: f64, sample_rate: f64, pri: f64) -> Self {
        ChirpParams {
            amplitude: 1.0,
            chirp_rate: bandwidth / pulse_duration,
            frequency: -bandwidth / 2.0,
            phase: 0.0,
            pulse_duration,
            sample_rate,
            pri,
            convention: PhaseConvention::Standard,
        }
    }

    /// Unmodulated tone at `frequency`, sharing this pulse's timing.
    pub fn tone(&self, frequency: f64) -> Self {
        ChirpParams {
            chirp_rate: 0.0,
            frequency,
            ..*self
        }
    }

    /// Same generator settings with a different amplitude/phase; the phase
    /// is normalized.
    pub fn with_amplitude_phase(&self, amplitude: f64, phase: f64) -> Self {
        ChirpParams {
            amplitude,
            phase: wrap_phase(phase),
            ..*self
        }
    }

    pub fn bandwidth(&self) -> f64 {
        self.chirp_rate * self.pulse_duration
    }

    /// Samples per pulse, `floor(T·fs)`.
    pub fn num_samples(&self) -> usize {
        let n = self.pulse_duration * self.sample_rate;
        // absorb representation error in products like 1e-6 · 350e6
        (n + n.abs() * 1e-12).floor().max(0.0) as usize
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.amplitude,
            self.chirp_rate,
            self.frequency,
            self.phase,
            self.pulse_duration,
            self.sample_rate,
            self.pri,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::param("chirp parameters must be finite"));
        }
        if self.pulse_duration <= 0.0 {
            return Err(Error::param(format!(
                "pulse duration must be positive, got {}",
                self.pulse_duration
            )));
        }
        if self.sample_rate <= 0.0 {
            return Err(Error::param(format!(
                "sample rate must be positive, got {}",
                self.sample_rate
            )));
        }
        if self.pri < self.pulse_duration {
            return Err(Error::param(format!(
                "PRI {} s shorter than pulse duration {} s",
                self.pri, self.pulse_duration
            )));
        }
        if self.amplitude < 0.0 {
            return Err(Error::param(format!(
                "amplitude must be non-negative, got {}",
                self.amplitude
            )));
        }
        if self.num_samples() < 2 {
            return Err(Error::param(format!(
                "pulse holds {} samples, need at least 2",
                self.num_samples()
            )));
        }
        Ok(())
    }

    /// Instantaneous phase at time `t` (pulse-relative), excluding `ω`.
    pub fn sweep_phase(&self, t: f64) -> f64 {
        PI * self.chirp_rate * t * t + self.convention.frequency_coefficient() * self.frequency * t
    }
}

/// Finite run of complex baseband samples at a fixed rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledSignal {
    samples: Vec<Cplx>,
    sample_rate: f64,
    start_time: f64,
}

impl SampledSignal {
    pub fn new(samples: Vec<Cplx>, sample_rate: f64, start_time: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::param("signal must hold at least one sample"));
        }
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(Error::param(format!("invalid sample rate {sample_rate}")));
        }
        if !start_time.is_finite() {
            return Err(Error::param("start time must be finite"));
        }
        if let Some(i) = samples.iter().position(|s| !(s.re.is_finite() && s.im.is_finite())) {
            return Err(Error::param(format!("sample {i} is not finite")));
        }
        Ok(SampledSignal {
            samples,
            sample_rate,
            start_time,
        })
    }

    pub fn samples(&self) -> &[Cplx] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Cplx> {
        self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn start_time(&self) -> f64 {
        self.start_time
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Time of sample `i`.
    pub fn time(&self, i: usize) -> f64 {
        self.start_time + i as f64 / self.sample_rate
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum()
    }

    /// Mean power per sample.
    pub fn power(&self) -> f64 {
        self.energy() / self.samples.len() as f64
    }

    pub fn with_start_time(mut self, start_time: f64) -> Self {
        self.start_time = start_time;
        self
    }

    /// Replaces the samples, keeping rate and start time. Callers guarantee
    /// finiteness and the same length.
    fn with_samples(&self, samples: Vec<Cplx>) -> Self {
        debug_assert_eq!(samples.len(), self.samples.len());
        SampledSignal {
            samples,
            sample_rate: self.sample_rate,
            start_time: self.start_time,
        }
    }

    pub fn scale(&self, factor: Cplx) -> Self {
        self.with_samples(self.samples.iter().map(|s| s * factor).collect())
    }

    /// Checks that two signals share length and sample rate.
    pub fn check_compatible(&self, other: &SampledSignal) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::param(format!(
                "signal length mismatch: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        if (self.sample_rate - other.sample_rate).abs() > 1e-9 * self.sample_rate {
            return Err(Error::param(format!(
                "sample rate mismatch: {} vs {}",
                self.sample_rate, other.sample_rate
            )));
        }
        Ok(())
    }
}

/// Samples one pulse starting at `t = 0`.
pub fn generate_chirp(params: &ChirpParams) -> Result<SampledSignal> {
    generate_chirp_at(params, 0.0)
}

/// Samples one pulse whose first sample sits at `start_time`. The chirp
/// phase stays referenced to the pulse start, so `start_time` only labels
/// the samples.
pub fn generate_chirp_at(params: &ChirpParams, start_time: f64) -> Result<SampledSignal> {
    params.validate()?;
    let n = params.num_samples();
    let omega = wrap_phase(params.phase);
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / params.sample_rate;
            Cplx::from_polar(params.amplitude, params.sweep_phase(t) + omega)
        })
        .collect();
    SampledSignal::new(samples, params.sample_rate, start_time)
}

/// Multiplies every sample by `10^(gain_db/20)·e^{j·phase_shift}`.
pub fn apply_gain_phase(sig: &SampledSignal, gain_db: f64, phase_shift: f64) -> SampledSignal {
    sig.scale(Cplx::from_polar(
        crate::units::db_to_amplitude(gain_db),
        phase_shift,
    ))
}

/// Delays a signal by `delay` seconds, keeping its length.
///
/// The nearest whole number of samples is an index shift with zero fill; the
/// remaining fraction (|δ| ≤ ½ sample) is a linear phase ramp applied to a
/// zero-padded spectrum, i.e. band-limited interpolation. Content pushed past
/// either end of the window is dropped.
pub fn apply_delay(sig: &SampledSignal, delay: f64) -> Result<SampledSignal> {
    if !delay.is_finite() || delay.abs() >= sig.duration() {
        return Err(Error::param(format!(
            "delay {delay} s outside ±{} s signal duration",
            sig.duration()
        )));
    }
    let n = sig.len();
    let shift = delay * sig.sample_rate();
    let whole = shift.round();
    let frac = shift - whole;
    let whole = whole as i64;

    let mut out = vec![Cplx::new(0.0, 0.0); n];
    for (i, o) in out.iter_mut().enumerate() {
        let src = i as i64 - whole;
        if (0..n as i64).contains(&src) {
            *o = sig.samples()[src as usize];
        }
    }

    if frac != 0.0 {
        let m = (2 * n).next_power_of_two();
        let (fwd, inv) = fft_pair(m);
        let mut buf = out;
        buf.resize(m, Cplx::new(0.0, 0.0));
        fwd.process(&mut buf);
        let half = m / 2;
        for (k, b) in buf.iter_mut().enumerate() {
            let rot = if k == half {
                // Nyquist bin: average of the ±half ramps keeps real signals real
                Cplx::new((PI * frac).cos(), 0.0)
            } else {
                let freq = if k < half { k as f64 } else { k as f64 - m as f64 };
                Cplx::from_polar(1.0, -2.0 * PI * freq * frac / m as f64)
            };
            *b *= rot;
        }
        inv.process(&mut buf);
        let scale = 1.0 / m as f64;
        buf.truncate(n);
        buf.iter_mut().for_each(|b| *b *= scale);
        out = buf;
    }
    Ok(sig.with_samples(out))
}

/// Adds complex white Gaussian noise at `snr_db` relative to the signal's
/// mean power. `snr_db = +∞` disables the noise. Deterministic per seed.
pub fn add_awgn(sig: &SampledSignal, snr_db: f64, seed: u64) -> Result<SampledSignal> {
    if snr_db == f64::INFINITY {
        return Ok(sig.clone());
    }
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(Error::param(format!("invalid SNR {snr_db} dB")));
    }
    let power = sig.power();
    if power <= 0.0 {
        return Err(Error::param("cannot set SNR on a zero-power signal"));
    }
    let noise_power = power / crate::units::db_to_power(snr_db);
    let sigma = (noise_power / 2.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = sig
        .samples()
        .iter()
        .map(|s| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            s + Cplx::new(re * sigma, im * sigma)
        })
        .collect();
    Ok(sig.with_samples(samples))
}

pub(crate) fn fft_pair(len: usize) -> (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>) {
    let mut planner = FftPlanner::new();
    (planner.plan_fft_forward(len), planner.plan_fft_inverse(len))
}

//! Amplitude/phase fitting of a chirp model to a received pulse.
//!
//! The model is `y_i = A·e^{jω}·u_i`, where `u_i` is a unit-amplitude,
//! zero-phase reference waveform (the generator's chirp, possibly delayed).
//! The cost is the mean squared complex residual
//!
//! ```text
//! E(A, ω) = (1/N) Σ |d_i − y_i|²
//! ```
//!
//! with partial derivatives
//!
//! ```text
//! ∂E/∂A = −(2/N) Σ Re(conj(d_i − y_i) · e^{jω} u_i)
//! ∂E/∂ω = −(2/N) Σ Re(conj(d_i − y_i) · j·y_i)
//! ```
//!
//! Both are evaluated full-batch every epoch. [`adam_step`] and
//! [`momentum_gd_step`] are the two update rules; [`fit`] drives either one
//! to convergence.

use serde::{Deserialize, Serialize};

use crate::chirp::{generate_chirp, ChirpParams, Cplx, SampledSignal};
use crate::units::wrap_phase;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Adam,
    #[serde(rename = "momentum")]
    MomentumGd,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Adam => "adam",
            Algorithm::MomentumGd => "momentum",
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "adam" => Ok(Algorithm::Adam),
            "momentum" | "momentum_gd" | "momentumgd" | "gd" => Ok(Algorithm::MomentumGd),
            other => Err(Error::param(format!("unknown algorithm '{other}'"))),
        }
    }
}

/// How Adam turns its moment estimates into a parameter update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasCorrection {
    /// `θ ← θ − α·m̂ / (√v̂ + ε)`.
    #[default]
    Standard,
    /// `θ ← θ − α·m / √(v̂ + ε)`: uncorrected first moment, ε under the root.
    #[serde(rename = "paper")]
    PaperLiteral,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub algorithm: Algorithm,
    /// Stepsize α, shared by both algorithms.
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Momentum coefficient μ of the gradient-descent baseline.
    pub momentum: f64,
    pub max_epochs: usize,
    /// An epoch is "converged" once E ≤ ratio · E_initial.
    pub convergence_ratio: f64,
    pub bias_correction: BiasCorrection,
    /// Plateau stop: relative change of E below `plateau_tolerance` across
    /// `plateau_window` epochs.
    pub plateau_window: usize,
    pub plateau_tolerance: f64,
    /// Abort once E exceeds this multiple of E_initial.
    pub divergence_factor: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            algorithm: Algorithm::Adam,
            step_size: 1.5e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            momentum: 0.9,
            max_epochs: 100_000,
            convergence_ratio: 0.01,
            bias_correction: BiasCorrection::Standard,
            plateau_window: 50,
            plateau_tolerance: 1e-12,
            divergence_factor: 1e6,
        }
    }
}

impl OptimizerConfig {
    pub fn with_algorithm(self, algorithm: Algorithm) -> Self {
        OptimizerConfig { algorithm, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Err(Error::param(format!("{what} out of range: {v}")));
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad("step size", self.step_size);
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return bad("beta1", self.beta1);
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return bad("beta2", self.beta2);
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon", self.epsilon);
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum", self.momentum);
        }
        if self.max_epochs < 1 {
            return Err(Error::param("max_epochs must be at least 1"));
        }
        if !(self.convergence_ratio > 0.0 && self.convergence_ratio < 1.0) {
            return bad("convergence ratio", self.convergence_ratio);
        }
        if self.plateau_window < 1 {
            return Err(Error::param("plateau window must be at least 1"));
        }
        if !(self.plateau_tolerance >= 0.0) {
            return bad("plateau tolerance", self.plateau_tolerance);
        }
        if !(self.divergence_factor > 1.0) {
            return bad("divergence factor", self.divergence_factor);
        }
        Ok(())
    }
}

/// The fitted pair (A, ω).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitParams {
    pub amplitude: f64,
    pub phase: f64,
}

impl FitParams {
    pub const fn new(amplitude: f64, phase: f64) -> Self {
        FitParams { amplitude, phase }
    }

    /// A = 1, ω = 0: the model starts as the undistorted generator output.
    pub const fn initial() -> Self {
        FitParams::new(1.0, 0.0)
    }

    fn as_array(self) -> [f64; 2] {
        [self.amplitude, self.phase]
    }

    fn from_array(a: [f64; 2]) -> Self {
        FitParams::new(a[0], a[1])
    }

    /// Folds a negative amplitude into the phase and wraps ω.
    pub fn normalized(self) -> Self {
        if self.amplitude < 0.0 {
            FitParams::new(-self.amplitude, wrap_phase(self.phase + std::f64::consts::PI))
        } else {
            FitParams::new(self.amplitude, wrap_phase(self.phase))
        }
    }

    /// The complex gain A·e^{jω}.
    pub fn phasor(self) -> Cplx {
        Cplx::from_polar(self.amplitude, self.phase)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gradient {
    pub amplitude: f64,
    pub phase: f64,
}

impl Gradient {
    fn as_array(self) -> [f64; 2] {
        [self.amplitude, self.phase]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub params: FitParams,
    pub first_moment: [f64; 2],
    pub second_moment: [f64; 2],
    pub first_moment_hat: [f64; 2],
    pub second_moment_hat: [f64; 2],
    /// Velocity of the momentum baseline.
    pub velocity: [f64; 2],
    pub epoch: u64,
}

impl OptimizerState {
    pub fn new(params: FitParams) -> Self {
        OptimizerState {
            params,
            first_moment: [0.0; 2],
            second_moment: [0.0; 2],
            first_moment_hat: [0.0; 2],
            second_moment_hat: [0.0; 2],
            velocity: [0.0; 2],
            epoch: 0,
        }
    }
}

/// One Adam update.
pub fn adam_step(
    state: &OptimizerState,
    grad: Gradient,
    config: &OptimizerConfig,
) -> Result<OptimizerState> {
    if config.algorithm != Algorithm::Adam {
        return Err(Error::param("adam_step called with a non-Adam config"));
    }
    let t = state.epoch + 1;
    let g = grad.as_array();
    let mut theta = state.params.as_array();
    let mut next = state.clone();
    let bc1 = 1.0 - config.beta1.powf(t as f64);
    let bc2 = 1.0 - config.beta2.powf(t as f64);
    for i in 0..2 {
        let m = config.beta1 * state.first_moment[i] + (1.0 - config.beta1) * g[i];
        let v = config.beta2 * state.second_moment[i] + (1.0 - config.beta2) * g[i] * g[i];
        let m_hat = m / bc1;
        let v_hat = v / bc2;
        theta[i] -= match config.bias_correction {
            BiasCorrection::Standard => config.step_size * m_hat / (v_hat.sqrt() + config.epsilon),
            BiasCorrection::PaperLiteral => config.step_size * m / (v_hat + config.epsilon).sqrt(),
        };
        next.first_moment[i] = m;
        next.second_moment[i] = v;
        next.first_moment_hat[i] = m_hat;
        next.second_moment_hat[i] = v_hat;
    }
    next.params = FitParams::from_array(theta);
    next.epoch = t;
    Ok(next)
}

/// One classical-momentum update: `v ← μv − α·g; θ ← θ + v`.
pub fn momentum_gd_step(
    state: &OptimizerState,
    grad: Gradient,
    config: &OptimizerConfig,
) -> Result<OptimizerState> {
    if config.algorithm != Algorithm::MomentumGd {
        return Err(Error::param("momentum_gd_step called with a non-momentum config"));
    }
    let g = grad.as_array();
    let mut theta = state.params.as_array();
    let mut next = state.clone();
    for i in 0..2 {
        let v = config.momentum * state.velocity[i] - config.step_size * g[i];
        theta[i] += v;
        next.velocity[i] = v;
    }
    next.params = FitParams::from_array(theta);
    next.epoch = state.epoch + 1;
    Ok(next)
}

/// Dispatches on `config.algorithm`.
pub fn step(state: &OptimizerState, grad: Gradient, config: &OptimizerConfig) -> Result<OptimizerState> {
    match config.algorithm {
        Algorithm::Adam => adam_step(state, grad, config),
        Algorithm::MomentumGd => momentum_gd_step(state, grad, config),
    }
}

/// Mean squared complex residual between two equally sampled signals.
pub fn cost(model: &SampledSignal, received: &SampledSignal) -> Result<f64> {
    model.check_compatible(received)?;
    let sum: f64 = model
        .samples()
        .iter()
        .zip(received.samples())
        .map(|(y, d)| (d - y).norm_sqr())
        .sum();
    Ok(sum / model.len() as f64)
}

/// Analytic (∂E/∂A, ∂E/∂ω) at the params' (A, ω), with Kr and f held at the
/// generator settings.
pub fn gradient(params: &ChirpParams, received: &SampledSignal) -> Result<Gradient> {
    let model = ChirpModel::from_params(params)?;
    model.check_received(received)?;
    Ok(model.cost_and_gradient(FitParams::new(params.amplitude, params.phase), received).1)
}

/// Unit-amplitude, zero-phase reference waveform the fit scales and rotates.
#[derive(Debug, Clone)]
pub struct ChirpModel {
    basis: SampledSignal,
}

impl ChirpModel {
    /// The generator chirp with (A, ω) stripped.
    pub fn from_params(params: &ChirpParams) -> Result<Self> {
        let unit = params.with_amplitude_phase(1.0, 0.0);
        Ok(ChirpModel {
            basis: generate_chirp(&unit)?,
        })
    }

    /// Any reference waveform, e.g. the generator chirp passed through the
    /// same group delay as the capture.
    pub fn from_waveform(basis: SampledSignal) -> Self {
        ChirpModel { basis }
    }

    pub fn basis(&self) -> &SampledSignal {
        &self.basis
    }

    pub fn evaluate(&self, p: FitParams) -> SampledSignal {
        self.basis.scale(p.phasor())
    }

    fn check_received(&self, received: &SampledSignal) -> Result<()> {
        self.basis.check_compatible(received)
    }

    /// Cost and gradient in one pass over the samples.
    pub fn cost_and_gradient(&self, p: FitParams, received: &SampledSignal) -> (f64, Gradient) {
        let rot = Cplx::from_polar(1.0, p.phase);
        let gain = rot * p.amplitude;
        let mut e = 0.0;
        let mut ga = 0.0;
        let mut gw = 0.0;
        for (u, d) in self.basis.samples().iter().zip(received.samples()) {
            let y = gain * u;
            let r = d - y;
            e += r.norm_sqr();
            ga += (r.conj() * rot * u).re;
            // Re(conj(r)·j·y) = −Im(conj(r)·y)
            gw -= (r.conj() * y).im;
        }
        let n = self.basis.len() as f64;
        (
            e / n,
            Gradient {
                amplitude: -2.0 * ga / n,
                phase: -2.0 * gw / n,
            },
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub amplitude: f64,
    pub phase: f64,
    pub final_cost: f64,
    pub error_history: Vec<f64>,
    pub epochs_run: usize,
    /// First epoch with E ≤ ratio · E_initial.
    pub converged_epoch: Option<usize>,
    pub algorithm: Algorithm,
}

impl FitResult {
    pub fn params(&self) -> FitParams {
        FitParams::new(self.amplitude, self.phase)
    }
}

/// Fits (A, ω) of the generator chirp to `received`; `fixed` supplies Kr, f
/// and timing, its own (A, ω) are ignored.
pub fn fit(
    received: &SampledSignal,
    fixed: &ChirpParams,
    init: FitParams,
    config: &OptimizerConfig,
) -> Result<FitResult> {
    let model = ChirpModel::from_params(fixed)?;
    fit_model(&model, received, init, config)
}

/// Runs the optimizer until `max_epochs`, a plateau, or an exact fit.
pub fn fit_model(
    model: &ChirpModel,
    received: &SampledSignal,
    init: FitParams,
    config: &OptimizerConfig,
) -> Result<FitResult> {
    config.validate()?;
    model.check_received(received)?;
    let window = config.plateau_window;
    // a fit started essentially at the optimum must not count rounding-level
    // wander as divergence
    let divergence_floor = 1e-12 * received.power();
    let mut state = OptimizerState::new(init);
    let mut history: Vec<f64> = Vec::with_capacity(config.max_epochs.min(1 << 16));
    let mut converged = None;

    for epoch in 0..config.max_epochs {
        let (e, grad) = model.cost_and_gradient(state.params, received);
        let initial = history.first().copied().unwrap_or(e);
        if !e.is_finite() || e > config.divergence_factor * initial.max(divergence_floor) {
            return Err(Error::Divergence {
                epoch,
                cost: e,
                amplitude: state.params.amplitude,
                phase: state.params.phase,
            });
        }
        history.push(e);
        if converged.is_none() && e <= config.convergence_ratio * initial {
            converged = Some(epoch);
        }
        if e == 0.0 || epoch + 1 == config.max_epochs {
            break;
        }
        if history.len() > window {
            let old = history[history.len() - 1 - window];
            if (e - old).abs() <= config.plateau_tolerance * old.abs() {
                break;
            }
        }
        state = step(&state, grad, config)?;
    }

    let p = state.params.normalized();
    Ok(FitResult {
        amplitude: p.amplitude,
        phase: p.phase,
        final_cost: *history.last().expect("at least one epoch"),
        epochs_run: history.len(),
        error_history: history,
        converged_epoch: converged,
        algorithm: config.algorithm,
    })
}

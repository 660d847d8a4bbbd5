//! Internal calibration of a radar's transmit/receive chain using the chirp
//! pulses it already radiates.
//!
//! The crate is organised along the processing chain:
//!
//! - [`chirp`]: linear-FM pulse generation and the signal arithmetic used
//!   everywhere else (gain/phase, group delay, white noise).
//! - [`optimizer`]: the amplitude/phase cost, its analytic gradient, Adam and
//!   a momentum gradient-descent baseline, and the fitting loop.
//! - [`netsim`]: a simulated three-path calibration network with thermally
//!   drifting HPA/LNA stages.
//! - [`calibration`]: delay/phase separation, coherent summation, amplifier
//!   gain/phase extraction and calibration factors.
//! - [`benchmark`]: learning-speed comparison and residual summaries.
//! - [`config`], [`formats`], [`cli`]: scenario files, on-disk layouts and the
//!   command-line front end.

pub mod benchmark;
pub mod calibration;
pub mod chirp;
pub mod cli;
pub mod config;
mod error;
pub mod formats;
pub mod netsim;
pub mod optimizer;
pub mod units;

pub use chirp::{ChirpParams, Cplx, PhaseConvention, SampledSignal};
pub use error::{Error, Result};
pub use optimizer::{Algorithm, BiasCorrection, FitParams, FitResult, OptimizerConfig};

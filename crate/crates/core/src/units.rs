//! Decibel and angle helpers. All phase comparisons in the crate go through
//! [`wrap_phase`] / [`circular_distance`].

use std::f64::consts::{PI, TAU};

/// Wraps an angle to (−π, π].
pub fn wrap_phase(x: f64) -> f64 {
    let r = x.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Unsigned angular distance between two phases, in [0, π].
pub fn circular_distance(a: f64, b: f64) -> f64 {
    wrap_phase(a - b).abs()
}

/// Wraps an angle in degrees to (−180°, 180°].
pub fn wrap_degrees(x: f64) -> f64 {
    wrap_phase(x.to_radians()).to_degrees()
}

/// Amplitude ratio for a gain in dB (20·log10 convention).
pub fn db_to_amplitude(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

pub fn amplitude_to_db(ratio: f64) -> f64 {
    20.0 * ratio.log10()
}

pub fn db_to_power(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn power_to_db(ratio: f64) -> f64 {
    10.0 * ratio.log10()
}

//! Unit conversions at the configuration boundary.

use std::f64::consts::TAU;

/// Ordinary frequency in GHz to angular frequency in rad/ns.
pub fn ghz(f: f64) -> f64 {
    TAU * f
}

pub fn mhz(f: f64) -> f64 {
    TAU * f * 1e-3
}

pub fn khz(f: f64) -> f64 {
    TAU * f * 1e-6
}

/// Angular frequency in rad/ns to ordinary frequency in GHz.
pub fn to_ghz(omega: f64) -> f64 {
    omega / TAU
}

pub fn us(t: f64) -> f64 {
    t * 1e3
}

pub fn ms(t: f64) -> f64 {
    t * 1e6
}

/// Phase quoted as a fraction of 2π (the "x/2π" convention) to radians.
pub fn turns(x: f64) -> f64 {
    TAU * x
}

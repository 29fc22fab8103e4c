//! Coherence time series shared by the predictor and the simulators.

use serde::{Deserialize, Serialize};

use crate::linalg::C64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Protocol {
    Ramsey,
    /// π pulse at `pulse_fraction` of each recorded time.
    Echo {
        pulse_fraction: f64,
    },
}

impl Protocol {
    pub fn echo() -> Self {
        Protocol::Echo { pulse_fraction: 0.5 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Protocol::Ramsey => "ramsey",
            Protocol::Echo { .. } => "echo",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesMeta {
    pub protocol: Protocol,
    pub source: String,
    pub master_seed: Option<u64>,
    pub ensemble_size: usize,
    pub code_version: String,
    pub rng: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceSeries {
    /// ns.
    pub times: Vec<f64>,
    pub rho_eg: Vec<C64>,
    /// Monte-Carlo standard errors of the real and imaginary parts, packed
    /// as `re + i·im`. Zero for analytic series.
    pub stderr: Vec<C64>,
    pub meta: SeriesMeta,
}

impl CoherenceSeries {
    pub fn analytic(times: Vec<f64>, rho_eg: Vec<C64>, protocol: Protocol, source: &str) -> Self {
        let n = times.len();
        CoherenceSeries {
            times,
            rho_eg,
            stderr: vec![C64::new(0.0, 0.0); n],
            meta: SeriesMeta {
                protocol,
                source: source.to_string(),
                master_seed: None,
                ensemble_size: 0,
                code_version: crate::CODE_VERSION.to_string(),
                rng: String::new(),
            },
        }
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.rho_eg.iter().map(|z| z.norm()).collect()
    }

    /// Standard error of |ρ| by linear propagation of the component errors.
    pub fn magnitude_stderr(&self) -> Vec<f64> {
        self.rho_eg
            .iter()
            .zip(&self.stderr)
            .map(|(z, s)| {
                let r = z.norm();
                if r == 0.0 {
                    s.norm()
                } else {
                    ((z.re * s.re).powi(2) + (z.im * s.im).powi(2)).sqrt() / r
                }
            })
            .collect()
    }
}

/// `n` evenly spaced times on `[0, horizon]`.
pub fn linear_times(horizon: f64, n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![0.0; n];
    }
    (0..n).map(|i| horizon * i as f64 / (n - 1) as f64).collect()
}

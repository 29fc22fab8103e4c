//! Leading-order analytic predictions: filter functions, Lamb shift and the
//! five-term dephasing exponent Φ(t).
//!
//! Every noise member has a Lorentzian spectrum, and the double integrals
//! reduce to single ones because the convolution of two Lorentzians of widths
//! `κ_a`, `κ_b` is a Lorentzian of width `κ_a + κ_b`. The single integrals
//! `∫K(ω,t) L_γ(ω) dω/2π` are evaluated in closed form by default; adaptive
//! quadrature is available as a cross-check.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::C64;
use crate::noise::NoiseModel;
use crate::quad;
use crate::qubit::Fluxonium;
use crate::series::{CoherenceSeries, Protocol};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FilterKind {
    RamseyReal,
    RamseyImag,
    Echo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IntegralMethod {
    ClosedForm,
    Quadrature,
}

pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - x * x / 6.0 + x.powi(4) / 120.0
    } else {
        x.sin() / x
    }
}

pub fn filter_function(kind: FilterKind, omega: f64, t: f64) -> f64 {
    match kind {
        FilterKind::RamseyReal => 0.5 * t * t * sinc(0.5 * omega * t).powi(2),
        FilterKind::RamseyImag => {
            let x = omega * t;
            if x.abs() < 1e-3 {
                // 1 − sinc(x) = x²/6 − x⁴/120 + x⁶/5040
                -omega * t.powi(3) * (1.0 / 6.0 - x * x / 120.0 + x.powi(4) / 5040.0)
            } else {
                -(t / omega) * (1.0 - sinc(x))
            }
        }
        FilterKind::Echo => {
            let q = 0.25 * omega * t;
            0.5 * t * t * sinc(q).powi(2) * q.sin().powi(2)
        }
    }
}

/// Σ_{n≥n0} (−x)ⁿ/n! · c(n), for the small-argument branches below.
fn exp_tail(x: f64, n0: i32, c: impl Fn(i32) -> f64) -> f64 {
    let mut term = 1.0;
    for n in 1..n0 {
        term *= -x / n as f64;
    }
    let mut sum = 0.0;
    for n in n0..40 {
        term *= -x / n as f64;
        sum += term * c(n);
        if term.abs() < 1e-18 * sum.abs() {
            break;
        }
    }
    sum
}

/// `∫ K(ω,t) · 2γ/(γ²+ω²) dω/2π`, i.e. the contribution of a unit-variance
/// Lorentzian of width `γ`.
pub fn lorentzian_filter_integral(kind: FilterKind, gamma: f64, t: f64) -> f64 {
    let x = gamma * t;
    match kind {
        // Odd filter against an even spectrum.
        FilterKind::RamseyImag => 0.0,
        FilterKind::RamseyReal => {
            if x == 0.0 {
                0.5 * t * t
            } else if x < 1.0 {
                t * t * exp_tail(x, 2, |_| 1.0) / (x * x)
            } else {
                (x - 1.0 + (-x).exp()) / (gamma * gamma)
            }
        }
        FilterKind::Echo => {
            if x == 0.0 {
                0.0
            } else if x < 1.0 {
                t * t * exp_tail(x, 3, |n| 4.0 * 0.5f64.powi(n) - 1.0) / (x * x)
            } else {
                (x - 3.0 + 4.0 * (-0.5 * x).exp() - (-x).exp()) / (gamma * gamma)
            }
        }
    }
}

/// `∫ K(ω,t) S(ω) dω/2π` for an even spectrum by adaptive quadrature.
/// `scale` should be the narrowest spectral feature.
pub fn filter_integral_quadrature(kind: FilterKind, spectrum: &dyn Fn(f64) -> f64, t: f64, scale: f64) -> Result<f64> {
    if kind == FilterKind::RamseyImag {
        return Ok(0.0);
    }
    let f = |w: f64| filter_function(kind, w, t) * spectrum(w);
    let s = if t > 0.0 { scale.min(PI / t) } else { scale };
    Ok(2.0 * quad::integrate_half_line(&f, s, 1e-10)? / (2.0 * PI))
}

/// `(1/2π)∫S dω` summed over the model: `Σ |2ξ|² P₊P₋`.
pub fn noise_second_moment(model: &NoiseModel) -> f64 {
    model.variance()
}

/// Analytic predictor for one qubit: the bare splitting Δ = ω_ge(0) and the
/// second derivative D₂(0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Predictor {
    pub delta: f64,
    pub d2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DephasingPrediction {
    pub kind: FilterKind,
    pub lambda: f64,
    pub times: Vec<f64>,
    pub phi: Vec<f64>,
    pub omega_q_prime: f64,
    /// D₂²λ² ∫K S_G.
    pub gaussian_linear: Vec<f64>,
    /// (D₂²/2) ∬K S_G S_G.
    pub gaussian_quadratic: Vec<f64>,
    /// D₂²(λ−ξ̄_μ)² ∫K S_μ, one row per strong TLF.
    pub per_tlf: Vec<Vec<f64>>,
    /// (D₂²/2) Σ_{μ≠μ'} ∬K S_μ S_μ'.
    pub tlf_cross: Vec<f64>,
    /// D₂² Σ_μ ∬K S_G S_μ.
    pub gaussian_tlf_cross: Vec<f64>,
}

impl Predictor {
    pub fn from_qubit(qubit: &Fluxonium) -> Result<Self> {
        let disp = qubit.dispersion_derivatives(0.0)?;
        Ok(Predictor {
            delta: qubit.omega_ge(0.0)?,
            d2: disp.d2,
        })
    }

    /// ω'_q = Δ + (D₂/2)[λ² + ⟨δξ²⟩].
    pub fn lamb_shifted_frequency(&self, lambda: f64, model: &NoiseModel) -> f64 {
        self.delta + 0.5 * self.d2 * (lambda * lambda + noise_second_moment(model))
    }

    pub fn dephasing_profile(
        &self,
        lambda: f64,
        model: &NoiseModel,
        kind: FilterKind,
        times: &[f64],
    ) -> Result<DephasingPrediction> {
        self.dephasing_profile_with(lambda, model, kind, times, IntegralMethod::ClosedForm)
    }

    pub fn dephasing_profile_with(
        &self,
        lambda: f64,
        model: &NoiseModel,
        kind: FilterKind,
        times: &[f64],
        method: IntegralMethod,
    ) -> Result<DephasingPrediction> {
        if kind == FilterKind::RamseyImag {
            return Err(Error::param("dephasing profile needs RamseyReal or Echo"));
        }
        if times.iter().any(|t| !(*t >= 0.0)) {
            return Err(Error::param("times must be non-negative"));
        }
        let d2sq = self.d2 * self.d2;
        let bath: Vec<(f64, f64)> = model.gaussian_bath.iter().map(|b| (b.variance(), b.kappa())).collect();
        let tlfs: Vec<(f64, f64, f64)> = model
            .strong_tlfs
            .iter()
            .map(|m| (m.variance(), m.kappa(), m.mean_offset()))
            .collect();

        // Weighted Lorentzian components of each spectral combination.
        let single_g: Vec<(f64, f64)> = bath.clone();
        let mut double_gg: Vec<(f64, f64)> = Vec::with_capacity(bath.len() * (bath.len() + 1) / 2);
        for (i, &(va, ka)) in bath.iter().enumerate() {
            double_gg.push((va * va, 2.0 * ka));
            for &(vb, kb) in &bath[i + 1..] {
                double_gg.push((2.0 * va * vb, ka + kb));
            }
        }

        let integral = |comps: &[(f64, f64)], t: f64, name: &str| -> Result<f64> {
            if comps.is_empty() || t == 0.0 {
                return Ok(0.0);
            }
            match method {
                IntegralMethod::ClosedForm => Ok(comps
                    .iter()
                    .map(|&(w, g)| w * lorentzian_filter_integral(kind, g, t))
                    .sum()),
                IntegralMethod::Quadrature => {
                    let spec = |om: f64| -> f64 { comps.iter().map(|&(w, g)| w * 2.0 * g / (g * g + om * om)).sum() };
                    let narrow = comps.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
                    filter_integral_quadrature(kind, &spec, t, narrow)
                        .map_err(|e| Error::Convergence(format!("term {name} at t = {t} ns: {e}")))
                }
            }
        };

        let n = times.len();
        let mut out = DephasingPrediction {
            kind,
            lambda,
            times: times.to_vec(),
            phi: vec![0.0; n],
            omega_q_prime: self.lamb_shifted_frequency(lambda, model),
            gaussian_linear: vec![0.0; n],
            gaussian_quadratic: vec![0.0; n],
            per_tlf: vec![vec![0.0; n]; tlfs.len()],
            tlf_cross: vec![0.0; n],
            gaussian_tlf_cross: vec![0.0; n],
        };
        for (i, &t) in times.iter().enumerate() {
            out.gaussian_linear[i] = d2sq * lambda * lambda * integral(&single_g, t, "gaussian_linear")?;
            out.gaussian_quadratic[i] = 0.5 * d2sq * integral(&double_gg, t, "gaussian_quadratic")?;
            for (mu, &(v, k, xbar)) in tlfs.iter().enumerate() {
                out.per_tlf[mu][i] = d2sq * (lambda - xbar).powi(2) * integral(&[(v, k)], t, "per_tlf")?;
                let cross: Vec<(f64, f64)> = bath.iter().map(|&(vb, kb)| (v * vb, k + kb)).collect();
                out.gaussian_tlf_cross[i] += d2sq * integral(&cross, t, "gaussian_tlf_cross")?;
                for (nu, &(v2, k2, _)) in tlfs.iter().enumerate() {
                    if nu != mu {
                        out.tlf_cross[i] += 0.5 * d2sq * integral(&[(v * v2, k + k2)], t, "tlf_cross")?;
                    }
                }
            }
            out.phi[i] = out.gaussian_linear[i]
                + out.gaussian_quadratic[i]
                + out.per_tlf.iter().map(|r| r[i]).sum::<f64>()
                + out.tlf_cross[i]
                + out.gaussian_tlf_cross[i];
        }
        Ok(out)
    }

    /// ρ_eg(t) = ½ exp(−iω'_q t − Φ(t)) for Ramsey. For Echo the static phase
    /// is refocused, so ρ_eg(t) = ½ exp(−Φ_E(t)).
    pub fn predicted_coherence(
        &self,
        lambda: f64,
        model: &NoiseModel,
        protocol: Protocol,
        times: &[f64],
    ) -> Result<CoherenceSeries> {
        let kind = match protocol {
            Protocol::Ramsey => FilterKind::RamseyReal,
            Protocol::Echo { .. } => FilterKind::Echo,
        };
        let pred = self.dephasing_profile(lambda, model, kind, times)?;
        let rho = times
            .iter()
            .zip(&pred.phi)
            .map(|(&t, &phi)| {
                let phase = if kind == FilterKind::Echo {
                    0.0
                } else {
                    -pred.omega_q_prime * t
                };
                0.5 * (-phi).exp() * C64::from_polar(1.0, phase)
            })
            .collect();
        Ok(CoherenceSeries::analytic(times.to_vec(), rho, protocol, "keldysh"))
    }
}

//! Closed-form coherence of a qubit coupled longitudinally to classical
//! telegraph fluctuators, and the saturation dephasing rate.
//!
//! Model: `H = ω_q σ_z/2 + Σ_μ Δω_μ/2 (τ_zμ − ⟨τ_zμ⟩) σ_z`. For each
//! fluctuator the conditional amplitudes `h'_± = h_± e^{∓iΔω t}` obey
//! `d/dt h' = M h'` with
//!
//! ```text
//! M = [ −iΔω − κ₋    κ₊       ]
//!     [  κ₋          iΔω − κ₊ ]
//! ```
//!
//! and `h'(0) = (P₊, P₋)`. The lab-frame coherence is
//! `ρ_eg(t) = ρ_eg(0) e^{−iω_q t} Π_μ e^{iΔω_μ⟨τ_μ⟩t} (h'_{μ+} + h'_{μ−})`.

use serde::{Deserialize, Serialize};

use crate::linalg::C64;
use crate::noise::TlfSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeatingTlf {
    /// Half the splitting between the two fluctuator states, rad/ns.
    pub delta_omega: f64,
    pub tlf: TlfSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeatingSpec {
    pub omega_q: f64,
    pub tlfs: Vec<BeatingTlf>,
}

/// How a fluctuator's amplitude maps to the frequency shift `Δω = |D₁|·a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShiftConvention {
    /// `a = |ξ_T|`, the excursion of the telegraph signal.
    Excursion,
    /// `a = |ξ̄_T|`, the mean offset.
    MeanOffset,
}

impl BeatingSpec {
    /// Beating model of a full qubit at a point with slope `d1` and splitting
    /// `omega_q`.
    pub fn from_slope(omega_q: f64, d1: f64, tlfs: &[TlfSpec], convention: ShiftConvention) -> Self {
        let tlfs = tlfs
            .iter()
            .map(|t| {
                let a = match convention {
                    ShiftConvention::Excursion => t.amplitude,
                    ShiftConvention::MeanOffset => t.mean_offset().abs(),
                };
                BeatingTlf {
                    delta_omega: d1.abs() * a,
                    tlf: *t,
                }
            })
            .collect();
        BeatingSpec { omega_q, tlfs }
    }
}

/// `sinh(z)/z`, stable near zero.
fn sinhc(z: C64) -> C64 {
    if z.norm() < 1e-4 {
        let z2 = z * z;
        C64::new(1.0, 0.0) + z2 / 6.0 + z2 * z2 / 120.0
    } else {
        z.sinh() / z
    }
}

/// `(h'_+(t), h'_−(t))` from `exp(Mt)P`, written through `cosh` and `sinhc` so
/// it stays finite as `S → 0`.
pub fn rotated_amplitudes(tlf: &TlfSpec, delta_omega: f64, t: f64) -> (C64, C64) {
    let (kp, km) = (tlf.kappa_plus, tlf.kappa_minus);
    let k = kp + km;
    let dk = kp - km;
    let i = C64::i();
    let dw = delta_omega;
    let s = s_root(k, dk, dw);
    if s.norm() < 1e-12 * k {
        return critical_amplitudes(k, dw, t);
    }
    let half = 0.5 * t;
    let ch = (s * half).cosh();
    // sinh(St/2)/(S/2)
    let sh = sinhc(s * half) * t;
    // M + κ/2 = [[−iΔω + Δκ/2, κ₊], [κ₋, iΔω − Δκ/2]]
    let a = -i * dw + 0.5 * dk;
    let d = i * dw - 0.5 * dk;
    let (p, m) = (tlf.p_plus, tlf.p_minus);
    let decay = (-0.5 * k * t).exp();
    let hp = decay * (ch * p + sh * (a * p + kp * m));
    let hm = decay * (ch * m + sh * (km * p + d * m));
    (hp, hm)
}

/// S = (κ² − 4Δω² − 4iΔκΔω)^{1/2}, principal branch (Re S ≥ 0).
pub fn s_root(kappa: f64, delta_kappa: f64, delta_omega: f64) -> C64 {
    C64::new(
        kappa * kappa - 4.0 * delta_omega * delta_omega,
        -4.0 * delta_kappa * delta_omega,
    )
    .sqrt()
}

/// Balanced fluctuator with κ = 2|Δω|.
pub fn critical_amplitudes(kappa: f64, delta_omega: f64, t: f64) -> (C64, C64) {
    let sgn = delta_omega.signum();
    let decay = (-0.5 * kappa * t).exp();
    let hp = (C64::new(1.0, -sgn) * (0.25 * kappa * t) + 0.5) * decay;
    let hm = (C64::new(1.0, sgn) * (0.25 * kappa * t) + 0.5) * decay;
    (hp, hm)
}

/// Balanced-case closed form in terms of the two exponentials `e^{(−κ±S)t/2}`.
pub fn balanced_amplitudes(kappa: f64, delta_omega: f64, t: f64) -> (C64, C64) {
    let s = s_root(kappa, 0.0, delta_omega);
    let i2w = C64::new(0.0, 2.0 * delta_omega);
    let ep = ((s - kappa) * (0.5 * t)).exp();
    let em = ((-s - kappa) * (0.5 * t)).exp();
    let hp = ((s - i2w + kappa) * ep + (s + i2w - kappa) * em) / (4.0 * s);
    let hm = ((s - i2w - kappa) * em + (s + i2w + kappa) * ep) / (4.0 * s);
    (hp, hm)
}

/// Lab-frame factor `e^{iΔω⟨τ⟩t}(h'_+ + h'_−)` of one fluctuator.
pub fn exact_single_tlf_factor(tlf: &TlfSpec, delta_omega: f64, t: f64) -> C64 {
    let (hp, hm) = rotated_amplitudes(tlf, delta_omega, t);
    C64::from_polar(1.0, delta_omega * tlf.mean_sign() * t) * (hp + hm)
}

/// `h_+ + h_−` in the frame that also removes the state-dependent shifts.
pub fn interaction_frame_factor(tlf: &TlfSpec, delta_omega: f64, t: f64) -> C64 {
    let (hp, hm) = rotated_amplitudes(tlf, delta_omega, t);
    hp * C64::from_polar(1.0, delta_omega * t) + hm * C64::from_polar(1.0, -delta_omega * t)
}

/// ρ_eg(t) with ρ_eg(0) = 1/2.
pub fn exact_qubit_coherence(spec: &BeatingSpec, t: f64) -> C64 {
    spec.tlfs
        .iter()
        .fold(C64::from_polar(0.5, -spec.omega_q * t), |acc, b| {
            acc * exact_single_tlf_factor(&b.tlf, b.delta_omega, t)
        })
}

/// κ̄ = Σ_η P_η Σ_μ κ_{μ,−η_μ}: the configuration-averaged total exit rate.
/// Enumerates configurations for up to 20 fluctuators, else uses
/// [`saturation_rate_closed`].
pub fn saturation_rate(tlfs: &[TlfSpec]) -> f64 {
    if tlfs.len() > 20 {
        return saturation_rate_closed(tlfs);
    }
    let n = tlfs.len();
    let mut total = 0.0;
    for mask in 0u32..(1u32 << n) {
        let mut p = 1.0;
        let mut rate = 0.0;
        for (mu, t) in tlfs.iter().enumerate() {
            if mask & (1 << mu) != 0 {
                p *= t.p_plus;
                rate += t.kappa_minus;
            } else {
                p *= t.p_minus;
                rate += t.kappa_plus;
            }
        }
        total += p * rate;
    }
    total
}

/// Σ_μ 2κ_{μ,+}P_{μ,−}.
pub fn saturation_rate_closed(tlfs: &[TlfSpec]) -> f64 {
    tlfs.iter().map(|t| 2.0 * t.kappa_plus * t.p_minus).sum()
}

//! Dense Lindblad integration of the qubit ⊗ fluctuators model, used as an
//! independent check of [`crate::exact_tlf`].
//!
//! Basis index bit 0 is the qubit (1 = e), bit μ+1 the fluctuator μ (1 = +).

use crate::error::{Error, Result};
use crate::exact_tlf::BeatingSpec;
use crate::linalg::C64;

struct Lindbladian {
    dim: usize,
    n_tlf: usize,
    energy: Vec<f64>,
    kappa_plus: Vec<f64>,
    kappa_minus: Vec<f64>,
}

impl Lindbladian {
    fn new(spec: &BeatingSpec) -> Self {
        let n_tlf = spec.tlfs.len();
        let dim = 1 << (n_tlf + 1);
        let energy = (0..dim)
            .map(|i| {
                let sz = if i & 1 == 1 { 1.0 } else { -1.0 };
                let mut e = 0.5 * spec.omega_q;
                for (mu, b) in spec.tlfs.iter().enumerate() {
                    let tz = if i & (2 << mu) != 0 { 1.0 } else { -1.0 };
                    e += 0.5 * b.delta_omega * (tz - b.tlf.mean_sign());
                }
                sz * e
            })
            .collect();
        Lindbladian {
            dim,
            n_tlf,
            energy,
            kappa_plus: spec.tlfs.iter().map(|b| b.tlf.kappa_plus).collect(),
            kappa_minus: spec.tlfs.iter().map(|b| b.tlf.kappa_minus).collect(),
        }
    }

    fn rhs(&self, rho: &[C64], out: &mut [C64]) {
        let d = self.dim;
        let mi = C64::new(0.0, -1.0);
        for i in 0..d {
            for j in 0..d {
                let mut v = mi * (self.energy[i] - self.energy[j]) * rho[i * d + j];
                for mu in 0..self.n_tlf {
                    let bit = 2 << mu;
                    let (ui, uj) = (i & bit != 0, j & bit != 0);
                    // κ₊ D[τ₊]: τ₊†τ₊ projects on −; κ₋ D[τ₋]: on +.
                    let mut anti = 0.0;
                    anti += self.kappa_plus[mu] * (f64::from(u8::from(!ui)) + f64::from(u8::from(!uj)));
                    anti += self.kappa_minus[mu] * (f64::from(u8::from(ui)) + f64::from(u8::from(uj)));
                    v -= 0.5 * anti * rho[i * d + j];
                    if ui && uj {
                        v += self.kappa_plus[mu] * rho[(i ^ bit) * d + (j ^ bit)];
                    }
                    if !ui && !uj {
                        v += self.kappa_minus[mu] * rho[(i ^ bit) * d + (j ^ bit)];
                    }
                }
                out[i * d + j] = v;
            }
        }
    }

    fn initial(&self, spec: &BeatingSpec) -> Vec<C64> {
        let d = self.dim;
        let mut rho = vec![C64::new(0.0, 0.0); d * d];
        for i in 0..d {
            for j in 0..d {
                if (i >> 1) != (j >> 1) {
                    continue;
                }
                let mut p = 0.5;
                for (mu, b) in spec.tlfs.iter().enumerate() {
                    p *= if i & (2 << mu) != 0 {
                        b.tlf.p_plus
                    } else {
                        b.tlf.p_minus
                    };
                }
                rho[i * d + j] = C64::new(p, 0.0);
            }
        }
        rho
    }

    /// Fixed-step RK4 from 0 through every requested time.
    fn integrate(&self, rho0: &[C64], times: &[f64], steps_per_unit: f64) -> Vec<Vec<C64>> {
        let n = rho0.len();
        let mut rho = rho0.to_vec();
        let (mut k1, mut k2, mut k3, mut k4) = (
            vec![C64::default(); n],
            vec![C64::default(); n],
            vec![C64::default(); n],
            vec![C64::default(); n],
        );
        let mut tmp = vec![C64::default(); n];
        let mut t = 0.0;
        let mut out = Vec::with_capacity(times.len());
        for &target in times {
            let span = target - t;
            let steps = (span * steps_per_unit).ceil().max(if span > 0.0 { 1.0 } else { 0.0 }) as usize;
            let h = if steps > 0 { span / steps as f64 } else { 0.0 };
            for _ in 0..steps {
                self.rhs(&rho, &mut k1);
                for q in 0..n {
                    tmp[q] = rho[q] + k1[q] * (0.5 * h);
                }
                self.rhs(&tmp, &mut k2);
                for q in 0..n {
                    tmp[q] = rho[q] + k2[q] * (0.5 * h);
                }
                self.rhs(&tmp, &mut k3);
                for q in 0..n {
                    tmp[q] = rho[q] + k3[q] * h;
                }
                self.rhs(&tmp, &mut k4);
                for q in 0..n {
                    rho[q] += (k1[q] + 2.0 * k2[q] + 2.0 * k3[q] + k4[q]) * (h / 6.0);
                }
            }
            t = target;
            out.push(rho.clone());
        }
        out
    }
}

/// Full density matrices at `times`, integrated with RK4 and step doubling
/// until two successive resolutions agree to 1e-10.
pub fn lindblad_density(spec: &BeatingSpec, times: &[f64]) -> Result<Vec<Vec<C64>>> {
    if spec.tlfs.len() > 6 {
        return Err(Error::param("Lindblad oracle supports at most 6 fluctuators"));
    }
    if times.windows(2).any(|w| w[1] < w[0]) || times.iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::param("times must be non-negative and ascending"));
    }
    let l = Lindbladian::new(spec);
    let rho0 = l.initial(spec);
    let fastest = l.energy.iter().map(|e| e.abs()).fold(0.0, f64::max) * 2.0
        + spec.tlfs.iter().map(|b| b.tlf.kappa()).sum::<f64>();
    let mut density = 20.0 * fastest.max(1e-12);
    let mut prev = l.integrate(&rho0, times, density);
    for _ in 0..12 {
        density *= 2.0;
        let next = l.integrate(&rho0, times, density);
        let diff = prev
            .iter()
            .zip(&next)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).norm()))
            .fold(0.0, f64::max);
        prev = next;
        if diff < 1e-10 {
            return Ok(prev);
        }
    }
    Err(Error::Convergence(
        "Lindblad step doubling did not reach 1e-10 self-consistency".into(),
    ))
}

/// Reduced qubit coherence `Σ_τ ⟨e,τ|ρ|g,τ⟩` at each time.
pub fn lindblad_oracle(spec: &BeatingSpec, times: &[f64]) -> Result<Vec<C64>> {
    let d = 1 << (spec.tlfs.len() + 1);
    Ok(lindblad_density(spec, times)?
        .iter()
        .map(|rho| (0..d / 2).map(|r| rho[(2 * r + 1) * d + 2 * r]).sum())
        .collect())
}

/// Trace of each returned density matrix (for conservation checks).
pub fn traces(spec: &BeatingSpec, times: &[f64]) -> Result<Vec<f64>> {
    let d = 1 << (spec.tlfs.len() + 1);
    Ok(lindblad_density(spec, times)?
        .iter()
        .map(|rho| (0..d).map(|i| rho[i * d + i].re).sum())
        .collect())
}

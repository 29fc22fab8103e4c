//! Heavy-fluxonium spectrum and the matrix elements of the flux coupling.
//!
//! With `θ = φ + s` (`s` the sweet-spot phase) and `δ = λ + ξ`,
//!
//! ```text
//! H = 4E_C n² + E_L (θ + δ)²/2 − E_J [cos s · cos θ + sin s · sin θ]
//! ```
//!
//! which is the circuit Hamiltonian with the external phase `s + λ` and the
//! noise offset `ξ` in the inductive term. The oscillator basis of
//! `4E_C n² + E_L θ²/2` is used, so parity about the sweet spot is the
//! oscillator parity `(−1)^k`. The coupling operator is
//! `x̂ = ∂H/∂δ = E_L(θ + δ)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::sym_eig_sorted;
use crate::units::ghz;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QubitSpec {
    /// Angular energies, rad/ns.
    pub e_c: f64,
    pub e_l: f64,
    pub e_j: f64,
    pub sweet_spot_phase: f64,
    pub basis_dim: usize,
    /// Levels kept for dynamics.
    pub subspace_dim: usize,
    /// Levels summed in the second-order dispersion formula.
    pub d2_levels: usize,
}

impl QubitSpec {
    /// Circuit of the heavy fluxonium studied at φ_ext = π.
    pub fn heavy_fluxonium() -> Self {
        QubitSpec {
            e_c: ghz(0.479),
            e_l: ghz(0.132),
            e_j: ghz(3.395),
            sweet_spot_phase: std::f64::consts::PI,
            basis_dim: 120,
            subspace_dim: 6,
            d2_levels: 20,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("E_C", self.e_c), ("E_L", self.e_l), ("E_J", self.e_j)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(format!("{name} must be positive, got {v}")));
            }
        }
        if self.basis_dim < 2 {
            return Err(Error::param("basis_dim must be at least 2"));
        }
        if self.subspace_dim < 2 {
            return Err(Error::param("subspace_dim must be at least 2"));
        }
        if self.basis_dim < 4 * self.subspace_dim || self.basis_dim < 2 * self.d2_levels {
            return Err(Error::param(format!(
                "basis_dim {} too small for subspace_dim {} / d2_levels {}",
                self.basis_dim, self.subspace_dim, self.d2_levels
            )));
        }
        if self.d2_levels < 2 {
            return Err(Error::param("d2_levels must be at least 2"));
        }
        Ok(())
    }

    /// Oscillator frequency √(8 E_C E_L) of the quadratic part.
    pub fn plasma_frequency(&self) -> f64 {
        (8.0 * self.e_c * self.e_l).sqrt()
    }

    /// Zero-point phase spread θ₀ = (8E_C/E_L)^{1/4}.
    pub fn theta_zpf(&self) -> f64 {
        (8.0 * self.e_c / self.e_l).powf(0.25)
    }
}

/// Lowest levels at one operating point and the projected coupling operator.
#[derive(Debug, Clone)]
pub struct SpectrumSlice {
    pub lambda: f64,
    pub xi: f64,
    pub energies: Vec<f64>,
    /// ⟨j|x̂|k⟩, rad/ns.
    pub x: DMatrix<f64>,
}

impl SpectrumSlice {
    pub fn omega_ge(&self) -> f64 {
        self.energies[1] - self.energies[0]
    }

    /// Restriction to the lowest `n` levels.
    pub fn truncated(&self, n: usize) -> SpectrumSlice {
        SpectrumSlice {
            lambda: self.lambda,
            xi: self.xi,
            energies: self.energies[..n].to_vec(),
            x: self.x.view((0, 0), (n, n)).into_owned(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dispersion {
    pub d1: f64,
    pub d2: f64,
    pub d1_fd: f64,
    pub d2_fd: f64,
}

/// Basis operators of a fluxonium, built once and reused for every offset.
#[derive(Debug, Clone)]
pub struct Fluxonium {
    spec: QubitSpec,
    theta: DMatrix<f64>,
    junction: DMatrix<f64>,
}

fn theta_matrix(dim: usize, zpf: f64) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(dim, dim);
    for k in 0..dim - 1 {
        let v = zpf * ((k + 1) as f64 / 2.0).sqrt();
        m[(k, k + 1)] = v;
        m[(k + 1, k)] = v;
    }
    m
}

impl Fluxonium {
    pub fn new(spec: QubitSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.basis_dim;
        let theta = theta_matrix(n, spec.theta_zpf());
        // Functions of θ from the spectral decomposition in a doubled basis,
        // then truncated: keeps cos θ parity-even and sin θ parity-odd exactly.
        let (vals, vecs) = sym_eig_sorted(theta_matrix(2 * n, spec.theta_zpf()));
        let (s_cos, s_sin) = (spec.sweet_spot_phase.cos(), spec.sweet_spot_phase.sin());
        let f = DMatrix::from_diagonal(&vals.map(|t| s_cos * t.cos() + s_sin * t.sin()));
        let full = &vecs * f * vecs.transpose();
        let mut junction = full.view((0, 0), (n, n)).into_owned() * (-spec.e_j);
        symmetrize(&mut junction);
        Ok(Fluxonium { spec, theta, junction })
    }

    pub fn spec(&self) -> &QubitSpec {
        &self.spec
    }

    /// Hamiltonian at total external phase `s + λ + ξ`.
    pub fn hamiltonian(&self, total_phase_offset: f64) -> Result<DMatrix<f64>> {
        let delta = total_phase_offset - self.spec.sweet_spot_phase;
        if !delta.is_finite() {
            return Err(Error::param("phase offset must be finite"));
        }
        let el = self.spec.e_l;
        let w = self.spec.plasma_frequency();
        let mut h = &self.junction + &self.theta * (el * delta);
        for k in 0..self.spec.basis_dim {
            h[(k, k)] += w * (k as f64 + 0.5) + 0.5 * el * delta * delta;
        }
        let asym = (&h - h.transpose()).amax();
        if asym > 1e-12 * h.amax() {
            return Err(Error::numeric(format!("Hamiltonian asymmetry {asym:.2e}")));
        }
        Ok(h)
    }

    /// Oscillator parity `(−1)^k`, which maps H(λ) to H(−λ).
    pub fn parity(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.spec.basis_dim, self.spec.basis_dim, |i, j| {
            if i != j {
                0.0
            } else if i % 2 == 0 {
                1.0
            } else {
                -1.0
            }
        })
    }

    pub fn eigensolve(&self, lambda: f64, xi: f64) -> Result<SpectrumSlice> {
        self.eigensolve_levels(lambda, xi, self.spec.subspace_dim)
    }

    pub fn eigensolve_levels(&self, lambda: f64, xi: f64, levels: usize) -> Result<SpectrumSlice> {
        if levels > self.spec.basis_dim {
            return Err(Error::param("more levels requested than basis states"));
        }
        let delta = lambda + xi;
        let h = self.hamiltonian(self.spec.sweet_spot_phase + delta)?;
        let (vals, vecs) = sym_eig_sorted(h.clone());
        let v = vecs.columns(0, levels).into_owned();
        let scale = h.amax();
        for k in 0..levels {
            let r = (&h * v.column(k) - v.column(k) * vals[k]).amax();
            if r > 1e-10 * scale {
                return Err(Error::numeric(format!("eigenpair {k} residual {r:.2e}")));
            }
        }
        let mut x = v.transpose() * (&self.theta * &v) * self.spec.e_l;
        for k in 0..levels {
            x[(k, k)] += self.spec.e_l * delta;
        }
        symmetrize(&mut x);
        Ok(SpectrumSlice {
            lambda,
            xi,
            energies: vals.iter().take(levels).copied().collect(),
            x,
        })
    }

    pub fn omega_ge(&self, lambda: f64) -> Result<f64> {
        Ok(self.eigensolve_levels(lambda, 0.0, 2)?.omega_ge())
    }

    /// D₁ and D₂ from matrix elements over `d2_levels` levels, cross-checked
    /// against Richardson-extrapolated central differences of ω_ge(λ).
    pub fn dispersion_derivatives(&self, lambda: f64) -> Result<Dispersion> {
        let slice = self.eigensolve_levels(lambda, 0.0, self.spec.d2_levels)?;
        let (d1, d2) = matrix_element_derivatives(&slice)?;

        let h = 2e-3;
        let w0 = slice.omega_ge();
        let fd = |step: f64| -> Result<(f64, f64)> {
            let wp = self.omega_ge(lambda + step)?;
            let wm = self.omega_ge(lambda - step)?;
            Ok(((wp - wm) / (2.0 * step), (wp + wm - 2.0 * w0) / (step * step)))
        };
        let (a1, a2) = fd(h)?;
        let (b1, b2) = fd(h / 2.0)?;
        let d1_fd = (4.0 * b1 - a1) / 3.0;
        let d2_fd = (4.0 * b2 - a2) / 3.0;

        if (d2 - d2_fd).abs() > 1e-4 * d2.abs() {
            return Err(Error::Convergence(format!(
                "D2 matrix-element {d2:.8e} vs finite-difference {d2_fd:.8e}; increase d2_levels"
            )));
        }
        if (d1 - d1_fd).abs() > 1e-4 * d1.abs().max(d2.abs() * h) {
            return Err(Error::Convergence(format!(
                "D1 matrix-element {d1:.8e} vs finite-difference {d1_fd:.8e}"
            )));
        }
        Ok(Dispersion { d1, d2, d1_fd, d2_fd })
    }
}

/// `D₁ = x_ee − x_gg` and
/// `D₂ = 2[Σ_{j≠e}|x_ej|²/(ω_e−ω_j) − Σ_{j≠g}|x_gj|²/(ω_g−ω_j)]`
/// over the levels present in `slice`.
pub fn matrix_element_derivatives(slice: &SpectrumSlice) -> Result<(f64, f64)> {
    let e = &slice.energies;
    let x = &slice.x;
    for w in e.windows(2) {
        if (w[1] - w[0]).abs() < 1e-9 {
            return Err(Error::numeric(format!(
                "near-degenerate levels (gap {:.2e} rad/ns)",
                w[1] - w[0]
            )));
        }
    }
    let shift = |k: usize| -> f64 {
        (0..e.len())
            .filter(|&j| j != k)
            .map(|j| x[(k, j)].powi(2) / (e[k] - e[j]))
            .sum()
    };
    Ok((x[(1, 1)] - x[(0, 0)], 2.0 * (shift(1) - shift(0))))
}

pub fn build_hamiltonian(spec: &QubitSpec, total_phase_offset: f64) -> Result<DMatrix<f64>> {
    Fluxonium::new(*spec)?.hamiltonian(total_phase_offset)
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_limit() {
        let mut spec = QubitSpec::heavy_fluxonium();
        spec.e_j = 1e-300;
        spec.basis_dim = 40;
        let f = Fluxonium::new(spec).unwrap();
        let s = f.eigensolve_levels(0.0, 0.0, 6).unwrap();
        let w = spec.plasma_frequency();
        for k in 1..6 {
            assert!((s.energies[k] - s.energies[k - 1] - w).abs() < 1e-10 * w);
        }
    }

    #[test]
    fn parity_maps_lambda() {
        let mut spec = QubitSpec::heavy_fluxonium();
        spec.basis_dim = 60;
        spec.d2_levels = 10;
        let f = Fluxonium::new(spec).unwrap();
        let p = f.parity();
        let s = spec.sweet_spot_phase;
        let hp = f.hamiltonian(s + 0.013).unwrap();
        let hm = f.hamiltonian(s - 0.013).unwrap();
        assert!((&p * hp * &p - hm).amax() < 1e-12);
    }
}

//! Monte-Carlo ensembles of pure-state trajectories under piecewise-constant
//! telegraph noise.
//!
//! Each trajectory lives in the lowest `subspace_dim` levels of `H_q(λ)` with
//! `H(t) = diag(ω_j) + δξ(t)·x`. Between breakpoints of the composite noise
//! the Hamiltonian is constant and the state is advanced exactly through the
//! eigendecomposition of that small matrix.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit_series, FitModel, FitResult};
use crate::linalg::C64;
use crate::noise::{NoiseModel, NoiseTrace, Segments};
use crate::qubit::{Fluxonium, SpectrumSlice};
use crate::rng;
use crate::series::{CoherenceSeries, Protocol, SeriesMeta};

pub use crate::fit::fit_exponential_oscillation;

/// Trajectories per reduction block. Blocks are summed sequentially, block
/// totals pairwise, so the result does not depend on the thread count.
const BLOCK: usize = 32;

/// Allowed drift of the state norm over one trajectory.
const NORM_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleOptions {
    pub n_traj: usize,
    /// Flips closer than this (ns) are merged into one segment. Zero keeps
    /// every breakpoint.
    pub dt_min: f64,
    /// Index of the first trajectory; trajectory `i` draws its noise from
    /// stream `(first_trajectory + i, fluctuator)`.
    pub first_trajectory: u64,
}

impl EnsembleOptions {
    pub fn new(n_traj: usize) -> Self {
        EnsembleOptions {
            n_traj,
            dt_min: 0.0,
            first_trajectory: 0,
        }
    }
}

/// Eigen-decomposition of one constant segment, `V` column-major.
struct SegmentEig {
    w: Vec<f64>,
    v: Vec<f64>,
}

/// Static qubit in its retained subspace.
#[derive(Debug, Clone)]
pub struct Propagator {
    pub lambda: f64,
    pub energies: Vec<f64>,
    pub x: DMatrix<f64>,
}

impl Propagator {
    pub fn new(qubit: &Fluxonium, lambda: f64) -> Result<Self> {
        Self::from_slice(qubit.eigensolve(lambda, 0.0)?)
    }

    pub fn with_levels(qubit: &Fluxonium, lambda: f64, levels: usize) -> Result<Self> {
        Self::from_slice(qubit.eigensolve_levels(lambda, 0.0, levels)?)
    }

    pub fn from_slice(slice: SpectrumSlice) -> Result<Self> {
        if slice.energies.len() < 2 {
            return Err(Error::param("subspace_dim must be at least 2"));
        }
        // Energies relative to the ground state keep the phases small.
        let e0 = slice.energies[0];
        Ok(Propagator {
            lambda: slice.lambda,
            energies: slice.energies.iter().map(|e| e - e0).collect(),
            x: slice.x,
        })
    }

    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    pub fn omega_ge(&self) -> f64 {
        self.energies[1] - self.energies[0]
    }

    fn decompose(&self, value: f64) -> SegmentEig {
        let n = self.dim();
        let mut h = &self.x * value;
        for j in 0..n {
            h[(j, j)] += self.energies[j];
        }
        let eig = SymmetricEigen::new(h);
        SegmentEig {
            w: eig.eigenvalues.iter().copied().collect(),
            v: eig.eigenvectors.as_slice().to_vec(),
        }
    }

    /// Coherence `⟨e|ψ⟩⟨ψ|g⟩` at each of `times` (ascending, within the
    /// segments' horizon) for one noise realization.
    pub fn propagate(&self, segments: &Segments, protocol: Protocol, times: &[f64]) -> Result<Vec<C64>> {
        check_times(times)?;
        let n = self.dim();
        let eigs: Vec<SegmentEig> = segments.values.iter().map(|&v| self.decompose(v)).collect();

        // Unnormalized |g⟩ + |e⟩, so that ρ_eg = c_e c_g* / 2 is exactly 1/2 at t = 0.
        let mut psi0 = vec![C64::new(0.0, 0.0); n];
        psi0[0] = C64::new(1.0, 0.0);
        psi0[1] = C64::new(1.0, 0.0);

        let out = match protocol {
            Protocol::Ramsey => {
                let mut walker = Walker::new(segments, &eigs, psi0);
                let mut out = Vec::with_capacity(times.len());
                for &t in times {
                    walker.advance(t);
                    out.push(coherence(&walker.psi));
                }
                walker.check_norm()?;
                out
            }
            Protocol::Echo { pulse_fraction } => {
                if !(pulse_fraction > 0.0 && pulse_fraction < 1.0) {
                    return Err(Error::param("echo pulse fraction must lie in (0, 1)"));
                }
                let mut walker = Walker::new(segments, &eigs, psi0);
                let mut out = Vec::with_capacity(times.len());
                for &t in times {
                    walker.advance(pulse_fraction * t);
                    let mut second = walker.fork();
                    second.psi.swap(0, 1);
                    second.advance(t);
                    second.check_norm()?;
                    out.push(coherence(&second.psi));
                }
                out
            }
        };
        Ok(out)
    }
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.iter().any(|t| !(*t >= 0.0 && t.is_finite())) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::param("times must be finite, non-negative and ascending"));
    }
    Ok(())
}

fn coherence(psi: &[C64]) -> C64 {
    0.5 * psi[1] * psi[0].conj()
}

/// Forward-only propagation through cached segment eigensystems.
struct Walker<'a> {
    seg: &'a Segments,
    eigs: &'a [SegmentEig],
    idx: usize,
    t: f64,
    psi: Vec<C64>,
    scratch: Vec<C64>,
}

impl<'a> Walker<'a> {
    fn new(seg: &'a Segments, eigs: &'a [SegmentEig], psi: Vec<C64>) -> Self {
        let n = psi.len();
        Walker {
            seg,
            eigs,
            idx: 0,
            t: 0.0,
            psi,
            scratch: vec![C64::new(0.0, 0.0); n],
        }
    }

    fn fork(&self) -> Self {
        Walker {
            seg: self.seg,
            eigs: self.eigs,
            idx: self.idx,
            t: self.t,
            psi: self.psi.clone(),
            scratch: self.scratch.clone(),
        }
    }

    fn advance(&mut self, target: f64) {
        while self.t < target {
            // The last segment ends at +∞, so `idx + 1` exists whenever a
            // finite end is reached.
            let seg_end = self.seg.end(self.idx);
            let end = seg_end.min(target);
            self.evolve(end - self.t);
            self.t = end;
            if end == seg_end {
                self.idx += 1;
            }
        }
    }

    fn evolve(&mut self, dt: f64) {
        if dt <= 0.0 {
            return;
        }
        let e = &self.eigs[self.idx];
        let n = self.psi.len();
        for j in 0..n {
            let col = &e.v[j * n..(j + 1) * n];
            let mut c = C64::new(0.0, 0.0);
            for r in 0..n {
                c += col[r] * self.psi[r];
            }
            self.scratch[j] = c * C64::from_polar(1.0, -e.w[j] * dt);
        }
        for r in 0..n {
            let mut s = C64::new(0.0, 0.0);
            for j in 0..n {
                s += e.v[j * n + r] * self.scratch[j];
            }
            self.psi[r] = s;
        }
    }

    fn check_norm(&self) -> Result<()> {
        let norm: f64 = self.psi.iter().map(|c| c.norm_sqr()).sum();
        let drift = (norm / 2.0 - 1.0).abs();
        if drift > NORM_TOL {
            return Err(Error::numeric(format!("state norm drifted by {drift:.2e}")));
        }
        Ok(())
    }
}

/// Single trajectory at control point `λ` under a given noise realization.
pub fn propagate_trajectory(
    qubit: &Fluxonium,
    lambda: f64,
    trace: &NoiseTrace,
    protocol: Protocol,
    times: &[f64],
) -> Result<Vec<C64>> {
    Propagator::new(qubit, lambda)?.propagate(&trace.segments(), protocol, times)
}

/// Running sums of one block of trajectories.
#[derive(Clone)]
struct Moments {
    sum: Vec<C64>,
    sq: Vec<C64>,
}

impl Moments {
    fn zero(n: usize) -> Self {
        Moments {
            sum: vec![C64::new(0.0, 0.0); n],
            sq: vec![C64::new(0.0, 0.0); n],
        }
    }

    fn add(&mut self, row: &[C64]) {
        for (k, z) in row.iter().enumerate() {
            self.sum[k] += z;
            self.sq[k] += C64::new(z.re * z.re, z.im * z.im);
        }
    }

    fn merge(mut self, other: &Moments) -> Self {
        for k in 0..self.sum.len() {
            self.sum[k] += other.sum[k];
            self.sq[k] += other.sq[k];
        }
        self
    }
}

fn pairwise(mut blocks: Vec<Moments>) -> Moments {
    while blocks.len() > 1 {
        let mut next = Vec::with_capacity(blocks.len().div_ceil(2));
        let mut it = blocks.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(a.merge(&b)),
                None => next.push(a),
            }
        }
        blocks = next;
    }
    blocks.pop().expect("at least one block")
}

/// Runs `n_traj` independent trajectories and averages them with a
/// worker-count independent reduction. Each trajectory is produced by
/// `traj(index)`.
pub fn ensemble_average<F>(n_traj: usize, n_times: usize, traj: F) -> Result<(Vec<C64>, Vec<C64>)>
where
    F: Fn(u64) -> Result<Vec<C64>> + Sync,
{
    if n_traj == 0 {
        return Err(Error::param("ensemble needs at least one trajectory"));
    }
    let n_blocks = n_traj.div_ceil(BLOCK);
    let blocks: Vec<Moments> = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let mut m = Moments::zero(n_times);
            for i in b * BLOCK..((b + 1) * BLOCK).min(n_traj) {
                m.add(&traj(i as u64)?);
            }
            Ok(m)
        })
        .collect::<Result<Vec<_>>>()?;
    let total = pairwise(blocks);
    let n = n_traj as f64;
    let mean: Vec<C64> = total.sum.iter().map(|s| s / n).collect();
    let stderr = mean
        .iter()
        .zip(&total.sq)
        .map(|(m, q)| {
            if n_traj < 2 {
                return C64::new(0.0, 0.0);
            }
            let var = |sq: f64, mu: f64| ((sq - n * mu * mu) / (n - 1.0)).max(0.0);
            C64::new((var(q.re, m.re) / n).sqrt(), (var(q.im, m.im) / n).sqrt())
        })
        .collect();
    Ok((mean, stderr))
}

pub fn run_ensemble(
    qubit: &Fluxonium,
    lambda: f64,
    model: &NoiseModel,
    protocol: Protocol,
    times: &[f64],
    n_traj: usize,
) -> Result<CoherenceSeries> {
    let prop = Propagator::new(qubit, lambda)?;
    run_ensemble_with(&prop, model, protocol, times, &EnsembleOptions::new(n_traj))
}

pub fn run_ensemble_with(
    prop: &Propagator,
    model: &NoiseModel,
    protocol: Protocol,
    times: &[f64],
    opts: &EnsembleOptions,
) -> Result<CoherenceSeries> {
    model.validate()?;
    check_times(times)?;
    let horizon = times.last().copied().unwrap_or(0.0).max(f64::MIN_POSITIVE);
    let (mean, stderr) = ensemble_average(opts.n_traj, times.len(), |i| {
        let trace = model.composite_trace(horizon, opts.first_trajectory + i)?;
        let mut seg = trace.segments();
        if opts.dt_min > 0.0 {
            seg = seg.coarsen(opts.dt_min);
        }
        prop.propagate(&seg, protocol, times)
    })?;
    Ok(CoherenceSeries {
        times: times.to_vec(),
        rho_eg: mean,
        stderr,
        meta: SeriesMeta {
            protocol,
            source: "sse".into(),
            master_seed: Some(model.master_seed),
            ensemble_size: opts.n_traj,
            code_version: crate::CODE_VERSION.into(),
            rng: rng::RNG_ID.into(),
        },
    })
}

/// Largest pointwise |Δρ_eg| between the configured subspace and one of
/// twice the size, using identical noise.
pub fn subspace_convergence(
    qubit: &Fluxonium,
    lambda: f64,
    model: &NoiseModel,
    protocol: Protocol,
    times: &[f64],
    opts: &EnsembleOptions,
) -> Result<f64> {
    let n = qubit.spec().subspace_dim;
    let a = run_ensemble_with(
        &Propagator::with_levels(qubit, lambda, n)?,
        model,
        protocol,
        times,
        opts,
    )?;
    let b = run_ensemble_with(
        &Propagator::with_levels(qubit, lambda, 2 * n)?,
        model,
        protocol,
        times,
        opts,
    )?;
    Ok(a.rho_eg
        .iter()
        .zip(&b.rho_eg)
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub lambda: f64,
    pub fit: FitResult,
    pub series: CoherenceSeries,
}

/// Independent ensembles over a grid of control points. Point `j` uses the
/// master seed `stream_seed(model.master_seed, AUX_STREAM, j)`.
#[allow(clippy::too_many_arguments)]
pub fn sweep_control(
    qubit: &Fluxonium,
    model: &NoiseModel,
    protocol: Protocol,
    lambdas: &[f64],
    times: &[f64],
    opts: &EnsembleOptions,
    window: (f64, f64),
    fit_model: FitModel,
) -> Result<Vec<SweepPoint>> {
    lambdas
        .iter()
        .enumerate()
        .map(|(j, &lambda)| {
            let mut m = model.clone();
            m.master_seed = sweep_seed(model.master_seed, j);
            let prop = Propagator::new(qubit, lambda)?;
            let series = run_ensemble_with(&prop, &m, protocol, times, opts)?;
            let fit = best_effort_fit(&series, window, fit_model)?;
            Ok(SweepPoint { lambda, fit, series })
        })
        .collect()
}

pub fn sweep_seed(master: u64, index: usize) -> u64 {
    rng::stream_seed(master, rng::AUX_STREAM, index as u64)
}

/// Fit that returns the best-effort parameters (with `converged = false`)
/// instead of an error when the optimizer stalls.
pub fn best_effort_fit(series: &CoherenceSeries, window: (f64, f64), model: FitModel) -> Result<FitResult> {
    match fit_series(series, window, model, None) {
        Ok(f) => Ok(f),
        Err(Error::Fit(best)) => Ok(*best),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qubit::QubitSpec;

    fn qubit() -> Fluxonium {
        Fluxonium::new(QubitSpec::heavy_fluxonium()).unwrap()
    }

    #[test]
    fn quiet_ramsey_is_free_precession() {
        let q = qubit();
        let prop = Propagator::new(&q, 0.01).unwrap();
        let times: Vec<f64> = (0..50).map(|i| 37.0 * i as f64).collect();
        let seg = NoiseTrace::zero(times[49]).segments();
        let rho = prop.propagate(&seg, Protocol::Ramsey, &times).unwrap();
        assert_eq!(rho[0], C64::new(0.5, 0.0));
        for (t, r) in times.iter().zip(&rho) {
            let want = C64::from_polar(0.5, -prop.omega_ge() * t);
            assert!((r - want).norm() < 1e-12);
        }
    }

    #[test]
    fn quiet_echo_refocuses() {
        let q = qubit();
        let prop = Propagator::new(&q, 0.02).unwrap();
        let times = [0.0, 100.0, 1234.5];
        let seg = NoiseTrace::zero(times[2]).segments();
        for r in prop.propagate(&seg, Protocol::echo(), &times).unwrap() {
            assert!((r - C64::new(0.5, 0.0)).norm() < 1e-12);
        }
    }
}

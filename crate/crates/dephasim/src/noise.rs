//! Two-level fluctuators, the emulated Gaussian bath, and sampled noise traces.
//!
//! A fluctuator sits at `+|ξ|` or `−|ξ|`; the noise it contributes is the
//! centered value `±|ξ| − ξ̄` with `ξ̄ = |ξ|(P₊ − P₋)`. In the `+` state it
//! leaves at rate `κ₋`, in the `−` state at rate `κ₊`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TlfSpec {
    /// |ξ_T| in radians.
    pub amplitude: f64,
    pub p_plus: f64,
    pub p_minus: f64,
    /// Rate of − → + flips, rad/ns.
    pub kappa_plus: f64,
    /// Rate of + → − flips, rad/ns.
    pub kappa_minus: f64,
}

impl TlfSpec {
    /// Builds a fluctuator from its total flip rate, splitting it by detailed
    /// balance: `κ₊ = κ P₊`, `κ₋ = κ P₋`.
    pub fn new(amplitude: f64, p_minus: f64, kappa: f64) -> Result<Self> {
        let p_plus = 1.0 - p_minus;
        let spec = TlfSpec {
            amplitude,
            p_plus,
            p_minus,
            kappa_plus: kappa * p_plus,
            kappa_minus: kappa * p_minus,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn balanced(amplitude: f64, kappa: f64) -> Self {
        TlfSpec {
            amplitude,
            p_plus: 0.5,
            p_minus: 0.5,
            kappa_plus: 0.5 * kappa,
            kappa_minus: 0.5 * kappa,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.amplitude,
            self.p_plus,
            self.p_minus,
            self.kappa_plus,
            self.kappa_minus,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::param("fluctuator has a non-finite field"));
        }
        if self.amplitude < 0.0 {
            return Err(Error::param("fluctuator amplitude must be non-negative"));
        }
        if !(self.p_plus > 0.0 && self.p_plus < 1.0 && self.p_minus > 0.0 && self.p_minus < 1.0) {
            return Err(Error::param(format!(
                "probabilities ({}, {}) must lie in (0, 1)",
                self.p_plus, self.p_minus
            )));
        }
        if ((self.p_plus + self.p_minus) - 1.0).abs() > 1e-12 {
            return Err(Error::param(format!(
                "probabilities sum to {}",
                self.p_plus + self.p_minus
            )));
        }
        if self.kappa_plus < 0.0 || self.kappa_minus < 0.0 {
            return Err(Error::param("flip rates must be non-negative"));
        }
        let lhs = self.kappa_minus * self.p_plus;
        let rhs = self.kappa_plus * self.p_minus;
        if (lhs - rhs).abs() > 1e-12 * lhs.abs().max(rhs.abs()) {
            return Err(Error::param(format!(
                "detailed balance violated: kappa_minus*p_plus = {lhs:.6e}, kappa_plus*p_minus = {rhs:.6e}"
            )));
        }
        Ok(())
    }

    pub fn kappa(&self) -> f64 {
        self.kappa_plus + self.kappa_minus
    }

    /// Δκ = κ₊ − κ₋.
    pub fn delta_kappa(&self) -> f64 {
        self.kappa_plus - self.kappa_minus
    }

    /// ξ̄ = |ξ|(P₊ − P₋).
    pub fn mean_offset(&self) -> f64 {
        self.amplitude * (self.p_plus - self.p_minus)
    }

    /// ⟨τ⟩ = P₊ − P₋.
    pub fn mean_sign(&self) -> f64 {
        self.p_plus - self.p_minus
    }

    /// |2ξ|² P₊ P₋.
    pub fn variance(&self) -> f64 {
        4.0 * self.amplitude * self.amplitude * self.p_plus * self.p_minus
    }

    /// Centered noise value in state `sign` (±1).
    pub fn value(&self, sign: i8) -> f64 {
        f64::from(sign) * self.amplitude - self.mean_offset()
    }

    fn exit_rate(&self, sign: i8) -> f64 {
        if sign > 0 {
            self.kappa_minus
        } else {
            self.kappa_plus
        }
    }
}

/// Exact multi-time moment of the centered telegraph signal.
///
/// `times` holds `order` instants sorted descending (`t ≥ t₁ ≥ … `); only
/// their differences matter.
pub fn analytic_correlation(tlf: &TlfSpec, order: usize, times: &[f64]) -> Result<f64> {
    if !(1..=4).contains(&order) {
        return Err(Error::param(format!("correlation order {order} not in 1..=4")));
    }
    if times.len() != order {
        return Err(Error::param(format!(
            "order {order} needs {order} times, got {}",
            times.len()
        )));
    }
    if times.windows(2).any(|w| w[0] < w[1]) || times.iter().any(|t| !t.is_finite()) {
        return Err(Error::param("times must be finite and sorted descending"));
    }
    let k = tlf.kappa();
    let var = tlf.variance();
    let two_xi = 2.0 * tlf.amplitude;
    let pp = tlf.p_plus * tlf.p_minus;
    let diff = tlf.p_plus - tlf.p_minus;
    Ok(match order {
        1 => 0.0,
        2 => var * (-k * (times[0] - times[1])).exp(),
        3 => -two_xi.powi(3) * diff * pp * (-k * (times[0] - times[2])).exp(),
        _ => {
            let (t, t1, t2, t3) = (times[0], times[1], times[2], times[3]);
            two_xi.powi(4) * pp * pp * (-k * (t - t1) - k * (t2 - t3)).exp()
                + two_xi.powi(4) * pp * diff * diff * (-k * (t - t3)).exp()
        }
    })
}

/// Lorentzian power spectral density of one fluctuator.
pub fn tlf_spectrum(tlf: &TlfSpec, omega: f64) -> f64 {
    let k = tlf.kappa();
    tlf.variance() * 2.0 * k / (k * k + omega * omega)
}

/// `count` balanced fluctuators with log-uniform total rates on
/// `[kappa_min, kappa_max]` and a common amplitude giving composite RMS
/// `target_rms`.
pub fn build_gaussian_bath(
    target_rms: f64,
    count: usize,
    kappa_min: f64,
    kappa_max: f64,
    seed: u64,
) -> Result<Vec<TlfSpec>> {
    if count == 0 {
        return Err(Error::param("bath needs at least one fluctuator"));
    }
    if !(kappa_min > 0.0 && kappa_max > kappa_min) || !kappa_max.is_finite() {
        return Err(Error::param(format!(
            "bath rates need 0 < kappa_min < kappa_max, got [{kappa_min}, {kappa_max}]"
        )));
    }
    if !(target_rms >= 0.0 && target_rms.is_finite()) {
        return Err(Error::param("bath RMS must be finite and non-negative"));
    }
    let amplitude = target_rms / (count as f64).sqrt();
    let (lo, hi) = (kappa_min.ln(), kappa_max.ln());
    let mut rng = rng::stream(seed, 0, rng::AUX_STREAM);
    Ok((0..count)
        .map(|_| {
            let u: f64 = rng.random();
            TlfSpec::balanced(amplitude, (lo + u * (hi - lo)).exp())
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub strong_tlfs: Vec<TlfSpec>,
    pub gaussian_bath: Vec<TlfSpec>,
    pub master_seed: u64,
}

impl NoiseModel {
    pub fn quiet(master_seed: u64) -> Self {
        NoiseModel {
            strong_tlfs: Vec::new(),
            gaussian_bath: Vec::new(),
            master_seed,
        }
    }

    pub fn members(&self) -> impl Iterator<Item = &TlfSpec> {
        self.strong_tlfs.iter().chain(self.gaussian_bath.iter())
    }

    pub fn validate(&self) -> Result<()> {
        for (i, t) in self.strong_tlfs.iter().enumerate() {
            t.validate().map_err(|e| Error::param(format!("strong TLF {i}: {e}")))?;
        }
        for (i, t) in self.gaussian_bath.iter().enumerate() {
            t.validate().map_err(|e| Error::param(format!("bath TLF {i}: {e}")))?;
            if t.p_plus != 0.5 || t.p_minus != 0.5 {
                return Err(Error::param(format!("bath TLF {i} is not balanced")));
            }
        }
        Ok(())
    }

    pub fn variance(&self) -> f64 {
        self.members().map(TlfSpec::variance).sum()
    }

    pub fn bath_variance(&self) -> f64 {
        self.gaussian_bath.iter().map(TlfSpec::variance).sum()
    }

    /// Noise realization for one trajectory. Fluctuator `i` draws from
    /// stream `(trajectory_index, i)`.
    pub fn composite_trace(&self, t_max: f64, trajectory_index: u64) -> Result<NoiseTrace> {
        let fluctuators = self
            .members()
            .enumerate()
            .map(|(i, tlf)| {
                let seed = rng::stream_seed(self.master_seed, trajectory_index, i as u64);
                sample_tlf_trace(tlf, t_max, seed)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(NoiseTrace { t_max, fluctuators })
    }
}

/// One fluctuator's realization on `[0, t_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FluctuatorTrace {
    pub initial_sign: i8,
    pub flips: Vec<f64>,
    pub amplitude: f64,
    pub offset: f64,
}

impl FluctuatorTrace {
    pub fn sign_at(&self, t: f64) -> i8 {
        let n = self.flips.partition_point(|&f| f <= t);
        if n % 2 == 0 {
            self.initial_sign
        } else {
            -self.initial_sign
        }
    }

    pub fn value_at(&self, t: f64) -> f64 {
        f64::from(self.sign_at(t)) * self.amplitude - self.offset
    }
}

pub fn sample_tlf_trace(tlf: &TlfSpec, t_max: f64, seed: u64) -> Result<FluctuatorTrace> {
    if !(t_max > 0.0 && t_max.is_finite()) {
        return Err(Error::param(format!(
            "trace horizon {t_max} must be finite and positive"
        )));
    }
    if !(tlf.kappa_plus.is_finite() && tlf.kappa_minus.is_finite()) || tlf.kappa_plus < 0.0 || tlf.kappa_minus < 0.0 {
        return Err(Error::param("flip rates must be finite and non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let initial_sign: i8 = if rng.random::<f64>() < tlf.p_plus { 1 } else { -1 };
    let mut flips = Vec::new();
    let mut sign = initial_sign;
    let mut t = 0.0;
    loop {
        let rate = tlf.exit_rate(sign);
        if rate <= 0.0 {
            break;
        }
        let u: f64 = rng.random();
        t += -(1.0 - u).ln() / rate;
        if t > t_max {
            break;
        }
        flips.push(t);
        sign = -sign;
    }
    Ok(FluctuatorTrace {
        initial_sign,
        flips,
        amplitude: tlf.amplitude,
        offset: tlf.mean_offset(),
    })
}

/// Piecewise-constant composite noise δξ(t).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTrace {
    pub t_max: f64,
    pub fluctuators: Vec<FluctuatorTrace>,
}

impl NoiseTrace {
    pub fn zero(t_max: f64) -> Self {
        NoiseTrace {
            t_max,
            fluctuators: Vec::new(),
        }
    }

    pub fn value_at(&self, t: f64) -> f64 {
        self.fluctuators.iter().map(|f| f.value_at(t)).sum()
    }

    /// Merged breakpoints of all fluctuators with the value on each segment.
    pub fn segments(&self) -> Segments {
        let mut events: Vec<(f64, f64)> = Vec::new();
        let mut value = 0.0;
        for f in &self.fluctuators {
            value += f.value_at(0.0);
            let mut sign = f.initial_sign;
            for &t in &f.flips {
                // Flip from `sign` to `-sign` changes the value by -2·sign·|ξ|.
                events.push((t, -2.0 * f64::from(sign) * f.amplitude));
                sign = -sign;
            }
        }
        events.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut starts = Vec::with_capacity(events.len() + 1);
        let mut values = Vec::with_capacity(events.len() + 1);
        starts.push(0.0);
        values.push(value);
        for (t, dv) in events {
            value += dv;
            if t == *starts.last().unwrap() {
                *values.last_mut().unwrap() = value;
            } else {
                starts.push(t);
                values.push(value);
            }
        }
        Segments {
            starts,
            values,
            t_max: self.t_max,
        }
    }

    /// Rows `(fluctuator_id, flip_time_ns)` for debug dumps.
    pub fn events(&self) -> Vec<(usize, f64)> {
        self.fluctuators
            .iter()
            .enumerate()
            .flat_map(|(i, f)| f.flips.iter().map(move |&t| (i, t)))
            .collect()
    }
}

/// Constant-value pieces of a trace: segment `i` covers
/// `[starts[i], starts[i+1])`, the last one runs to `t_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct Segments {
    pub starts: Vec<f64>,
    pub values: Vec<f64>,
    pub t_max: f64,
}

impl Segments {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn end(&self, i: usize) -> f64 {
        self.starts.get(i + 1).copied().unwrap_or(f64::INFINITY)
    }

    /// Merges flips closer than `dt_min` into the preceding segment, keeping
    /// its left value. An approximation for very dense baths.
    pub fn coarsen(&self, dt_min: f64) -> Segments {
        let mut starts = vec![self.starts[0]];
        let mut values = vec![self.values[0]];
        for i in 1..self.len() {
            if self.starts[i] - starts.last().unwrap() >= dt_min {
                starts.push(self.starts[i]);
                values.push(self.values[i]);
            }
        }
        Segments {
            starts,
            values,
            t_max: self.t_max,
        }
    }

    /// Cursor for monotone lookups.
    pub fn cursor(&self) -> SegmentCursor<'_> {
        SegmentCursor { seg: self, idx: 0 }
    }
}

pub struct SegmentCursor<'a> {
    seg: &'a Segments,
    idx: usize,
}

impl SegmentCursor<'_> {
    /// Value at `t`; `t` must not decrease between calls.
    pub fn value(&mut self, t: f64) -> f64 {
        while self.idx + 1 < self.seg.starts.len() && self.seg.starts[self.idx + 1] <= t {
            self.idx += 1;
        }
        self.seg.values[self.idx]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detailed_balance_split() {
        let t = TlfSpec::new(1.0, 0.7, 2.0).unwrap();
        assert!((t.kappa_minus * t.p_plus - t.kappa_plus * t.p_minus).abs() < 1e-15);
        assert!((t.kappa() - 2.0).abs() < 1e-15);
        assert!((t.mean_offset() + 0.4).abs() < 1e-15);
    }

    #[test]
    fn broken_balance_rejected() {
        let t = TlfSpec {
            amplitude: 1.0,
            p_plus: 0.3,
            p_minus: 0.7,
            kappa_plus: 1.0,
            kappa_minus: 1.0,
        };
        assert!(t.validate().is_err());
    }

    #[test]
    fn frozen_fluctuator_never_flips() {
        let t = TlfSpec::new(1.0, 0.5, 0.0).unwrap();
        let tr = sample_tlf_trace(&t, 1e6, 3).unwrap();
        assert!(tr.flips.is_empty());
    }

    #[test]
    fn correlation_low_orders() {
        let t = TlfSpec::new(0.3, 0.7, 1.5).unwrap();
        assert_eq!(analytic_correlation(&t, 1, &[2.0]).unwrap(), 0.0);
        let v = analytic_correlation(&t, 2, &[0.0, 0.0]).unwrap();
        assert!((v - t.variance()).abs() < 1e-15);
        let even = TlfSpec::balanced(0.3, 1.0);
        assert_eq!(analytic_correlation(&even, 3, &[3.0, 1.0, 0.0]).unwrap(), 0.0);
        assert!(analytic_correlation(&t, 2, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn segments_match_pointwise_value() {
        let model = NoiseModel {
            strong_tlfs: vec![TlfSpec::new(0.2, 0.7, 0.05).unwrap()],
            gaussian_bath: build_gaussian_bath(0.1, 15, 0.01, 0.5, 4).unwrap(),
            master_seed: 11,
        };
        let tr = model.composite_trace(200.0, 3).unwrap();
        let seg = tr.segments();
        let mut cur = seg.cursor();
        for i in 0..2000 {
            let t = 0.1 * i as f64;
            assert!((cur.value(t) - tr.value_at(t)).abs() < 1e-12);
        }
    }
}

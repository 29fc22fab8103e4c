//! Damped-oscillation fits of coherence series.
//!
//! `Oscillating`: Re ρ(t) ≈ A e^{−γt} cos(ωt + φ).
//! `Decay`: Re ρ(t) ≈ A e^{−γt}, for refocused (echo) signals.

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::C64;
use crate::series::CoherenceSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitModel {
    Oscillating,
    Decay,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub gamma2: f64,
    pub omega: f64,
    pub amplitude: f64,
    pub phase: f64,
    pub residual_rms: f64,
    pub window: (f64, f64),
    pub converged: bool,
    /// The optimizer returned γ < 0 and the reported value was clamped to 0.
    pub clamped: bool,
    pub iterations: usize,
}

const MAX_ITER: usize = 500;
const PARAM_TOL: f64 = 1e-10;

/// Fits the oscillating model with guesses taken from the data.
pub fn fit_exponential_oscillation(series: &CoherenceSeries, window: (f64, f64)) -> Result<FitResult> {
    fit_series(series, window, FitModel::Oscillating, None)
}

pub fn fit_series(
    series: &CoherenceSeries,
    window: (f64, f64),
    model: FitModel,
    guess: Option<(f64, f64)>,
) -> Result<FitResult> {
    fit_samples(&series.times, &series.rho_eg, window, model, guess)
}

/// `guess` optionally supplies (γ, ω), e.g. from the analytic prediction.
pub fn fit_samples(
    times: &[f64],
    rho: &[C64],
    window: (f64, f64),
    model: FitModel,
    guess: Option<(f64, f64)>,
) -> Result<FitResult> {
    let (lo, hi) = window;
    let idx: Vec<usize> = (0..times.len()).filter(|&i| times[i] >= lo && times[i] <= hi).collect();
    if idx.len() < 8 {
        return Err(Error::param(format!(
            "fit window [{lo}, {hi}] ns holds {} samples, need at least 8",
            idx.len()
        )));
    }
    let t: Vec<f64> = idx.iter().map(|&i| times[i]).collect();
    let z: Vec<C64> = idx.iter().map(|&i| rho[i]).collect();
    let y: Vec<f64> = z.iter().map(|v| v.re).collect();

    let (g0, w0, a0, p0) = initial_guess(&t, &z, model, guess);
    let mut p = Vector4::new(a0, g0, w0, p0);
    let osc = model == FitModel::Oscillating;
    let n_par = if osc { 4 } else { 2 };

    let eval = |p: &Vector4<f64>, ti: f64| -> (f64, Vector4<f64>) {
        let e = (-p[1] * ti).exp();
        if osc {
            let arg = p[2] * ti + p[3];
            let (s, c) = arg.sin_cos();
            let f = p[0] * e * c;
            (f, Vector4::new(e * c, -ti * f, -p[0] * e * s * ti, -p[0] * e * s))
        } else {
            let f = p[0] * e;
            (f, Vector4::new(e, -ti * f, 0.0, 0.0))
        }
    };
    let cost = |p: &Vector4<f64>| -> f64 { t.iter().zip(&y).map(|(&ti, &yi)| (eval(p, ti).0 - yi).powi(2)).sum() };

    let mut mu = 1e-3;
    let mut c = cost(&p);
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..MAX_ITER {
        iterations = it + 1;
        let mut jtj = Matrix4::<f64>::zeros();
        let mut jtr = Vector4::<f64>::zeros();
        for (&ti, &yi) in t.iter().zip(&y) {
            let (f, g) = eval(&p, ti);
            jtj += g * g.transpose();
            jtr += g * (yi - f);
        }
        if !osc {
            for k in 2..4 {
                jtj[(k, k)] = 1.0;
                jtr[k] = 0.0;
            }
        }
        let mut accepted = false;
        for _ in 0..60 {
            let mut a = jtj;
            for k in 0..n_par {
                a[(k, k)] += mu * jtj[(k, k)].max(1e-300);
            }
            let Some(step) = a.lu().solve(&jtr) else {
                mu *= 10.0;
                continue;
            };
            let trial = p + step;
            let ct = cost(&trial);
            if ct.is_finite() && ct <= c {
                let small = (0..n_par).all(|k| step[k].abs() <= PARAM_TOL * (trial[k].abs() + PARAM_TOL));
                p = trial;
                c = ct;
                mu = (mu * 0.3).max(1e-12);
                accepted = true;
                if small {
                    converged = true;
                }
                break;
            }
            mu *= 10.0;
        }
        if converged {
            break;
        }
        if !accepted {
            // No downhill step at any damping: a stationary point of the cost.
            converged = true;
            break;
        }
    }

    let (mut amplitude, mut phase) = (p[0], if osc { p[3] } else { 0.0 });
    if amplitude < 0.0 {
        amplitude = -amplitude;
        phase += std::f64::consts::PI;
    }
    let phase = phase.rem_euclid(2.0 * std::f64::consts::PI);
    let clamped = p[1] < 0.0;
    let result = FitResult {
        gamma2: p[1].max(0.0),
        omega: if osc { p[2] } else { 0.0 },
        amplitude,
        phase,
        residual_rms: (c / t.len() as f64).sqrt(),
        window,
        converged,
        clamped,
        iterations,
    };
    if converged {
        Ok(result)
    } else {
        Err(Error::Fit(Box::new(result)))
    }
}

/// γ from the log-envelope slope, ω from the unwrapped phase slope of the
/// complex signal (ρ ∝ e^{−iωt}), both over points well above zero.
fn initial_guess(t: &[f64], z: &[C64], model: FitModel, guess: Option<(f64, f64)>) -> (f64, f64, f64, f64) {
    let peak = z.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let keep: Vec<usize> = (0..t.len()).filter(|&i| z[i].norm() > 0.05 * peak).collect();
    let keep = if keep.len() >= 2 { keep } else { (0..t.len()).collect() };

    let xs: Vec<f64> = keep.iter().map(|&i| t[i]).collect();
    let logs: Vec<f64> = keep.iter().map(|&i| z[i].norm().max(1e-300).ln()).collect();
    let (slope_l, icpt_l) = linear_regression(&xs, &logs);
    let mut gamma = (-slope_l).max(0.0);
    let mut amp = icpt_l.exp();

    let mut phases = Vec::with_capacity(keep.len());
    let mut prev = 0.0;
    for (k, &i) in keep.iter().enumerate() {
        let mut a = z[i].arg();
        if k > 0 {
            while a - prev > std::f64::consts::PI {
                a -= 2.0 * std::f64::consts::PI;
            }
            while a - prev < -std::f64::consts::PI {
                a += 2.0 * std::f64::consts::PI;
            }
        }
        phases.push(a);
        prev = a;
    }
    let (slope_p, icpt_p) = linear_regression(&xs, &phases);
    let mut omega = -slope_p;
    let phase = icpt_p;

    if let Some((g, w)) = guess {
        gamma = g;
        omega = w;
    }
    if model == FitModel::Decay {
        amp = z[keep[0]].re.abs().max(amp.min(1.0));
        return (gamma, 0.0, amp, 0.0);
    }
    (gamma, omega, amp, phase)
}

fn linear_regression(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return (0.0, my);
    }
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

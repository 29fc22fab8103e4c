//! Adaptive Gauss–Kronrod (7/15) quadrature.

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_41,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// ∫ₐᵇ f with global subdivision of the worst interval until the summed
/// error estimate is below `max(abs_tol, rel_tol·|I|)`.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> Result<f64> {
    let mut parts = vec![(a, b, gk15(f, a, b))];
    for _ in 0..4000 {
        let total: f64 = parts.iter().map(|p| p.2 .0).sum();
        let err: f64 = parts.iter().map(|p| p.2 .1).sum();
        if err <= abs_tol.max(rel_tol * total.abs()) {
            return Ok(total);
        }
        let worst = parts
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .2 .1.total_cmp(&y.1 .2 .1))
            .map(|(i, _)| i)
            .unwrap();
        let (lo, hi, _) = parts.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        parts.push((lo, mid, gk15(f, lo, mid)));
        parts.push((mid, hi, gk15(f, mid, hi)));
    }
    Err(Error::Convergence(format!(
        "quadrature on [{a:.3e}, {b:.3e}] exceeded its subdivision budget"
    )))
}

/// ∫₀^∞ f over geometrically growing pieces starting at `scale`, stopping once
/// a piece contributes less than `rel_tol` of the running total.
pub fn integrate_half_line<F: Fn(f64) -> f64>(f: &F, scale: f64, rel_tol: f64) -> Result<f64> {
    let mut total = integrate(f, 0.0, scale, 0.0, rel_tol)?;
    let mut lo = scale;
    for _ in 0..200 {
        let hi = 2.0 * lo;
        // Tail pieces only need to be accurate relative to the running total.
        let piece = integrate(f, lo, hi, 1e-2 * rel_tol * total.abs(), rel_tol)?;
        total += piece;
        if piece.abs() <= 1e-3 * rel_tol * total.abs() && lo > 64.0 * scale {
            return Ok(total);
        }
        lo = hi;
    }
    Err(Error::Convergence("half-line quadrature tail did not decay".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exact() {
        let v = integrate(&|x: f64| x.powi(5) - 2.0 * x, 0.0, 2.0, 1e-14, 1e-14).unwrap();
        assert!((v - (64.0 / 6.0 - 4.0)).abs() < 1e-12);
    }

    #[test]
    fn lorentzian_half_line() {
        let k = 0.3;
        let v = integrate_half_line(&|w: f64| 2.0 * k / (k * k + w * w), k, 1e-10).unwrap();
        assert!((v - std::f64::consts::PI).abs() < 1e-8);
    }
}

//! Experiment configuration. Every physical quantity is a string with an
//! explicit unit, e.g. `"0.479 GHz"`, `"20 us"`, `"9e-5 turns"`, and is
//! converted to the internal ns / rad/ns / rad convention on load.

use std::f64::consts::TAU;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use dephasim::exact_tlf::ShiftConvention;
use dephasim::floquet::{FloquetOptions, SearchWindow};
use dephasim::noise::{build_gaussian_bath, NoiseModel, TlfSpec};
use dephasim::qubit::QubitSpec;

use crate::error::{CliError, CliResult};

fn split_quantity(s: &str) -> Result<(f64, &str), String> {
    let mut parts = s.split_whitespace();
    let (Some(num), Some(unit), None) = (parts.next(), parts.next(), parts.next()) else {
        return Err(format!("expected \"<number> <unit>\", got {s:?}"));
    };
    let v: f64 = num.parse().map_err(|_| format!("bad number {num:?} in {s:?}"))?;
    if !v.is_finite() {
        return Err(format!("{s:?} is not finite"));
    }
    Ok((v, unit))
}

/// Angular frequency, rad/ns. Accepts GHz, MHz, kHz, Hz (ordinary frequency,
/// multiplied by 2π) or rad/ns.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(try_from = "String")]
pub struct Frequency(pub f64);

impl TryFrom<String> for Frequency {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        let (v, unit) = split_quantity(&s)?;
        let scale = match unit {
            "GHz" => TAU,
            "MHz" => TAU * 1e-3,
            "kHz" => TAU * 1e-6,
            "Hz" => TAU * 1e-9,
            "rad/ns" => 1.0,
            _ => {
                return Err(format!(
                    "unknown frequency unit {unit:?} (use GHz, MHz, kHz, Hz or rad/ns)"
                ))
            }
        };
        Ok(Frequency(v * scale))
    }
}

/// Time, ns.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(try_from = "String")]
pub struct Duration(pub f64);

impl TryFrom<String> for Duration {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        let (v, unit) = split_quantity(&s)?;
        let scale = match unit {
            "ns" => 1.0,
            "us" | "µs" => 1e3,
            "ms" => 1e6,
            "s" => 1e9,
            _ => return Err(format!("unknown time unit {unit:?} (use ns, us, ms or s)")),
        };
        Ok(Duration(v * scale))
    }
}

/// Phase, rad. `turns` is the "x/2π" convention.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(try_from = "String")]
pub struct Phase(pub f64);

impl TryFrom<String> for Phase {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        let (v, unit) = split_quantity(&s)?;
        let scale = match unit {
            "rad" => 1.0,
            "turns" => TAU,
            _ => return Err(format!("unknown phase unit {unit:?} (use rad or turns)")),
        };
        Ok(Phase(v * scale))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Desk,
    Paper,
}

impl Scale {
    fn bath_count(self) -> usize {
        match self {
            Scale::Desk => 201,
            Scale::Paper => 2001,
        }
    }

    fn n_traj(self) -> usize {
        match self {
            Scale::Desk => 2000,
            Scale::Paper => 10_000,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: Option<u64>,
    pub scale: Option<Scale>,
    #[serde(default)]
    pub qubit: QubitSection,
    #[serde(default)]
    pub noise: NoiseSection,
    pub sweep: Option<SweepSection>,
    pub floquet: Option<FloquetSection>,
    pub floquet_ramsey: Option<FloquetRamseySection>,
    pub spectrum: Option<LambdaRange>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QubitSection {
    pub e_c: Option<Frequency>,
    pub e_l: Option<Frequency>,
    pub e_j: Option<Frequency>,
    pub basis_dim: Option<usize>,
    pub subspace_dim: Option<usize>,
    pub d2_levels: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    #[serde(default)]
    pub tlf: Vec<TlfSection>,
    pub bath: Option<BathSection>,
    /// Fluctuator amplitude used for the beating frequency of the exact
    /// model: the telegraph excursion (default) or the mean offset.
    pub shift_convention: Option<Shift>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shift {
    Excursion,
    MeanOffset,
}

/// A strong fluctuator. Give either `kappa` (total rate, split by detailed
/// balance) or both `kappa_plus` and `kappa_minus`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TlfSection {
    pub name: Option<String>,
    pub amplitude: Phase,
    pub p_minus: f64,
    pub kappa: Option<Frequency>,
    pub kappa_plus: Option<Frequency>,
    pub kappa_minus: Option<Frequency>,
    /// Number of identical copies.
    pub copies: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BathSection {
    pub rms: Phase,
    pub count: Option<usize>,
    pub kappa_min: Frequency,
    pub kappa_max: Frequency,
    pub seed: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaRange {
    pub from: Phase,
    pub to: Phase,
    pub points: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub lambda: Option<Vec<Phase>>,
    pub lambda_range: Option<LambdaRange>,
    pub horizon: Option<Duration>,
    pub n_times: Option<usize>,
    pub n_traj: Option<usize>,
    pub fit_window: Option<[Duration; 2]>,
    pub dt_min: Option<Duration>,
    pub pulse_fraction: Option<f64>,
    /// Relative SSE-vs-analytic tolerance behind the `agree` column.
    pub agreement_tolerance: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FloquetSection {
    pub alpha: Option<f64>,
    pub harmonic: Option<u32>,
    pub a_min: Option<Phase>,
    pub a_max: Option<Phase>,
    pub omega_min: Option<Frequency>,
    pub omega_max: Option<Frequency>,
    pub n_a: Option<usize>,
    pub n_omega: Option<usize>,
    pub samples: Option<usize>,
    pub harmonics: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FloquetRamseySection {
    /// Sweet-spot JSON from `floquet-search`, relative to the config file.
    pub spot: Option<PathBuf>,
    pub horizon: Option<Duration>,
    pub record_every: Option<usize>,
    pub n_traj: Option<usize>,
    pub amp_jitter: Option<f64>,
    pub static_points: Option<usize>,
}

/// Parses TOML text. Syntax and schema errors carry the line and field.
pub fn parse(text: &str) -> CliResult<ExperimentConfig> {
    toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
}

/// Resolved sweep parameters with defaults applied.
#[derive(Debug, Clone, Serialize)]
pub struct Sweep {
    pub lambdas: Vec<f64>,
    pub horizon: f64,
    pub n_times: usize,
    pub n_traj: usize,
    pub window: (f64, f64),
    pub dt_min: f64,
    pub pulse_fraction: f64,
    pub agreement_tolerance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FloquetRamseyPlan {
    pub spot: Option<PathBuf>,
    pub horizon: f64,
    pub record_every: usize,
    pub n_traj: usize,
    pub amp_jitter: f64,
    pub static_points: usize,
}

fn range(from: f64, to: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![from],
        n => (0..n)
            .map(|i| ((n - 1 - i) as f64 * from + i as f64 * to) / (n - 1) as f64)
            .collect(),
    }
}

fn bad(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {msg}"))
}

impl ExperimentConfig {
    pub fn scale(&self) -> Scale {
        self.scale.unwrap_or(Scale::Desk)
    }

    pub fn seed(&self) -> u64 {
        self.master_seed.unwrap_or(0)
    }

    pub fn qubit_spec(&self) -> CliResult<QubitSpec> {
        let mut s = QubitSpec::heavy_fluxonium();
        let q = &self.qubit;
        if let Some(v) = q.e_c {
            s.e_c = v.0;
        }
        if let Some(v) = q.e_l {
            s.e_l = v.0;
        }
        if let Some(v) = q.e_j {
            s.e_j = v.0;
        }
        s.basis_dim = q.basis_dim.unwrap_or(s.basis_dim);
        s.subspace_dim = q.subspace_dim.unwrap_or(s.subspace_dim);
        s.d2_levels = q.d2_levels.unwrap_or(s.d2_levels);
        s.validate().map_err(|e| bad("qubit", e))?;
        Ok(s)
    }

    /// Strong fluctuators as written, without validation, with their
    /// display names.
    pub fn strong_tlfs_raw(&self) -> CliResult<Vec<(String, TlfSpec)>> {
        let mut out = Vec::new();
        for (i, t) in self.noise.tlf.iter().enumerate() {
            let name = t.name.clone().unwrap_or_else(|| format!("noise.tlf[{i}]"));
            if !(t.p_minus > 0.0 && t.p_minus < 1.0) {
                return Err(bad(&name, format!("p_minus must lie in (0, 1), got {}", t.p_minus)));
            }
            let spec = match (t.kappa, t.kappa_plus, t.kappa_minus) {
                (Some(k), None, None) => TlfSpec::new(t.amplitude.0, t.p_minus, k.0).map_err(|e| bad(&name, e))?,
                (None, Some(kp), Some(km)) => TlfSpec {
                    amplitude: t.amplitude.0,
                    p_plus: 1.0 - t.p_minus,
                    p_minus: t.p_minus,
                    kappa_plus: kp.0,
                    kappa_minus: km.0,
                },
                (None, None, None) => {
                    TlfSpec::new(t.amplitude.0, t.p_minus, dephasim::units::khz(1.0)).map_err(|e| bad(&name, e))?
                }
                _ => return Err(bad(&name, "give either kappa or both kappa_plus and kappa_minus")),
            };
            let copies = t.copies.unwrap_or(1);
            for c in 0..copies {
                let n = if copies > 1 {
                    format!("{name}#{c}")
                } else {
                    name.clone()
                };
                out.push((n, spec));
            }
        }
        Ok(out)
    }

    pub fn shift_convention(&self) -> ShiftConvention {
        match self.noise.shift_convention {
            Some(Shift::MeanOffset) => ShiftConvention::MeanOffset,
            _ => ShiftConvention::Excursion,
        }
    }

    pub fn noise_model(&self) -> CliResult<NoiseModel> {
        let mut strong = Vec::new();
        for (name, t) in self.strong_tlfs_raw()? {
            t.validate().map_err(|e| bad(&name, e))?;
            strong.push(t);
        }
        let bath = match &self.noise.bath {
            Some(b) => build_gaussian_bath(
                b.rms.0,
                b.count.unwrap_or(self.scale().bath_count()),
                b.kappa_min.0,
                b.kappa_max.0,
                b.seed,
            )
            .map_err(|e| bad("noise.bath", e))?,
            None => Vec::new(),
        };
        Ok(NoiseModel {
            strong_tlfs: strong,
            gaussian_bath: bath,
            master_seed: self.seed(),
        })
    }

    pub fn sweep(&self) -> CliResult<Sweep> {
        let s = self.sweep.as_ref().ok_or_else(|| bad("sweep", "section is required"))?;
        let lambdas = match (&s.lambda, &s.lambda_range) {
            (Some(v), None) => v.iter().map(|p| p.0).collect(),
            (None, Some(r)) => range(r.from.0, r.to.0, r.points),
            _ => return Err(bad("sweep", "give exactly one of lambda or lambda_range")),
        };
        if lambdas.is_empty() {
            return Err(bad("sweep.lambda", "grid is empty"));
        }
        let horizon = s.horizon.map_or(20_000.0, |d| d.0);
        if !(horizon > 0.0) {
            return Err(bad("sweep.horizon", "must be positive"));
        }
        let window = s.fit_window.map_or((0.0, horizon), |[a, b]| (a.0, b.0));
        if !(window.0 >= 0.0 && window.1 > window.0 && window.1 <= horizon) {
            return Err(bad("sweep.fit_window", "must satisfy 0 ≤ lo < hi ≤ horizon"));
        }
        let n_times = s.n_times.unwrap_or(1001);
        if n_times < 8 {
            return Err(bad("sweep.n_times", "need at least 8 samples"));
        }
        let n_traj = s.n_traj.unwrap_or(self.scale().n_traj());
        if n_traj == 0 {
            return Err(bad("sweep.n_traj", "must be positive"));
        }
        let pulse_fraction = s.pulse_fraction.unwrap_or(0.5);
        if !(pulse_fraction > 0.0 && pulse_fraction < 1.0) {
            return Err(bad("sweep.pulse_fraction", "must lie in (0, 1)"));
        }
        Ok(Sweep {
            lambdas,
            horizon,
            n_times,
            n_traj,
            window,
            dt_min: s.dt_min.map_or(0.0, |d| d.0),
            pulse_fraction,
            agreement_tolerance: s.agreement_tolerance.unwrap_or(0.2),
        })
    }

    /// Grid for the `spectrum` command: `[spectrum]`, else ±0.05 rad.
    pub fn spectrum_lambdas(&self) -> CliResult<Vec<f64>> {
        let grid = match &self.spectrum {
            Some(r) => range(r.from.0, r.to.0, r.points),
            None => range(-0.05, 0.05, 101),
        };
        if grid.is_empty() {
            return Err(bad("spectrum.points", "grid is empty"));
        }
        Ok(grid)
    }

    pub fn floquet_options(&self) -> FloquetOptions {
        let mut o = FloquetOptions::default();
        if let Some(f) = &self.floquet {
            o.samples = f.samples.unwrap_or(o.samples);
            o.harmonics = f.harmonics.unwrap_or(o.harmonics);
        }
        o
    }

    /// `(alpha, harmonic)` of the drive waveform.
    pub fn drive_shape(&self) -> CliResult<(f64, u32)> {
        let f = self.floquet.clone().unwrap_or_default();
        let h = f.harmonic.unwrap_or(1);
        if h == 0 {
            return Err(bad("floquet.harmonic", "must be a positive integer"));
        }
        Ok((f.alpha.unwrap_or(1.0), h))
    }

    pub fn search_window(&self, delta: f64) -> CliResult<SearchWindow> {
        let mut w = SearchWindow::default_for(delta);
        if let Some(f) = &self.floquet {
            if let Some(v) = f.a_min {
                w.a_min = v.0;
            }
            if let Some(v) = f.a_max {
                w.a_max = v.0;
            }
            if let Some(v) = f.omega_min {
                w.omega_min = v.0;
            }
            if let Some(v) = f.omega_max {
                w.omega_max = v.0;
            }
            w.n_a = f.n_a.unwrap_or(w.n_a);
            w.n_omega = f.n_omega.unwrap_or(w.n_omega);
        }
        w.validate().map_err(|e| bad("floquet", e))?;
        Ok(w)
    }

    pub fn floquet_ramsey(&self) -> CliResult<FloquetRamseyPlan> {
        let f = self.floquet_ramsey.clone().unwrap_or_default();
        let plan = FloquetRamseyPlan {
            spot: f.spot,
            horizon: f.horizon.map_or(200_000.0, |d| d.0),
            record_every: f.record_every.unwrap_or(4),
            n_traj: f.n_traj.unwrap_or(self.scale().n_traj()),
            amp_jitter: f.amp_jitter.unwrap_or(0.0),
            static_points: f.static_points.unwrap_or(8001),
        };
        if !(plan.horizon > 0.0) || plan.record_every == 0 || plan.n_traj == 0 || plan.static_points < 8 {
            return Err(bad(
                "floquet_ramsey",
                "horizon, record_every, n_traj must be positive and static_points ≥ 8",
            ));
        }
        if !(plan.amp_jitter >= 0.0) {
            return Err(bad("floquet_ramsey.amp_jitter", "must be non-negative"));
        }
        Ok(plan)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_configs_resolve() {
        let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        let mut seen = 0;
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.extension().is_none_or(|e| e != "toml") {
                continue;
            }
            let c =
                parse(&std::fs::read_to_string(&path).unwrap()).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            c.qubit_spec().unwrap();
            c.noise_model().unwrap();
            c.drive_shape().unwrap();
            c.spectrum_lambdas().unwrap();
            c.search_window(0.0872).unwrap();
            if c.sweep.is_some() {
                c.sweep().unwrap();
            }
            if c.floquet_ramsey.is_some() {
                c.floquet_ramsey().unwrap();
            }
            seen += 1;
        }
        assert!(seen >= 6);
    }

    #[test]
    fn units_convert() {
        assert_eq!(Frequency::try_from("1 GHz".to_string()).unwrap().0, TAU);
        assert!((Frequency::try_from("1 kHz".to_string()).unwrap().0 - TAU * 1e-6).abs() < 1e-20);
        assert_eq!(Duration::try_from("20 us".to_string()).unwrap().0, 20_000.0);
        assert_eq!(Duration::try_from("2 µs".to_string()).unwrap().0, 2000.0);
        assert_eq!(Phase::try_from("0.5 turns".to_string()).unwrap().0, 0.5 * TAU);
        assert!(Phase::try_from("0.5".to_string()).is_err());
        assert!(Frequency::try_from("1 THz".to_string()).is_err());
        assert!(Duration::try_from("nan ns".to_string()).is_err());
    }

    #[test]
    fn unknown_keys_name_the_line() {
        let err = parse("master_seed = 1\n[qubit]\ne_x = \"1 GHz\"\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("e_x") && msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn unit_errors_name_the_field() {
        let err = parse("[qubit]\ne_c = \"0.4 GHzz\"\n").unwrap_err().to_string();
        assert!(err.contains("GHzz") && err.contains("line 2"), "{err}");
    }

    #[test]
    fn defaults_follow_scale() {
        let c = parse("scale = \"paper\"\n[noise.bath]\nrms = \"2e-5 turns\"\nkappa_min = \"1 kHz\"\nkappa_max = \"1 MHz\"\nseed = 7\n").unwrap();
        assert_eq!(c.noise_model().unwrap().gaussian_bath.len(), 2001);
        let c = parse("[noise.bath]\nrms = \"2e-5 turns\"\nkappa_min = \"1 kHz\"\nkappa_max = \"1 MHz\"\nseed = 7\n")
            .unwrap();
        assert_eq!(c.noise_model().unwrap().gaussian_bath.len(), 201);
    }

    #[test]
    fn lambda_grid_forms() {
        let c = parse("[sweep]\nlambda_range = { from = \"-1 rad\", to = \"1 rad\", points = 5 }\n").unwrap();
        assert_eq!(c.sweep().unwrap().lambdas, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        let c = parse("[sweep]\nlambda = []\n").unwrap();
        assert!(matches!(c.sweep(), Err(CliError::Config(_))));
    }
}

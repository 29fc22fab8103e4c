use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dephasim::exact_tlf::{exact_qubit_coherence, saturation_rate, saturation_rate_closed, BeatingSpec};
use dephasim::fit::{FitModel, FitResult};
use dephasim::floquet::{
    find_triple_sweet_spot, simulate_floquet_ramsey, DriveSpec, FloquetRamseyConfig, FloquetSystem, SearchOptions,
    SweetSpot,
};
use dephasim::keldysh::{FilterKind, Predictor};
use dephasim::lindblad::lindblad_oracle;
use dephasim::noise::{analytic_correlation, sample_tlf_trace, TlfSpec};
use dephasim::qubit::Fluxonium;
use dephasim::rng::{stream_seed, AUX_STREAM};
use dephasim::series::{linear_times, CoherenceSeries, Protocol};
use dephasim::sse::{best_effort_fit, run_ensemble_with, sweep_control, EnsembleOptions, Propagator};
use dephasim::units::to_ghz;

use crate::artifact::{num, Artifacts};
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

pub struct Context {
    pub cfg: ExperimentConfig,
    /// Directory of the config file, for resolving relative paths in it.
    pub config_dir: PathBuf,
}

fn series_rows(s: &CoherenceSeries, pred: Option<&CoherenceSeries>) -> Vec<Vec<String>> {
    (0..s.times.len())
        .map(|i| {
            let mut r = vec![
                num(s.times[i]),
                num(s.rho_eg[i].re),
                num(s.rho_eg[i].im),
                num(s.stderr[i].re),
                num(s.stderr[i].im),
            ];
            if let Some(p) = pred {
                r.push(num(p.rho_eg[i].re));
                r.push(num(p.rho_eg[i].im));
            }
            r
        })
        .collect()
}

const SERIES_HEADER: [&str; 7] = ["time_ns", "re", "im", "stderr_re", "stderr_im", "pred_re", "pred_im"];

#[derive(Serialize)]
struct FitSummary {
    lambda_rad: f64,
    fit: FitResult,
    predicted_gamma2_per_ns: Option<f64>,
    agree: Option<bool>,
}

#[derive(Serialize)]
struct SweepReport {
    protocol: Protocol,
    n_traj: usize,
    bath_members: usize,
    strong_tlfs: Vec<TlfSpec>,
    /// Control point with the smallest fitted rate.
    lambda_min_rate_rad: f64,
    /// Control point with the smallest fitted frequency.
    lambda_min_frequency_rad: f64,
    /// γ₂ at the frequency minimum over γ₂ at the rate minimum.
    rate_ratio: f64,
    /// Configuration-averaged exit rate of the strong fluctuators (echo only).
    saturation_rate_per_ns: Option<f64>,
    agreement_tolerance: f64,
    points: Vec<FitSummary>,
}

/// Shared body of `ramsey-sweep` and `echo-sweep`.
pub fn control_sweep(ctx: &Context, art: &mut Artifacts, echo: bool) -> CliResult<()> {
    let cfg = &ctx.cfg;
    let q = Fluxonium::new(cfg.qubit_spec()?)?;
    let model = cfg.noise_model()?;
    let plan = cfg.sweep()?;
    let (protocol, fit_model) = if echo {
        (
            Protocol::Echo {
                pulse_fraction: plan.pulse_fraction,
            },
            FitModel::Decay,
        )
    } else {
        (Protocol::Ramsey, FitModel::Oscillating)
    };
    let times = linear_times(plan.horizon, plan.n_times);
    let mut opts = EnsembleOptions::new(plan.n_traj);
    opts.dt_min = plan.dt_min;
    eprintln!(
        "{}: {} control points, {} trajectories, {} bath members",
        protocol.name(),
        plan.lambdas.len(),
        plan.n_traj,
        model.gaussian_bath.len()
    );
    let pts = sweep_control(
        &q,
        &model,
        protocol,
        &plan.lambdas,
        &times,
        &opts,
        plan.window,
        fit_model,
    )?;

    // The analytic filter assumes the π pulse at the midpoint.
    let predictor = Predictor::from_qubit(&q)?;
    let predicts = !echo || plan.pulse_fraction == 0.5;
    let kind = if echo { FilterKind::Echo } else { FilterKind::RamseyReal };

    let saturation = echo.then(|| saturation_rate(&model.strong_tlfs));
    let mut sweep_rows = Vec::new();
    let mut summaries = Vec::new();
    for (j, p) in pts.iter().enumerate() {
        let (pred, pred_fit) = if predicts {
            let s = predictor.predicted_coherence(p.lambda, &model, protocol, &times)?;
            let f = best_effort_fit(&s, plan.window, fit_model)?;
            let profile = predictor.dephasing_profile(p.lambda, &model, kind, &times)?;
            let mut header = vec![
                "time_ns".to_string(),
                "phi".into(),
                "re_rho".into(),
                "im_rho".into(),
                "gaussian_linear".into(),
                "gaussian_quadratic".into(),
                "tlf_cross".into(),
                "gaussian_tlf_cross".into(),
            ];
            header.extend((0..profile.per_tlf.len()).map(|m| format!("tlf_{m}")));
            let rows: Vec<Vec<String>> = (0..times.len())
                .map(|i| {
                    let mut r = vec![
                        num(times[i]),
                        num(profile.phi[i]),
                        num(s.rho_eg[i].re),
                        num(s.rho_eg[i].im),
                        num(profile.gaussian_linear[i]),
                        num(profile.gaussian_quadratic[i]),
                        num(profile.tlf_cross[i]),
                        num(profile.gaussian_tlf_cross[i]),
                    ];
                    r.extend(profile.per_tlf.iter().map(|row| num(row[i])));
                    r
                })
                .collect();
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            art.write_csv(&format!("prediction/point_{j:03}.csv"), &header, &rows)?;
            (Some(s), Some(f))
        } else {
            (None, None)
        };
        let header: &[&str] = if pred.is_some() {
            &SERIES_HEADER
        } else {
            &SERIES_HEADER[..5]
        };
        art.write_csv(
            &format!("series/point_{j:03}.csv"),
            header,
            &series_rows(&p.series, pred.as_ref()),
        )?;

        let agree = pred_fit.map(|f| (p.fit.gamma2 / f.gamma2 - 1.0).abs() <= plan.agreement_tolerance);
        let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
        sweep_rows.push(vec![
            num(p.lambda),
            num(p.fit.gamma2),
            num(to_ghz(p.fit.omega)),
            num(p.fit.residual_rms),
            num(p.fit.window.0),
            num(p.fit.window.1),
            p.fit.converged.to_string(),
            opt(pred_fit.map(|f| f.gamma2)),
            opt(pred_fit.map(|f| to_ghz(f.omega))),
            agree.map(|a| a.to_string()).unwrap_or_default(),
        ]);
        if let Some(k) = saturation {
            sweep_rows.last_mut().unwrap().push(num(k));
        }
        summaries.push(FitSummary {
            lambda_rad: p.lambda,
            fit: p.fit,
            predicted_gamma2_per_ns: pred_fit.map(|f| f.gamma2),
            agree,
        });
        eprintln!("  λ = {:+.4e} rad: γ₂ = {:.4e} /ns", p.lambda, p.fit.gamma2);
    }
    let mut header = vec![
        "lambda_rad",
        "gamma2_per_ns",
        "omega_GHz",
        "residual",
        "window_lo_ns",
        "window_hi_ns",
        "converged",
        "pred_gamma2_per_ns",
        "pred_omega_GHz",
        "agree",
    ];
    if echo {
        header.push("saturation_rate_per_ns");
    }
    art.write_csv("sweep.csv", &header, &sweep_rows)?;

    let argmin = |f: &dyn Fn(usize) -> f64| (0..pts.len()).min_by(|&a, &b| f(a).total_cmp(&f(b))).unwrap_or(0);
    let i_rate = argmin(&|i| pts[i].fit.gamma2);
    let i_freq = argmin(&|i| pts[i].fit.omega);
    let report = SweepReport {
        protocol,
        n_traj: plan.n_traj,
        bath_members: model.gaussian_bath.len(),
        strong_tlfs: model.strong_tlfs.clone(),
        lambda_min_rate_rad: pts[i_rate].lambda,
        lambda_min_frequency_rad: pts[i_freq].lambda,
        rate_ratio: pts[i_freq].fit.gamma2 / pts[i_rate].fit.gamma2,
        saturation_rate_per_ns: saturation,
        agreement_tolerance: plan.agreement_tolerance,
        points: summaries,
    };
    art.write_json("report.json", &report)
}

fn floquet_system(cfg: &ExperimentConfig) -> CliResult<(Fluxonium, FloquetSystem)> {
    let q = Fluxonium::new(cfg.qubit_spec()?)?;
    let sys = FloquetSystem::new(&q, 0.0)?;
    Ok((q, sys))
}

/// Contents of `sweet_spot.json` that `floquet-ramsey` reads back.
#[derive(Debug, Serialize, Deserialize)]
pub struct SpotFile {
    pub alpha: f64,
    pub harmonic: u32,
    pub amplitude: Option<f64>,
    pub omega_d: Option<f64>,
    pub eps01: Option<f64>,
    pub certified: bool,
}

#[derive(Serialize)]
struct SearchSummary<'a> {
    #[serde(flatten)]
    spot: SpotFile,
    best: Option<SweetSpot>,
    certificate: Option<dephasim::floquet::Certificate>,
    candidates: &'a [SweetSpot],
    rms_d2: f64,
    rms_d_eps_da: f64,
}

pub fn floquet_search(ctx: &Context, art: &mut Artifacts) -> CliResult<()> {
    let cfg = &ctx.cfg;
    let (_, sys) = floquet_system(cfg)?;
    let (alpha, harmonic) = cfg.drive_shape()?;
    let window = cfg.search_window(sys.energies[1] - sys.energies[0])?;
    let opts = SearchOptions {
        floquet: cfg.floquet_options(),
        ..SearchOptions::default()
    };
    eprintln!("floquet-search: {}×{} grid", window.n_a, window.n_omega);
    let report = find_triple_sweet_spot(&sys, alpha, harmonic, &window, &opts)?;
    let rows: Vec<Vec<String>> = report
        .grid
        .iter()
        .map(|c| {
            vec![
                num(c.amplitude),
                num(c.omega_d),
                num(c.d2.abs()),
                num(c.d_eps_da.abs()),
                num(c.product()),
            ]
        })
        .collect();
    art.write_csv(
        "heatmap.csv",
        &["A_rad", "omega_d_rad_per_ns", "abs_DF2", "abs_dEdA", "product"],
        &rows,
    )?;
    let certified = report.certificate.is_some_and(|c| c.passed);
    let summary = SearchSummary {
        spot: SpotFile {
            alpha,
            harmonic,
            amplitude: report.best.map(|b| b.amplitude),
            omega_d: report.best.map(|b| b.omega_d),
            eps01: report.best.map(|b| b.derivatives.eps01),
            certified,
        },
        best: report.best,
        certificate: report.certificate,
        candidates: &report.candidates,
        rms_d2: report.rms_d2,
        rms_d_eps_da: report.rms_d_eps_da,
    };
    art.write_json("sweet_spot.json", &summary)?;
    if certified {
        Ok(())
    } else {
        Err(CliError::Property(format!(
            "no certified triple sweet spot ({} candidates)",
            report.candidates.len()
        )))
    }
}

fn read_spot(path: &Path) -> CliResult<(DriveSpec, bool)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("floquet_ramsey.spot {}: {e}", path.display())))?;
    let spot: SpotFile = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("floquet_ramsey.spot {}: {e}", path.display())))?;
    let (Some(a), Some(w)) = (spot.amplitude, spot.omega_d) else {
        return Err(CliError::Config(format!("{} holds no sweet spot", path.display())));
    };
    Ok((DriveSpec::new(a, w, spot.alpha, spot.harmonic)?, spot.certified))
}

#[derive(Serialize)]
struct Protection {
    drive: DriveSpec,
    certified_spot: bool,
    horizon_ns: f64,
    n_traj: usize,
    gamma2_static_per_ns: f64,
    gamma2_floquet_per_ns: f64,
    gamma2_jitter_per_ns: Option<f64>,
    amp_jitter: f64,
    /// γ₂ static / γ₂ Floquet.
    improvement: f64,
    improvement_with_jitter: Option<f64>,
    /// Share of the improvement that survives amplitude jitter.
    kept_fraction: Option<f64>,
    fits: Vec<FitResult>,
}

pub fn floquet_ramsey(ctx: &Context, art: &mut Artifacts) -> CliResult<()> {
    let cfg = &ctx.cfg;
    let plan = cfg.floquet_ramsey()?;
    let spot = plan
        .spot
        .as_ref()
        .ok_or_else(|| CliError::Config("floquet_ramsey.spot: path to a sweet_spot.json is required".into()))?;
    let (drive, certified) = read_spot(&ctx.config_dir.join(spot))?;
    let (q, sys) = floquet_system(cfg)?;
    let model = cfg.noise_model()?;
    let window = (0.0, plan.horizon);
    let sol = sys.solve(0.0, &drive, cfg.floquet_options().samples)?;

    eprintln!("floquet-ramsey: static reference");
    let times = linear_times(plan.horizon, plan.static_points);
    let prop = Propagator::new(&q, 0.0)?;
    let static_series = run_ensemble_with(
        &prop,
        &model,
        Protocol::Ramsey,
        &times,
        &EnsembleOptions::new(plan.n_traj),
    )?;
    let f_static = best_effort_fit(&static_series, window, FitModel::Oscillating)?;
    art.write_csv("static.csv", &SERIES_HEADER[..5], &series_rows(&static_series, None))?;

    let n_periods = (plan.horizon / drive.period()).ceil() as usize;
    let mut run = |jitter: f64, name: &str| -> CliResult<FitResult> {
        eprintln!("floquet-ramsey: driven, jitter {jitter}");
        let r = simulate_floquet_ramsey(
            &sys,
            &sol,
            &model,
            &FloquetRamseyConfig {
                n_periods,
                record_every: plan.record_every,
                n_traj: plan.n_traj,
                amp_jitter: jitter,
                first_trajectory: 0,
            },
        )?;
        let mut rows = series_rows(&r.series, None);
        for (row, p) in rows.iter_mut().zip(&r.population) {
            row.push(num(p[0]));
            row.push(num(p[1]));
        }
        art.write_csv(
            name,
            &["time_ns", "re", "im", "stderr_re", "stderr_im", "pop_w0", "pop_w1"],
            &rows,
        )?;
        Ok(best_effort_fit(&r.series, window, FitModel::Oscillating)?)
    };
    let f_floquet = run(0.0, "floquet.csv")?;
    let f_jitter = if plan.amp_jitter > 0.0 {
        Some(run(plan.amp_jitter, "jitter.csv")?)
    } else {
        None
    };
    let improvement = f_static.gamma2 / f_floquet.gamma2;
    let with_jitter = f_jitter.map(|f| f_static.gamma2 / f.gamma2);
    let mut fits = vec![f_static, f_floquet];
    fits.extend(f_jitter);
    art.write_json(
        "protection.json",
        &Protection {
            drive,
            certified_spot: certified,
            horizon_ns: plan.horizon,
            n_traj: plan.n_traj,
            gamma2_static_per_ns: f_static.gamma2,
            gamma2_floquet_per_ns: f_floquet.gamma2,
            gamma2_jitter_per_ns: f_jitter.map(|f| f.gamma2),
            amp_jitter: plan.amp_jitter,
            improvement,
            improvement_with_jitter: with_jitter,
            kept_fraction: with_jitter.map(|w| w / improvement),
            fits,
        },
    )
}

#[derive(Serialize)]
struct Check {
    name: String,
    passed: bool,
    detail: String,
}

fn check(name: impl Into<String>, passed: bool, detail: String) -> Check {
    Check {
        name: name.into(),
        passed,
        detail,
    }
}

/// Most fluctuators handed to the Lindblad oracle.
const ORACLE_LIMIT: usize = 6;

/// Largest fluctuator count whose configurations are enumerated.
const ENUMERATION_LIMIT: usize = 20;

/// Sampled 2-, 3- and 4-point functions of each distinct fluctuator against
/// the analytic ones, within four standard errors.
fn correlation_check(tlfs: &[TlfSpec], seed: u64) -> CliResult<Check> {
    const TRACES: u64 = 4000;
    let mut distinct: Vec<TlfSpec> = Vec::new();
    for t in tlfs {
        if !distinct.contains(t) {
            distinct.push(*t);
        }
    }
    let mut worst: f64 = 0.0;
    for (m, tlf) in distinct.iter().enumerate() {
        let s = 0.5 / tlf.kappa();
        let traces = (0..TRACES)
            .map(|i| sample_tlf_trace(tlf, 3.0 * s + 1.0, stream_seed(seed, AUX_STREAM - 1 - m as u64, i)))
            .collect::<Result<Vec<_>, _>>()?;
        for order in 2..=4usize {
            let times: Vec<f64> = (0..order).rev().map(|i| i as f64 * s).collect();
            let samples: Vec<f64> = traces
                .iter()
                .map(|tr| times.iter().map(|&t| tr.value_at(t)).product())
                .collect();
            let n = samples.len() as f64;
            let mean = samples.iter().sum::<f64>() / n;
            let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let exact = analytic_correlation(tlf, order, &times)?;
            worst = worst.max((mean - exact).abs() / (var / n).sqrt().max(f64::MIN_POSITIVE));
        }
    }
    Ok(check(
        "telegraph correlations",
        worst <= 4.0,
        format!(
            "{} fluctuators, orders 2-4, worst {worst:.2} standard errors",
            distinct.len()
        ),
    ))
}

pub fn validate(ctx: &Context, art: &mut Artifacts) -> CliResult<()> {
    let cfg = &ctx.cfg;
    let mut checks = Vec::new();

    let raw = cfg.strong_tlfs_raw()?;
    for (name, t) in &raw {
        let res = t.validate();
        checks.push(check(
            format!("detailed balance: {name}"),
            res.is_ok(),
            match res {
                Ok(()) => format!("κ₊P₋ = κ₋P₊ = {:.6e}", t.kappa_plus * t.p_minus),
                Err(e) => e.to_string(),
            },
        ));
    }
    let tlfs: Vec<TlfSpec> = raw
        .iter()
        .filter(|(_, t)| t.validate().is_ok())
        .map(|(_, t)| *t)
        .collect();

    let q = Fluxonium::new(cfg.qubit_spec()?)?;
    let e_l = q.spec().e_l;
    let d1 = q.dispersion_derivatives(0.0)?.d1;
    checks.push(check(
        "sweet spot slope",
        d1.abs() <= 1e-9 * e_l,
        format!("|D1(0)|/E_L = {:.2e}", d1.abs() / e_l),
    ));

    if !tlfs.is_empty() {
        checks.push(correlation_check(&tlfs, cfg.seed())?);

        // Rotating frame, so the comparison is not dominated by the bare phase.
        let slope = q.dispersion_derivatives(0.01)?.d1;
        // The density-matrix oracle grows as 2^N_T; compare on the first few.
        let mut oracle_set: Vec<TlfSpec> = Vec::new();
        for t in &tlfs {
            if oracle_set.len() < ORACLE_LIMIT && !oracle_set.contains(t) {
                oracle_set.push(*t);
            }
        }
        let spec = BeatingSpec::from_slope(0.0, slope, &oracle_set, cfg.shift_convention());
        let k_min = oracle_set.iter().map(|t| t.kappa()).fold(f64::INFINITY, f64::min);
        let times = linear_times(3.0 / k_min, 11);
        let oracle = lindblad_oracle(&spec, &times)?;
        let exact: Vec<_> = times.iter().map(|&t| exact_qubit_coherence(&spec, t)).collect();
        let err = exact
            .iter()
            .zip(&oracle)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        let rows: Vec<Vec<String>> = (0..times.len())
            .map(|i| {
                vec![
                    num(times[i]),
                    num(exact[i].re),
                    num(exact[i].im),
                    num(oracle[i].re),
                    num(oracle[i].im),
                ]
            })
            .collect();
        art.write_csv(
            "exact_vs_lindblad.csv",
            &["time_ns", "exact_re", "exact_im", "oracle_re", "oracle_im"],
            &rows,
        )?;
        checks.push(check(
            "exact coherence vs Lindblad",
            err <= 1e-8,
            format!("{} distinct fluctuators, max |Δρ_eg| = {err:.2e}", oracle_set.len()),
        ));
        let closed = saturation_rate_closed(&tlfs);
        if tlfs.len() <= ENUMERATION_LIMIT {
            let e = saturation_rate(&tlfs);
            checks.push(check(
                "saturation rate closed form",
                (e - closed).abs() <= 1e-10 * e.abs(),
                format!("enumerated {e:.6e}, closed {closed:.6e} /ns"),
            ));
        } else {
            checks.push(check(
                "saturation rate closed form",
                closed.is_finite() && closed > 0.0,
                format!(
                    "N_T = {} > {ENUMERATION_LIMIT}, closed form only: {closed:.6e} /ns",
                    tlfs.len()
                ),
            ));
        }
    }

    let sys = FloquetSystem::new(&q, 0.0)?;
    let (alpha, harmonic) = cfg.drive_shape()?;
    let delta = sys.energies[1] - sys.energies[0];
    let drive = DriveSpec::new(0.02, 0.73 * delta, alpha, harmonic)?;
    let table = sys
        .solve(0.0, &drive, cfg.floquet_options().samples)?
        .fourier_table(8)?;
    let parity = (table.get(1, 1, 0) - table.get(0, 0, 0)).norm() / e_l;
    checks.push(check(
        "Floquet parity",
        parity <= 1e-8,
        format!("|x₁₁,₀ − x₀₀,₀|/E_L = {parity:.2e}"),
    ));

    for c in &checks {
        eprintln!("{} {}: {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail);
    }
    let failed: Vec<String> = checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect();
    #[derive(Serialize)]
    struct Validation {
        checks: Vec<Check>,
    }
    art.write_json("validate.json", &Validation { checks })?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Property(format!("failed checks: {}", failed.join("; "))))
    }
}

pub fn spectrum(ctx: &Context, art: &mut Artifacts) -> CliResult<()> {
    let q = Fluxonium::new(ctx.cfg.qubit_spec()?)?;
    let rows = ctx
        .cfg
        .spectrum_lambdas()?
        .into_iter()
        .map(|l| {
            let d = q.dispersion_derivatives(l)?;
            Ok(vec![num(l), num(to_ghz(q.omega_ge(l)?)), num(d.d1), num(d.d2)])
        })
        .collect::<CliResult<Vec<_>>>()?;
    art.write_csv("spectrum.csv", &["lambda_rad", "omega_ge_GHz", "D1", "D2"], &rows)
}

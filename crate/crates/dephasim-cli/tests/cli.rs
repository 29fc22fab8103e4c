use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dephasim::exact_tlf::saturation_rate;
use dephasim::noise::TlfSpec;
use dephasim::units::{khz, turns};
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_dephasim");

const NOISE: &str = r#"
[noise.bath]
rms = "2e-5 turns"
count = 20
kappa_min = "1 kHz"
kappa_max = "1 MHz"
seed = 4
"#;

const SWEEP: &str = r#"
[sweep]
lambda = ["-2e-3 rad", "0 rad", "2e-3 rad"]
horizon = "10 us"
n_times = 41
n_traj = 200
"#;

fn run(dir: &Path, config: &str, args: &[&str]) -> Output {
    let path = dir.join("config.toml");
    fs::write(&path, config).unwrap();
    Command::new(BIN)
        .args(args)
        .arg("--config")
        .arg(&path)
        .env_remove("DEPHASIM_THREADS")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn config_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();

    let o = run(
        dir.path(),
        "master_seed = 1\n[qubit]\ne_q = \"1 GHz\"\n",
        &["spectrum", "--out", out],
    );
    assert_eq!(code(&o), 2);
    assert!(
        stderr(&o).contains("e_q") && stderr(&o).contains("line 3"),
        "{}",
        stderr(&o)
    );

    let o = run(dir.path(), "[qubit]\ne_c = \"0.4 GHzz\"\n", &["spectrum", "--out", out]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("GHzz"));

    let o = run(dir.path(), "[sweep]\nlambda = []\n", &["ramsey-sweep", "--out", out]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));

    let o = run(dir.path(), "", &["floquet-ramsey", "--out", out]);
    assert_eq!(code(&o), 2);

    let o = Command::new(BIN).arg("spectrum").output().unwrap();
    assert_eq!(code(&o), 2);
    let o = Command::new(BIN).arg("no-such-command").output().unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn validate_names_the_unbalanced_fluctuator() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let good = r#"
[[noise.tlf]]
name = "strong"
amplitude = "9e-5 turns"
p_minus = 0.7
kappa = "1 MHz"
"#;
    let o = run(dir.path(), good, &["validate", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let bad = format!(
        "{good}\n[[noise.tlf]]\nname = \"tilted\"\namplitude = \"9e-5 turns\"\np_minus = 0.7\nkappa_plus = \"1 MHz\"\nkappa_minus = \"1 MHz\"\n"
    );
    let o = run(dir.path(), &bad, &["validate", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("tilted"), "{}", stderr(&o));
    let report = fs::read_to_string(out.join("validate.json")).unwrap();
    assert!(report.contains("tilted") && report.contains("\"passed\": false"));
    assert!(out.join("manifest.json").exists());
}

#[test]
fn manifests_depend_on_seed_but_not_threads() {
    let dir = TempDir::new().unwrap();
    let config = format!("master_seed = 5\n{NOISE}{SWEEP}");
    let manifest = |name: &str, extra: &[&str]| {
        let out = dir.path().join(name);
        let mut args = vec!["ramsey-sweep", "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        let o = run(dir.path(), &config, &args);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        fs::read_to_string(out.join("manifest.json")).unwrap()
    };
    let a = manifest("a", &["--threads", "1"]);
    let b = manifest("b", &["--threads", "2"]);
    assert_eq!(a, b);
    let c = manifest("c", &["--seed", "6"]);
    assert_ne!(a, c);
    assert!(c.contains("\"master_seed\": 6"));
}

#[test]
fn small_ramsey_sweep_is_symmetric() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let o = run(
        dir.path(),
        &format!("master_seed = 9\n{NOISE}{SWEEP}"),
        &["ramsey-sweep", "--out", out.to_str().unwrap()],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let read = |j: usize| -> Vec<Vec<f64>> {
        let mut r = csv::Reader::from_path(out.join(format!("series/point_{j:03}.csv"))).unwrap();
        r.records()
            .map(|rec| rec.unwrap().iter().map(|x| x.parse().unwrap()).collect())
            .collect()
    };
    let (minus, zero, plus) = (read(0), read(1), read(2));
    for ((m, p), z) in minus.iter().zip(&plus).zip(&zero) {
        let mag = |r: &[f64]| r[1].hypot(r[2]);
        let se = |r: &[f64]| r[3].hypot(r[4]);
        assert!(
            (mag(m) - mag(p)).abs() <= 4.0 * se(m).hypot(se(p)) + 1e-12,
            "t = {}",
            m[0]
        );
        // Predictions are exactly mirror images.
        assert!((m[5].hypot(m[6]) - p[5].hypot(p[6])).abs() < 1e-12);
        // The sweet spot decays least.
        assert!(mag(z) + 4.0 * se(z) >= mag(m).max(mag(p)));
    }

    let mut r = csv::Reader::from_path(out.join("sweep.csv")).unwrap();
    let header: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(&header[..3], ["lambda_rad", "gamma2_per_ns", "omega_GHz"]);
    assert_eq!(r.records().count(), 3);
}

#[test]
fn search_without_a_spot_exits_with_one() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let config = r#"
[floquet]
a_min = "0.001 rad"
a_max = "0.003 rad"
n_a = 2
n_omega = 2
"#;
    let o = run(dir.path(), config, &["floquet-search", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    let heat = fs::read_to_string(out.join("heatmap.csv")).unwrap();
    assert!(heat.starts_with("A_rad,omega_d_rad_per_ns,abs_DF2,abs_dEdA,product"));
    assert_eq!(heat.lines().count(), 5);
    assert!(fs::read_to_string(out.join("sweet_spot.json"))
        .unwrap()
        .contains("\"certified\": false"));
}

#[test]
fn validate_passes_on_defaults_and_many_fluctuators() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let o = run(dir.path(), "", &["validate", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    // Too many fluctuators to enumerate configurations.
    let many = r#"
[[noise.tlf]]
amplitude = "9e-5 turns"
p_minus = 0.3
kappa = "1 MHz"
copies = 25
"#;
    let o = run(dir.path(), many, &["validate", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("closed form only"), "{}", stderr(&o));
}

#[test]
fn echo_sweep_reports_the_saturation_rate() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let config = r#"
master_seed = 2

[[noise.tlf]]
amplitude = "9e-5 turns"
p_minus = 0.5
kappa = "10 kHz"

[sweep]
lambda = ["0.01 rad"]
horizon = "20 us"
n_times = 41
n_traj = 100
"#;
    let o = run(dir.path(), config, &["echo-sweep", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut r = csv::Reader::from_path(out.join("sweep.csv")).unwrap();
    let header: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
    let col = header.iter().position(|h| h == "saturation_rate_per_ns").unwrap();
    let row = r.records().next().unwrap().unwrap();
    let tlf = TlfSpec::new(turns(9e-5), 0.5, khz(10.0)).unwrap();
    let kappa: f64 = row[col].parse().unwrap();
    assert_eq!(kappa, saturation_rate(&[tlf]));
}

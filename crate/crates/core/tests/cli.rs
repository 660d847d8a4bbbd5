use std::path::Path;
use std::process::{Command, Output};

use chirpcal::chirp::{generate_chirp, ChirpParams};
use chirpcal::config::ScenarioConfig;
use chirpcal::formats::{save_signal_csv, Manifest};

const SHORT_SWEEP: &str = r#"
[sweep]
t_min = 25.0
t_max = 26.0
step = 0.2
pulses_per_dwell = 2
"#;

fn chirpcal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chirpcal"))
        .args(args)
        .env_remove("CHIRPCAL_OUT_DIR")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn short_config(dir: &Path) -> String {
    let path = dir.join("short.toml");
    std::fs::write(&path, SHORT_SWEEP).unwrap();
    path.to_str().unwrap().to_string()
}

fn simulate(dir: &Path, config: &str) -> Output {
    let o = chirpcal(&["--config", config, "--out-dir", dir.to_str().unwrap(), "simulate"]);
    assert!(o.status.success(), "{}", stderr(&o));
    o
}

#[test]
fn short_sweep_simulates_and_passes_gate() {
    let tmp = tempfile::tempdir().unwrap();
    let config = short_config(tmp.path());
    let sim = tmp.path().join("sim");
    simulate(&sim, &config);

    let manifest: Manifest = serde_json::from_slice(&std::fs::read(sim.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.temperatures.len(), 6);
    assert_eq!(manifest.capture_sets.len(), 18);
    assert!(manifest.capture_sets.iter().all(|c| c.pulses == 2));
    assert_eq!(manifest.samples_per_pulse, 350);

    let cal = tmp.path().join("cal");
    let o = chirpcal(&[
        "--config",
        &config,
        "--out-dir",
        cal.to_str().unwrap(),
        "calibrate",
        "--manifest",
        sim.to_str().unwrap(),
        "--gate",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("Comp"));
    for f in ["calibration.csv", "calibration.json", "residuals.csv"] {
        assert!(cal.join(f).is_file(), "{f} missing");
    }
}

#[test]
fn impossible_gate_exits_with_gate_status() {
    let tmp = tempfile::tempdir().unwrap();
    let config = short_config(tmp.path());
    simulate(tmp.path(), &config);
    let o = chirpcal(&[
        "--config",
        &config,
        "--out-dir",
        tmp.path().to_str().unwrap(),
        "calibrate",
        "--manifest",
        tmp.path().join("manifest.json").to_str().unwrap(),
        "--gate",
        "--gate-gain-db",
        "0",
        "--gate-phase-deg",
        "0",
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn config_hash_follows_the_scenario() {
    let tmp = tempfile::tempdir().unwrap();
    let config = short_config(tmp.path());
    let hash = |o: &Output| {
        stdout(o)
            .lines()
            .find_map(|l| l.strip_prefix("config hash ").map(str::to_string))
            .unwrap()
    };
    let a = hash(&simulate(&tmp.path().join("a"), &config));
    let b = hash(&simulate(&tmp.path().join("b"), &config));
    assert_eq!(a, b);
    assert_eq!(a.len(), 64);

    let o = chirpcal(&[
        "--config",
        &config,
        "--seed",
        "7",
        "--out-dir",
        tmp.path().join("c").to_str().unwrap(),
        "simulate",
    ]);
    assert!(o.status.success());
    assert_ne!(hash(&o), a);
}

#[test]
fn missing_reference_path_names_the_temperature() {
    let tmp = tempfile::tempdir().unwrap();
    let config = short_config(tmp.path());
    simulate(tmp.path(), &config);
    let path = tmp.path().join("manifest.json");
    let mut manifest: Manifest = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    manifest
        .capture_sets
        .retain(|c| !(c.path.to_string() == "P3" && (c.temperature - 25.2).abs() < 1e-6));
    std::fs::write(&path, serde_json::to_vec_pretty(&manifest).unwrap()).unwrap();

    let o = chirpcal(&[
        "--config",
        &config,
        "--out-dir",
        tmp.path().join("cal").to_str().unwrap(),
        "calibrate",
        "--manifest",
        path.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("P3 missing at 25.200"), "{}", stderr(&o));
}

#[test]
fn bench_with_one_seed_and_one_algorithm() {
    let tmp = tempfile::tempdir().unwrap();
    let o = chirpcal(&[
        "--out-dir",
        tmp.path().to_str().unwrap(),
        "bench",
        "--seeds",
        "1",
        "--algorithms",
        "adam",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(tmp.path().join("bench_report.json")).unwrap()).unwrap();
    assert_eq!(report["stats"].as_array().unwrap().len(), 1);
    assert_eq!(report["curves"].as_array().unwrap().len(), 1);
    assert_eq!(report["stats"][0]["algorithm"], "adam");
    assert!(tmp.path().join("bench_curves.csv").is_file());
}

#[test]
fn unknown_algorithm_is_a_usage_error() {
    let o = chirpcal(&["bench", "--algorithms", "sgd"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sgd"));
}

#[test]
fn fit_recovers_a_stored_chirp() {
    let tmp = tempfile::tempdir().unwrap();
    let signal = tmp.path().join("pulse.csv");
    let params = ChirpParams::default().with_amplitude_phase(0.8, 0.6);
    save_signal_csv(&signal, &generate_chirp(&params).unwrap()).unwrap();

    let o = chirpcal(&[
        "--out-dir",
        tmp.path().to_str().unwrap(),
        "fit",
        "--signal",
        signal.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let fit: serde_json::Value = serde_json::from_slice(&std::fs::read(tmp.path().join("fit.json")).unwrap()).unwrap();
    assert!((fit["amplitude"].as_f64().unwrap() - 0.8).abs() < 1e-6);
    assert!((fit["phase"].as_f64().unwrap() - 0.6).abs() < 1e-6);
    assert_eq!(fit["delay"].as_f64().unwrap(), 0.0);
    assert!(tmp.path().join("history.csv").is_file());
}

#[test]
fn fit_rejects_an_empty_signal() {
    let tmp = tempfile::tempdir().unwrap();
    let signal = tmp.path().join("empty.csv");
    std::fs::write(&signal, "").unwrap();
    let o = chirpcal(&[
        "--out-dir",
        tmp.path().to_str().unwrap(),
        "fit",
        "--signal",
        signal.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("empty.csv"), "{}", stderr(&o));
}

#[test]
fn printed_default_config_parses_back() {
    let o = chirpcal(&["--print-default-config"]);
    assert!(o.status.success());
    let cfg = ScenarioConfig::from_toml_str(&stdout(&o)).unwrap();
    assert_eq!(
        cfg.config_hash().unwrap(),
        ScenarioConfig::default().config_hash().unwrap()
    );
}

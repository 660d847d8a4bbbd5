//! The `chirpcal` command line.
//!
//! ```text
//! chirpcal [--config FILE] [--seed N] [--out-dir DIR] [--format csv|json|bin]
//!          [--paper-literal-phase] [--bias-correction standard|paper]
//!          <simulate | calibrate | bench | fit>
//! ```
//!
//! Exit status: 0 on success, 1 on errors, 2 on usage errors, 3 when
//! `calibrate --gate` finds a compensated residual above its threshold.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::benchmark::{compare_learning_speed, summarize_residuals, BenchmarkReport, ResidualSummary};
use crate::calibration::{measure_signal, run_calibration, CalibrationRecord};
use crate::chirp::PhaseConvention;
use crate::config::{DataFormat, ScenarioConfig};
use crate::formats::{self, MANIFEST_FILE};
use crate::netsim::thermal_sweep;
use crate::optimizer::{Algorithm, BiasCorrection};
use crate::{Error, Result};

pub const EXIT_ERROR: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_GATE: u8 = 3;

/// Fallback output directory when neither the flag, the environment nor the
/// config names one.
pub const DEFAULT_OUT_DIR: &str = "chirpcal-out";

#[derive(Debug, Parser)]
#[command(name = "chirpcal", version, about = "Chirp-based internal calibration simulator")]
pub struct Cli {
    /// Scenario file (TOML). Defaults to the built-in scenario.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[arg(long, global = true, env = "CHIRPCAL_OUT_DIR")]
    pub out_dir: Option<PathBuf>,

    /// Capture data format written by `simulate`.
    #[arg(long, global = true, value_enum)]
    pub format: Option<FormatArg>,

    /// Use π·f·t instead of 2π·f·t for the chirp's linear phase term.
    #[arg(long, global = true)]
    pub paper_literal_phase: bool,

    #[arg(long, global = true, value_enum)]
    pub bias_correction: Option<BiasArg>,

    /// Print the default scenario file and exit.
    #[arg(long)]
    pub print_default_config: bool,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Csv,
    Json,
    Bin,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BiasArg {
    Standard,
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AlgorithmArg {
    Adam,
    Momentum,
}

impl From<AlgorithmArg> for Algorithm {
    fn from(a: AlgorithmArg) -> Self {
        match a {
            AlgorithmArg::Adam => Algorithm::Adam,
            AlgorithmArg::Momentum => Algorithm::MomentumGd,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the thermal sweep and write captures plus a manifest.
    Simulate,
    /// Calibrate from a capture manifest and print the residual summary.
    Calibrate {
        #[arg(long)]
        manifest: PathBuf,
        /// Exit with status 3 unless the compensated maxima meet the
        /// thresholds.
        #[arg(long)]
        gate: bool,
        #[arg(long)]
        gate_gain_db: Option<f64>,
        #[arg(long)]
        gate_phase_deg: Option<f64>,
    },
    /// Compare Adam and momentum gradient descent over noise seeds.
    Bench {
        #[arg(long, value_enum, value_delimiter = ',')]
        algorithms: Option<Vec<AlgorithmArg>>,
        /// Number of seeds, counting up from the scenario seed.
        #[arg(long)]
        seeds: Option<u64>,
        /// Keep every n-th epoch in the curves CSV.
        #[arg(long, default_value_t = 10)]
        curve_stride: usize,
        /// Calibration records (JSON from `calibrate`) to add a residual
        /// table to the report.
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Fit one pulse from a signal CSV.
    Fit {
        #[arg(long)]
        signal: PathBuf,
    },
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = if e.use_stderr() {
                write!(err, "{e}")
            } else {
                write!(out, "{e}")
            };
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_ERROR
        }
    }
}

fn load_config(cli: &Cli, fallback: Option<ScenarioConfig>) -> Result<ScenarioConfig> {
    let mut cfg = match (&cli.config, fallback) {
        (Some(p), _) => ScenarioConfig::load(p)?,
        (None, Some(c)) => c,
        (None, None) => ScenarioConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(f) = cli.format {
        cfg.output.format = match f {
            FormatArg::Csv => DataFormat::Csv,
            FormatArg::Json => DataFormat::Json,
            FormatArg::Bin => DataFormat::Bin,
        };
    }
    if cli.paper_literal_phase {
        cfg.chirp.convention = PhaseConvention::PaperLiteral;
    }
    if let Some(b) = cli.bias_correction {
        cfg.optimizer.bias_correction = match b {
            BiasArg::Standard => BiasCorrection::Standard,
            BiasArg::Paper => BiasCorrection::PaperLiteral,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: &ScenarioConfig) -> PathBuf {
    cli.out_dir
        .clone()
        .or_else(|| cfg.output.directory.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

fn execute(cli: &Cli, out: &mut dyn Write) -> Result<u8> {
    if cli.print_default_config {
        writeln!(out, "# chirpcal scenario: built-in defaults")?;
        write!(out, "{}", ScenarioConfig::default().to_toml_string()?)?;
        return Ok(0);
    }
    let Some(command) = &cli.command else {
        writeln!(out, "no command given; see --help")?;
        return Ok(EXIT_USAGE);
    };
    match command {
        Command::Simulate => cmd_simulate(cli, out),
        Command::Calibrate {
            manifest,
            gate,
            gate_gain_db,
            gate_phase_deg,
        } => cmd_calibrate(cli, out, manifest, *gate, *gate_gain_db, *gate_phase_deg),
        Command::Bench {
            algorithms,
            seeds,
            curve_stride,
            records,
        } => cmd_bench(cli, out, algorithms.as_deref(), *seeds, *curve_stride, records.as_deref()),
        Command::Fit { signal } => cmd_fit(cli, out, signal),
    }
}

fn cmd_simulate(cli: &Cli, out: &mut dyn Write) -> Result<u8> {
    let cfg = load_config(cli, None)?;
    let dir = out_dir(cli, &cfg);
    let params = cfg.chirp_params()?;
    let sweep = thermal_sweep(&params, &cfg.network_model()?)?;
    let manifest = formats::write_capture_set(&dir, &sweep, &cfg, cfg.output.format)?;
    writeln!(
        out,
        "simulated {} temperatures x 3 paths ({} capture sets, {} pulses each) into {}",
        manifest.temperatures.len(),
        manifest.capture_sets.len(),
        cfg.sweep.pulses_per_dwell,
        dir.display()
    )?;
    writeln!(out, "config hash {}", manifest.config_hash)?;
    Ok(0)
}

fn print_summary(out: &mut dyn Write, s: &ResidualSummary) -> Result<()> {
    use crate::netsim::Element;
    writeln!(out, "Max differences between measured and reference values")?;
    writeln!(
        out,
        "{:<8} {:>14} {:>16} {:>14} {:>16}",
        "", "HPA gain [dB]", "HPA phase [deg]", "LNA gain [dB]", "LNA phase [deg]"
    )?;
    let cell = |e: Element, f: fn(&crate::benchmark::ResidualRow) -> f64| {
        s.row(e).map_or("-".to_string(), |r| format!("{:.4}", f(r)))
    };
    writeln!(
        out,
        "{:<8} {:>14} {:>16} {:>14} {:>16}",
        "Uncomp",
        cell(Element::Hpa, |r| r.uncomp_gain_db),
        cell(Element::Hpa, |r| r.uncomp_phase_deg),
        cell(Element::Lna, |r| r.uncomp_gain_db),
        cell(Element::Lna, |r| r.uncomp_phase_deg)
    )?;
    writeln!(
        out,
        "{:<8} {:>14} {:>16} {:>14} {:>16}",
        "Comp",
        cell(Element::Hpa, |r| r.comp_gain_db),
        cell(Element::Hpa, |r| r.comp_phase_deg),
        cell(Element::Lna, |r| r.comp_gain_db),
        cell(Element::Lna, |r| r.comp_phase_deg)
    )?;
    Ok(())
}

fn cmd_calibrate(
    cli: &Cli,
    out: &mut dyn Write,
    manifest_path: &Path,
    gate: bool,
    gate_gain_db: Option<f64>,
    gate_phase_deg: Option<f64>,
) -> Result<u8> {
    let manifest_path = if manifest_path.is_dir() {
        manifest_path.join(MANIFEST_FILE)
    } else {
        manifest_path.to_path_buf()
    };
    let (manifest, sweep) = formats::load_capture_set(&manifest_path)?;
    let cfg = load_config(cli, Some(manifest.config.clone()))?;
    let dir = out_dir(cli, &cfg);
    let mut settings = cfg.calibration_settings()?;
    settings.expected_temperatures = manifest.temperatures.clone();
    let run = run_calibration(&sweep, &cfg.chirp_params()?, &settings)?;
    let summary = summarize_residuals(&run.records)?;

    let mut w = std::io::BufWriter::new(std::fs::File::create(create_dir(&dir)?.join("calibration.csv"))?);
    formats::write_calibration_csv(&mut w, &run.records)?;
    formats::write_json(&dir.join("calibration.json"), &run.records)?;
    formats::write_json(&dir.join("path_measurements.json"), &run.measurements)?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join("residuals.csv"))?);
    formats::write_residual_csv(&mut w, &summary)?;
    formats::write_json(&dir.join("residuals.json"), &summary)?;

    print_summary(out, &summary)?;
    if gate {
        let g = gate_gain_db.unwrap_or(cfg.calibration.gate_gain_db);
        let p = gate_phase_deg.unwrap_or(cfg.calibration.gate_phase_deg);
        let pass = summary.passes(g, p);
        writeln!(
            out,
            "gate ({g} dB, {p} deg): {}",
            if pass { "PASS" } else { "FAIL" }
        )?;
        if !pass {
            return Ok(EXIT_GATE);
        }
    }
    Ok(0)
}

fn create_dir(dir: &Path) -> Result<&Path> {
    std::fs::create_dir_all(dir).map_err(|e| Error::from(e).context(dir.display().to_string()))?;
    Ok(dir)
}

fn cmd_bench(
    cli: &Cli,
    out: &mut dyn Write,
    algorithms: Option<&[AlgorithmArg]>,
    seeds: Option<u64>,
    curve_stride: usize,
    records: Option<&Path>,
) -> Result<u8> {
    let mut cfg = load_config(cli, None)?;
    if let Some(n) = seeds {
        if n == 0 {
            return Err(Error::Benchmark("--seeds must be at least 1".into()));
        }
        cfg.bench.seeds = n;
    }
    let algs: Vec<Algorithm> = match algorithms {
        Some(a) => a.iter().map(|&x| x.into()).collect(),
        None => cfg.bench.algorithms.clone(),
    };
    let dir = out_dir(cli, &cfg);
    let mut report: BenchmarkReport =
        compare_learning_speed(&cfg.bench_scenario()?, &cfg.optimizer, &algs, &cfg.bench_seeds())?;
    if let Some(path) = records {
        let recs: Vec<CalibrationRecord> = formats::read_json(path)?;
        report.residuals = Some(summarize_residuals(&recs)?);
    }

    let mut w = std::io::BufWriter::new(std::fs::File::create(create_dir(&dir)?.join("bench_curves.csv"))?);
    formats::write_curves_csv(&mut w, &report.curves, curve_stride)?;
    if let Some(s) = &report.residuals {
        let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join("bench_residuals.csv"))?);
        formats::write_residual_csv(&mut w, s)?;
    }
    // the curves live in the CSV; keep the JSON report compact
    let mut compact = report.clone();
    compact.curves.iter_mut().for_each(|c| c.error_history.clear());
    formats::write_json(&dir.join("bench_report.json"), &compact)?;

    writeln!(out, "scenario {} over {} seeds", report.scenario_id, report.seeds.len())?;
    for s in &report.stats {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x}"));
        writeln!(
            out,
            "{:<9} converged {}/{} (diverged {})  epochs min {} median {} max {}",
            s.algorithm.name(),
            s.converged_runs,
            s.runs,
            s.diverged_runs,
            fmt(s.min_epoch.map(|x| x as f64)),
            fmt(s.median_epoch),
            fmt(s.max_epoch.map(|x| x as f64)),
        )?;
    }
    if let Some(faster) = report.adam_faster() {
        writeln!(
            out,
            "adam median converged epoch < momentum median converged epoch: {}",
            if faster { "yes" } else { "no" }
        )?;
    }
    if let Some(s) = &report.residuals {
        print_summary(out, s)?;
    }
    Ok(0)
}

fn cmd_fit(cli: &Cli, out: &mut dyn Write, signal: &Path) -> Result<u8> {
    let cfg = load_config(cli, None)?;
    let dir = out_dir(cli, &cfg);
    let sig = formats::load_signal_csv(signal)?;
    let params = cfg.chirp_params()?;
    let m = measure_signal(&sig, &params, &cfg.optimizer)?;
    let fit = &m.fit;
    writeln!(
        out,
        "A = {:.6}  omega = {:.4} deg  E = {:.3e}  epochs = {}  converged at {}  delay = {:.4} ns",
        fit.amplitude,
        fit.phase.to_degrees(),
        fit.final_cost,
        fit.epochs_run,
        fit.converged_epoch.map_or("-".to_string(), |e| e.to_string()),
        m.delay * 1e9
    )?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(create_dir(&dir)?.join("history.csv"))?);
    formats::write_history_csv(&mut w, &fit.error_history)?;
    formats::write_json(
        &dir.join("fit.json"),
        &serde_json::json!({
            "amplitude": fit.amplitude,
            "phase": fit.phase,
            "final_cost": fit.final_cost,
            "error_history": fit.error_history,
            "epochs_run": fit.epochs_run,
            "converged_epoch": fit.converged_epoch,
            "algorithm": fit.algorithm,
            "delay": m.delay,
        }),
    )?;
    Ok(0)
}

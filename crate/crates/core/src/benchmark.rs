//! Learning-speed comparison between the optimizers and residual summaries
//! of a calibration run.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationRecord;
use crate::chirp::{add_awgn, generate_chirp, ChirpParams};
use crate::netsim::Element;
use crate::optimizer::{fit_model, Algorithm, ChirpModel, FitParams, OptimizerConfig};
use crate::{Error, Result};

/// One fitting problem, repeated over noise seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchScenario {
    pub id: String,
    pub generator: ChirpParams,
    pub true_amplitude: f64,
    /// Radians.
    pub true_phase: f64,
    /// `None` for noiseless runs (every seed then sees the same data).
    pub snr_db: Option<f64>,
    pub init: FitParams,
}

impl BenchScenario {
    /// The standard noisy fit: A* = 0.8, ω* = 0.6 rad at 30 dB SNR, started
    /// from A = 1, ω = 0 with the default generator.
    pub fn standard() -> Self {
        BenchScenario {
            id: "standard".into(),
            generator: ChirpParams::default(),
            true_amplitude: 0.8,
            true_phase: 0.6,
            snr_db: Some(30.0),
            init: FitParams::initial(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunCurve {
    pub algorithm: Algorithm,
    pub seed: u64,
    /// `None` when the run diverged.
    pub converged_epoch: Option<usize>,
    pub diverged: bool,
    pub amplitude: f64,
    pub phase: f64,
    pub error_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmStats {
    pub algorithm: Algorithm,
    pub runs: usize,
    pub converged_runs: usize,
    pub non_converged_runs: usize,
    pub diverged_runs: usize,
    /// Over converged runs only.
    pub min_epoch: Option<usize>,
    pub median_epoch: Option<f64>,
    pub max_epoch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub scenario_id: String,
    pub seeds: Vec<u64>,
    pub stats: Vec<AlgorithmStats>,
    pub curves: Vec<RunCurve>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residuals: Option<ResidualSummary>,
}

impl BenchmarkReport {
    pub fn stats_for(&self, algorithm: Algorithm) -> Option<&AlgorithmStats> {
        self.stats.iter().find(|s| s.algorithm == algorithm)
    }

    /// Whether Adam's median converged epoch is below momentum's, when both
    /// were run and converged at least once.
    pub fn adam_faster(&self) -> Option<bool> {
        let a = self.stats_for(Algorithm::Adam)?.median_epoch?;
        let m = self.stats_for(Algorithm::MomentumGd)?.median_epoch?;
        Some(a < m)
    }
}

fn median(sorted: &[usize]) -> Option<f64> {
    let n = sorted.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(sorted[n / 2] as f64),
        _ => Some(0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) as f64),
    }
}

/// Fits the scenario once per (algorithm, seed), each algorithm from the
/// same start and with the same stepsize, and reports converged-epoch
/// statistics.
pub fn compare_learning_speed(
    scenario: &BenchScenario,
    base: &OptimizerConfig,
    algorithms: &[Algorithm],
    seeds: &[u64],
) -> Result<BenchmarkReport> {
    if seeds.is_empty() {
        return Err(Error::Benchmark("at least one seed is required".into()));
    }
    if algorithms.is_empty() {
        return Err(Error::Benchmark("at least one algorithm is required".into()));
    }
    base.validate()?;
    let model = ChirpModel::from_params(&scenario.generator)?;
    let clean = generate_chirp(
        &scenario
            .generator
            .with_amplitude_phase(scenario.true_amplitude, scenario.true_phase),
    )?;

    let jobs: Vec<(Algorithm, u64)> = algorithms
        .iter()
        .flat_map(|&a| seeds.iter().map(move |&s| (a, s)))
        .collect();
    let curves: Vec<RunCurve> = jobs
        .par_iter()
        .map(|&(algorithm, seed)| {
            let received = match scenario.snr_db {
                Some(snr) => add_awgn(&clean, snr, seed)?,
                None => clean.clone(),
            };
            let cfg = base.with_algorithm(algorithm);
            match fit_model(&model, &received, scenario.init, &cfg) {
                Ok(r) => Ok(RunCurve {
                    algorithm,
                    seed,
                    converged_epoch: r.converged_epoch,
                    diverged: false,
                    amplitude: r.amplitude,
                    phase: r.phase,
                    error_history: r.error_history,
                }),
                Err(Error::Divergence { amplitude, phase, .. }) => Ok(RunCurve {
                    algorithm,
                    seed,
                    converged_epoch: None,
                    diverged: true,
                    amplitude,
                    phase,
                    error_history: Vec::new(),
                }),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;

    let mut stats = Vec::with_capacity(algorithms.len());
    for &algorithm in algorithms {
        let runs: Vec<&RunCurve> = curves.iter().filter(|c| c.algorithm == algorithm).collect();
        let diverged = runs.iter().filter(|c| c.diverged).count();
        if diverged == runs.len() {
            return Err(Error::Benchmark(format!("every {algorithm} run diverged")));
        }
        let mut epochs: Vec<usize> = runs.iter().filter_map(|c| c.converged_epoch).collect();
        epochs.sort_unstable();
        stats.push(AlgorithmStats {
            algorithm,
            runs: runs.len(),
            converged_runs: epochs.len(),
            non_converged_runs: runs.len() - epochs.len() - diverged,
            diverged_runs: diverged,
            min_epoch: epochs.first().copied(),
            median_epoch: median(&epochs),
            max_epoch: epochs.last().copied(),
        });
    }

    Ok(BenchmarkReport {
        scenario_id: scenario.id.clone(),
        seeds: seeds.to_vec(),
        stats,
        curves,
        residuals: None,
    })
}

/// Residual maxima for one element. Gains in dB, phases in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualRow {
    pub element: Element,
    pub uncomp_gain_db: f64,
    pub uncomp_phase_deg: f64,
    pub comp_gain_db: f64,
    pub comp_phase_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSummary {
    pub rows: Vec<ResidualRow>,
}

impl ResidualSummary {
    pub fn row(&self, element: Element) -> Option<&ResidualRow> {
        self.rows.iter().find(|r| r.element == element)
    }

    /// Whether every compensated maximum is within the thresholds.
    pub fn passes(&self, gain_db: f64, phase_deg: f64) -> bool {
        self.rows
            .iter()
            .all(|r| r.comp_gain_db <= gain_db && r.comp_phase_deg <= phase_deg)
    }
}

/// Per element, the maxima over temperature of the uncompensated deviation
/// `|G − Gʳ|`, `|φ − φʳ|` and of the compensated residual (see
/// [`CalibrationRecord::compensated_residual`]).
pub fn summarize_residuals(records: &[CalibrationRecord]) -> Result<ResidualSummary> {
    if records.is_empty() {
        return Err(Error::param("no calibration records to summarize"));
    }
    let mut rows = Vec::new();
    for element in Element::ALL {
        let mut row = ResidualRow {
            element,
            uncomp_gain_db: 0.0,
            uncomp_phase_deg: 0.0,
            comp_gain_db: 0.0,
            comp_phase_deg: 0.0,
        };
        let mut any = false;
        for r in records.iter().filter(|r| r.element == element) {
            any = true;
            let (ug, up) = r.uncompensated_residual();
            let (cg, cp) = r.compensated_residual();
            row.uncomp_gain_db = row.uncomp_gain_db.max(ug);
            row.uncomp_phase_deg = row.uncomp_phase_deg.max(up.to_degrees());
            row.comp_gain_db = row.comp_gain_db.max(cg);
            row.comp_phase_deg = row.comp_phase_deg.max(cp.to_degrees());
        }
        if any {
            rows.push(row);
        }
    }
    Ok(ResidualSummary { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::{derive_factors, AmplifierMeasurement, RecordTruth};
    use proptest::prelude::*;

    #[test]
    fn median_examples() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[4]), Some(4.0));
        assert_eq!(median(&[1, 3]), Some(2.0));
        assert_eq!(median(&[1, 3, 10]), Some(3.0));
    }

    fn at_truth() -> BenchScenario {
        BenchScenario {
            id: "truth".into(),
            true_amplitude: 1.0,
            true_phase: 0.0,
            snr_db: None,
            ..BenchScenario::standard()
        }
    }

    #[test]
    fn init_at_truth_converges_immediately() {
        let r = compare_learning_speed(
            &at_truth(),
            &OptimizerConfig::default(),
            &[Algorithm::Adam, Algorithm::MomentumGd],
            &[1, 2],
        )
        .unwrap();
        for c in &r.curves {
            assert!(c.converged_epoch.unwrap() <= 1);
        }
        assert_eq!(r.stats.len(), 2);
    }

    #[test]
    fn noiseless_report_is_deterministic() {
        let s = BenchScenario {
            snr_db: None,
            ..BenchScenario::standard()
        };
        let cfg = OptimizerConfig {
            max_epochs: 3000,
            ..OptimizerConfig::default()
        };
        let algs = [Algorithm::Adam, Algorithm::MomentumGd];
        let a = compare_learning_speed(&s, &cfg, &algs, &[3, 4, 5]).unwrap();
        let b = compare_learning_speed(&s, &cfg, &algs, &[3, 4, 5]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn report_epochs_match_fit_results() {
        let s = BenchScenario::standard();
        let cfg = OptimizerConfig::default();
        let r = compare_learning_speed(&s, &cfg, &[Algorithm::MomentumGd], &[11]).unwrap();
        let clean = generate_chirp(&s.generator.with_amplitude_phase(0.8, 0.6)).unwrap();
        let received = add_awgn(&clean, 30.0, 11).unwrap();
        let fit = crate::optimizer::fit(&received, &s.generator, s.init, &cfg.with_algorithm(Algorithm::MomentumGd))
            .unwrap();
        assert_eq!(r.curves[0].converged_epoch, fit.converged_epoch);
        assert_eq!(r.stats[0].median_epoch, fit.converged_epoch.map(|e| e as f64));
    }

    #[test]
    fn all_divergent_is_an_error() {
        let cfg = OptimizerConfig {
            step_size: 5.0,
            momentum: 0.99,
            ..OptimizerConfig::default()
        };
        match compare_learning_speed(&BenchScenario::standard(), &cfg, &[Algorithm::MomentumGd], &[1, 2]) {
            Err(Error::Benchmark(msg)) => assert!(msg.contains("momentum")),
            other => panic!("expected benchmark error, got {other:?}"),
        }
    }

    #[test]
    fn empty_inputs_rejected() {
        let cfg = OptimizerConfig::default();
        assert!(compare_learning_speed(&BenchScenario::standard(), &cfg, &[Algorithm::Adam], &[]).is_err());
        assert!(compare_learning_speed(&BenchScenario::standard(), &cfg, &[], &[1]).is_err());
        assert!(summarize_residuals(&[]).is_err());
    }

    fn record(element: Element, t: f64, g: f64, p: f64, truth: Option<(f64, f64)>) -> CalibrationRecord {
        let m = AmplifierMeasurement {
            element,
            temperature: t,
            gain_db: g,
            phase: p,
        };
        let r = AmplifierMeasurement {
            element,
            temperature: 25.0,
            gain_db: 30.0,
            phase: 0.0,
        };
        let mut rec = derive_factors(&m, &r).unwrap();
        rec.truth = truth.map(|(tg, tp)| RecordTruth {
            gain_db: tg,
            phase: tp,
            reference_gain_db: 30.0,
            reference_phase: 0.0,
        });
        rec
    }

    #[test]
    fn residuals_at_reference_are_zero() {
        let recs = vec![
            record(Element::Hpa, 25.0, 30.0, 0.0, None),
            record(Element::Lna, 25.0, 30.0, 0.0, None),
        ];
        let s = summarize_residuals(&recs).unwrap();
        for r in &s.rows {
            assert_eq!((r.uncomp_gain_db, r.uncomp_phase_deg, r.comp_gain_db, r.comp_phase_deg), (0.0, 0.0, 0.0, 0.0));
        }
    }

    #[test]
    fn residual_maxima() {
        let recs = vec![
            record(Element::Hpa, 25.0, 30.0, 0.0, Some((30.0, 0.0))),
            record(Element::Hpa, 27.0, 30.2, 0.1, Some((30.21, 0.1))),
            record(Element::Hpa, 30.0, 30.43, -0.5, Some((30.42, -0.49))),
        ];
        let s = summarize_residuals(&recs).unwrap();
        let h = s.row(Element::Hpa).unwrap();
        assert!((h.uncomp_gain_db - 0.43).abs() < 1e-12);
        assert!((h.uncomp_phase_deg - 0.5f64.to_degrees()).abs() < 1e-9);
        assert!((h.comp_gain_db - 0.01).abs() < 1e-9);
        assert!((h.comp_phase_deg - 0.01f64.to_degrees()).abs() < 1e-9);
        assert!(s.row(Element::Lna).is_none());
        assert!(s.passes(0.06, 2.42));
        assert!(!s.passes(0.005, 2.42));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn residuals_permutation_invariant_and_monotone(
            vals in prop::collection::vec((0usize..2, -1.0f64..1.0, -3.0f64..3.0, -0.05f64..0.05), 2..12),
            rot in 0usize..12,
            extra in (0usize..2, -1.0f64..1.0, -3.0f64..3.0),
        ) {
            let mk = |(e, g, p, err): (usize, f64, f64, f64)| {
                record(Element::ALL[e], 25.0, 30.0 + g, p, Some((30.0 + g + err, p - err)))
            };
            let recs: Vec<_> = vals.iter().copied().map(mk).collect();
            let mut shuffled = recs.clone();
            shuffled.rotate_left(rot % recs.len());
            shuffled.reverse();
            let a = summarize_residuals(&recs).unwrap();
            let b = summarize_residuals(&shuffled).unwrap();
            prop_assert_eq!(&a, &b);

            let mut more = recs.clone();
            more.push(mk((extra.0, extra.1, extra.2, 0.02)));
            let c = summarize_residuals(&more).unwrap();
            for ra in &a.rows {
                let rc = c.row(ra.element).unwrap();
                prop_assert!(rc.uncomp_gain_db >= ra.uncomp_gain_db);
                prop_assert!(rc.uncomp_phase_deg >= ra.uncomp_phase_deg);
                prop_assert!(rc.comp_gain_db >= ra.comp_gain_db);
                prop_assert!(rc.comp_phase_deg >= ra.comp_phase_deg);
            }
        }
    }
}

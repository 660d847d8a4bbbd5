use chirpcal::calibration::{derive_amplifier, measure_path, OffsetTable};
use chirpcal::chirp::ChirpParams;
use chirpcal::netsim::{capture_switching_sequence, default_network, Element, PathId};
use chirpcal::optimizer::OptimizerConfig;
use chirpcal::units::circular_distance;

#[test]
fn switched_pulse_pairs_recover_each_amplifier() {
    let params = ChirpParams::default();
    let mut net = default_network();
    net.snr_db = None;
    let offsets = OffsetTable::from_network(&net);
    let config = OptimizerConfig::default();

    for (path, element) in [(PathId::P1, Element::Hpa), (PathId::P2, Element::Lna)] {
        let capture = capture_switching_sequence(&params, &net, &[(PathId::P3, 1), (path, 1)], 29.0).unwrap();
        assert_eq!(capture.boundaries, vec![1]);
        let p3 = measure_path(&capture.records[0], &params, &config).unwrap();
        let active = measure_path(&capture.records[1], &params, &config).unwrap();
        let amp = derive_amplifier(&active, &p3, &offsets).unwrap();
        assert_eq!(amp.element, element);

        let truth = capture.records[1].amplifier_truth.unwrap();
        assert!((amp.gain_db - truth.gain_db).abs() < 1e-3, "{element}: {} vs {}", amp.gain_db, truth.gain_db);
        assert!(circular_distance(amp.phase, truth.phase) < 1e-3, "{element}: {} vs {}", amp.phase, truth.phase);
    }
}

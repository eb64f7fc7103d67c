use rts_calib::calibrate::{
    dynamic_gcp_calibrate, dynamic_inter_prism_calibrate, static_gcp_calibrate, two_point_calibrate, PriorSearchConfig,
    Validation,
};
use rts_calib::ingest::{parse_calibration_report, write_calibration_report, CalibrationReport};
use rts_calib::metrics::inter_prism_metric;
use rts_calib::preprocess::{run_pipeline, PipelineConfig};
use rts_calib::simulate::{evaluate_against_truth, generate_scene, SceneConfig};

fn pipeline() -> PipelineConfig {
    PipelineConfig::default()
}

#[test]
fn every_method_lands_near_truth_on_a_figure_eight() {
    let cfg = SceneConfig::figure_eight(21);
    let scene = generate_scene(&cfg).unwrap();
    let synced = run_pipeline(&scene.logs, &pipeline()).unwrap();

    let a = two_point_calibrate(&scene.world_gcps, &scene.gcps).unwrap();
    let b = static_gcp_calibrate(&scene.gcps, None, true).unwrap();
    let (d, diag) = dynamic_inter_prism_calibrate(&synced, &scene.delta, &PriorSearchConfig::default()).unwrap();
    assert_eq!(d.validation, Some(Validation::Validated));
    assert!(diag.similar_convergence_count >= 3);

    for (name, r, tol_t) in [("two_point", &a, 0.05), ("static_gcp", &b, 0.02), ("inter_prism", &d, 0.01)] {
        let errs = evaluate_against_truth(r, &scene.truth).unwrap();
        for (t, rot) in errs {
            assert!(t < tol_t, "{name}: {t} m");
            assert!(rot < 1e-3, "{name}: {rot} rad");
        }
    }
}

#[test]
fn shared_prism_scene_supports_dynamic_gcp() {
    let cfg = SceneConfig::figure_eight(22).shared_prism();
    let scene = generate_scene(&cfg).unwrap();
    let synced = run_pipeline(&scene.logs, &pipeline()).unwrap();
    let c = dynamic_gcp_calibrate(&synced, true).unwrap();
    for (t, rot) in evaluate_against_truth(&c, &scene.truth).unwrap() {
        assert!(t < 0.01, "{t}");
        assert!(rot < 1e-3, "{rot}");
    }
}

#[test]
fn full_chain_is_deterministic_and_report_round_trips() {
    let run = || {
        let scene = generate_scene(&SceneConfig { outlier_rate: 0.01, ..SceneConfig::figure_eight(23) }).unwrap();
        let synced = run_pipeline(&scene.logs, &pipeline()).unwrap();
        let (result, diag) = dynamic_inter_prism_calibrate(&synced, &scene.delta, &PriorSearchConfig::default()).unwrap();
        let metric = inter_prism_metric(&synced, &result.t_12, &result.t_13, &scene.delta);
        let report = CalibrationReport { result, metrics: vec![(&metric).into()], diagnostics: Some(diag) };
        let mut buf = Vec::new();
        write_calibration_report(&report, &mut buf).unwrap();
        (report, buf)
    };
    let (report, first) = run();
    let (_, second) = run();
    assert_eq!(first, second);
    assert_eq!(parse_calibration_report(first.as_slice()).unwrap(), report);
}

#[test]
fn dropout_splits_intervals_without_breaking_calibration() {
    use rts_calib::simulate::Dropout;
    let cfg = SceneConfig {
        dropouts: vec![Dropout { station: 2, start: 150.0, end: 160.0 }],
        ..SceneConfig::figure_eight(24)
    };
    let scene = generate_scene(&cfg).unwrap();
    let synced = run_pipeline(&scene.logs, &pipeline()).unwrap();
    assert_eq!(synced.segments.len(), 2);
    assert!(synced.times.iter().all(|t| !(150.5..159.5).contains(t)));
    let (d, _) = dynamic_inter_prism_calibrate(&synced, &scene.delta, &PriorSearchConfig::default()).unwrap();
    for (t, _) in evaluate_against_truth(&d, &scene.truth).unwrap() {
        assert!(t < 0.01, "{t}");
    }
}

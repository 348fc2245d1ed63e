use creekgauge::config::PipelineConfig;
use creekgauge::detectors::Diagnostics;
use creekgauge::edgemap::EdgeKind;
use creekgauge::ensemble::{calibrate, reference_edge_map, run_pipeline, run_pipeline_on_file, FrameContext};
use creekgauge::error::{Edge, Error};
use creekgauge::matcher::{load_template, save_template};
use creekgauge::synth::{render, SceneSpec};
use creekgauge::{CalibrationModel, ColorImage, Status, Template};

const H_R: f64 = 200.0;

fn scene(row: f64) -> SceneSpec {
    SceneSpec { water_row: row, ..SceneSpec::default() }
}

fn calibrated(cfg: &PipelineConfig, spec: &SceneSpec) -> (Template, CalibrationModel) {
    let (img, truth) = render(spec).unwrap();
    calibrate(&img, truth, H_R, 1.0, cfg, &FrameContext::default()).unwrap()
}

#[test]
fn clean_scene_reads_known_height() {
    let cfg = PipelineConfig::default();
    let (tmpl, cal) = calibrated(&cfg, &scene(200.0));
    assert_eq!(tmpl.waterline_row_offset, 60);
    assert_eq!(tmpl.origin_in_reference.y, 140);
    assert_eq!(tmpl.reference_slope, 0.0);

    let (img, truth) = render(&scene(120.0)).unwrap();
    let (rec, diag) = run_pipeline(&img, &tmpl, &cal, &cfg, &FrameContext::default()).unwrap();
    assert_eq!(rec.status, Status::Ok);
    let reading = rec.reading.unwrap();
    let true_height = H_R + (cal.reference_row - truth);
    assert!((reading.height_cm - true_height).abs() <= 1.0, "{reading:?}");
    assert_eq!(reading.height_cm - reading.delta_h_cm, H_R);

    // Both detectors within one pixel of the water row, in frame coordinates.
    let top = diag.matched.unwrap().location.y as f64;
    for est in [diag.regression.unwrap(), diag.ssd.unwrap()] {
        assert!((top + est.row_at_center - 120.0).abs() <= 1.0, "{est:?}");
    }
    assert!(rec.match_score.unwrap() > 0.99);
    assert!(rec.detector_gap_px.unwrap() <= 1.0);
}

#[test]
fn noisy_scenes_with_debris_track_the_line() {
    let cfg = PipelineConfig::default();
    let (tmpl, cal) = calibrated(&cfg, &scene(200.0));
    for (i, row) in [170.0, 186.4, 203.0, 229.6].into_iter().enumerate() {
        let spec = SceneSpec { noise_sigma: 0.03, debris_count: 8, seed: i as u64, ..scene(row) };
        let (img, truth) = render(&spec).unwrap();
        let (rec, _) = run_pipeline(&img, &tmpl, &cal, &cfg, &FrameContext::default()).unwrap();
        assert_eq!(rec.status, Status::Ok, "row {row}");
        assert!((rec.reading.unwrap().pixel_row - truth).abs() <= 1.5, "{rec:?} vs {truth}");
    }
}

#[test]
fn sloped_water_line() {
    let cfg = PipelineConfig::default();
    let reference = SceneSpec { water_slope: 0.08, ..scene(200.0) };
    let (tmpl, cal) = calibrated(&cfg, &reference);
    assert!((tmpl.reference_slope - 0.08).abs() < 0.02, "{}", tmpl.reference_slope);
    let (img, truth) = render(&SceneSpec { water_slope: 0.08, noise_sigma: 0.02, seed: 3, ..scene(180.0) }).unwrap();
    let (rec, _) = run_pipeline(&img, &tmpl, &cal, &cfg, &FrameContext::default()).unwrap();
    assert_eq!(rec.status, Status::Ok);
    assert!((rec.reading.unwrap().pixel_row - truth).abs() <= 1.5, "{rec:?} vs {truth}");
}

#[test]
fn upside_down_frame_is_no_match() {
    let cfg = PipelineConfig::default();
    let (tmpl, cal) = calibrated(&cfg, &scene(200.0));
    let (img, _) = render(&SceneSpec { noise_sigma: 0.03, ..scene(200.0) }).unwrap();
    let (rec, diag) = run_pipeline(&img.flip_vertical(), &tmpl, &cal, &cfg, &FrameContext::default()).unwrap();
    assert_eq!(rec.status, Status::NoMatch);
    assert!(rec.match_score.unwrap() < cfg.match_threshold);
    assert!(rec.reading.is_none() && rec.detector_gap_px.is_none());
    assert!(!diag.matched.unwrap().accepted);
}

#[test]
fn black_frame_is_rejected_dark() {
    let cfg = PipelineConfig::default();
    let (tmpl, cal) = calibrated(&cfg, &scene(200.0));
    let black = ColorImage::filled(400, 400, [0, 0, 0]).unwrap();
    let (rec, diag) = run_pipeline(&black, &tmpl, &cal, &cfg, &FrameContext::default()).unwrap();
    assert_eq!(rec.status, Status::RejectedDark);
    assert!(rec.match_score.is_none());
    assert!(diag.matched.is_none());
}

#[test]
fn detector_failure_and_non_convergence() {
    let cfg = PipelineConfig::default();
    let (tmpl, cal) = calibrated(&cfg, &scene(200.0));
    let (img, _) = render(&scene(190.0)).unwrap();

    let strict = PipelineConfig { ensemble_tol_px: 0.5, ..cfg.clone() };
    let (rec, _) = run_pipeline(&img, &tmpl, &cal, &strict, &FrameContext::default()).unwrap();
    assert_eq!(rec.status, Status::NonConvergent);
    assert_eq!(rec.detector_gap_px, Some(1.0));

    let mut starved = cfg.clone();
    starved.regression.edge_floor = 0.999;
    let (rec, diag) = run_pipeline(&img, &tmpl, &cal, &starved, &FrameContext::default()).unwrap();
    assert_eq!(rec.status, Status::DetectorFailure);
    assert!(diag.regression_error.unwrap().contains("points"));
    assert!(matches!(diag.ssd.unwrap().diagnostics, Diagnostics::Ssd { .. }));
}

#[test]
fn calibration_errors() {
    let cfg = PipelineConfig::default();
    let (img, _) = render(&scene(200.0)).unwrap();
    let ctx = FrameContext::default();
    let black = ColorImage::filled(400, 400, [0, 0, 0]).unwrap();
    assert!(matches!(calibrate(&black, 200.0, H_R, 1.0, &cfg, &ctx), Err(Error::Calibration(_))));
    assert!(matches!(
        calibrate(&img, 450.0, H_R, 1.0, &cfg, &ctx),
        Err(Error::OutOfBounds { edge: Edge::Bottom, .. })
    ));
    assert!(matches!(
        calibrate(&img, 30.0, H_R, 1.0, &cfg, &ctx),
        Err(Error::OutOfBounds { edge: Edge::Top, .. })
    ));
    assert!(matches!(calibrate(&img, 200.0, -1.0, 1.0, &cfg, &ctx), Err(Error::Config(_))));
    // A template that would run off the bottom of the ROI.
    assert!(matches!(
        calibrate(&img, 380.0, H_R, 1.0, &cfg, &ctx),
        Err(Error::OutOfBounds { edge: Edge::Bottom, .. })
    ));
}

#[test]
fn template_files_and_external_edges() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = PipelineConfig::default();
    let (tmpl, cal) = calibrated(&cfg, &scene(200.0));
    let sidecar = dir.path().join("template.toml");
    save_template(&tmpl, Some(&cal), &sidecar).unwrap();
    let (loaded, loaded_cal) = load_template(&sidecar).unwrap();
    assert_eq!(loaded_cal.as_ref(), Some(&cal));

    let frame = dir.path().join("frame_20191003T101000.png");
    let (img, truth) = render(&scene(176.0)).unwrap();
    img.save(&frame).unwrap();
    let (rec, _) = run_pipeline_on_file(&frame, &loaded, &cal, &cfg).unwrap();
    assert_eq!(rec.status, Status::Ok);
    assert_eq!(rec.timestamp.unwrap().to_string(), "2019-10-03 10:10:00");
    assert!((rec.reading.unwrap().pixel_row - truth).abs() <= 1.0);

    // The same edge map handed in as an externally produced file.
    let (_, edges) = reference_edge_map(&img, &cfg, &FrameContext::default()).unwrap();
    std::fs::create_dir_all(dir.path().join("edges")).unwrap();
    edges.save(dir.path().join("edges/frame_20191003T101000.png")).unwrap();
    cfg.edge.kind = EdgeKind::External;
    cfg.edge.external_path_template = dir.path().join("edges/{stem}.png").to_string_lossy().into_owned();
    let (rec_ext, _) = run_pipeline_on_file(&frame, &loaded, &cal, &cfg).unwrap();
    assert_eq!(rec_ext.status, Status::Ok);
    assert!((rec_ext.reading.unwrap().pixel_row - truth).abs() <= 1.0);

    std::fs::remove_file(dir.path().join("edges/frame_20191003T101000.png")).unwrap();
    assert!(matches!(run_pipeline_on_file(&frame, &loaded, &cal, &cfg), Err(Error::Ingest { .. })));
    assert!(run_pipeline_on_file(&dir.path().join("missing.png"), &loaded, &cal, &cfg).is_err());
}

#[test]
fn canny_maps_cannot_anchor_a_reference() {
    let mut cfg = PipelineConfig::default();
    cfg.edge.kind = EdgeKind::Canny;
    let (img, truth) = render(&scene(200.0)).unwrap();
    // Single-pixel Canny lines leave no 3-pixel runs for the regression
    // detector, so the reference fit is degenerate.
    match calibrate(&img, truth, H_R, 1.0, &cfg, &FrameContext::default()) {
        Err(Error::Calibration(msg)) => assert!(msg.contains("support"), "{msg}"),
        other => panic!("{other:?}"),
    }
}

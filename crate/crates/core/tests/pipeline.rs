mod common;

use std::fs;

use citypipe_core::orchestrator::Prediction;
use citypipe_core::pipeline::{self, RunOptions, Stage};
use common::{check_fixture_goldens, fixture_config, run_fixture};

#[test]
fn fixture_run_matches_goldens() {
    let dir = tempfile::tempdir().unwrap();
    let reports = run_fixture(dir.path(), 4).unwrap();
    assert_eq!(reports.len(), 5);
    for stage in Stage::PIPELINE {
        assert!(dir.path().join("reports").join(format!("{stage}.json")).is_file(), "{stage}");
    }
    check_fixture_goldens(dir.path()).unwrap();

    let preds: Vec<Prediction> =
        serde_json::from_str(&fs::read_to_string(dir.path().join("predictions.json")).unwrap()).unwrap();
    assert_eq!(preds.len(), 10);
}

#[test]
fn selection_on_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture_config(dir.path());
    let report = pipeline::run_select(&cfg, RunOptions::default()).unwrap();
    assert_eq!(report.details["test_kept"], 10);
    let train: citypipe_core::view_selection::SelectionReport =
        serde_json::from_str(&fs::read_to_string(dir.path().join("selection_train.json")).unwrap()).unwrap();
    for kept in ["scn_a/cam_a1/0", "scn_a/cam_a1/2", "scn_a/veh_a/4", "scn_b/veh_b/3"] {
        assert!(train.is_kept(kept), "{kept}");
    }
    for dropped in ["scn_a/cam_a1/3", "scn_a/cam_a2/0"] {
        assert!(!train.is_kept(dropped), "{dropped}");
    }
    assert!(report.warnings.iter().any(|w| w.contains("scn_b") && w.contains("falling back")));
}

#[test]
fn rerun_render_skips_everything() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture_config(dir.path());
    let opts = RunOptions::default();
    pipeline::run_select(&cfg, opts).unwrap();
    let first = pipeline::run_render(&cfg, opts).unwrap();
    assert!(first.rewritten > 0);
    let second = pipeline::run_render(&cfg, opts).unwrap();
    assert_eq!(second.rewritten, 0);
    assert_eq!(second.skipped, first.rewritten);
    let forced = pipeline::run_render(&cfg, RunOptions { force: true }).unwrap();
    assert_eq!(forced.rewritten, first.rewritten);
}

#[test]
fn parallelism_does_not_change_outputs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_fixture(a.path(), 1).unwrap();
    run_fixture(b.path(), 8).unwrap();
    for file in ["dataset.json", "render/manifest.json", "predictions.json", "scorecard.json"] {
        assert_eq!(fs::read(a.path().join(file)).unwrap(), fs::read(b.path().join(file)).unwrap(), "{file}");
    }
}

#[test]
fn score_before_infer_names_prerequisite() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture_config(dir.path());
    let err = pipeline::run_stage(Stage::Score, &cfg, RunOptions::default()).unwrap_err();
    assert_eq!(err.to_string(), "predictions not found; run infer");
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use citypipe_core::orchestrator::{ChatTurn, MockServer};
use citypipe_core::PipelineConfig;

fn fixture_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/pipeline.json")
}

fn reply(turns: &[ChatTurn]) -> String {
    if turns.last().unwrap().text.contains("Describe the pedestrian") {
        "The pedestrian is standing on the left side of the road.".into()
    } else {
        "The vehicle is moving slowly and going straight.".into()
    }
}

/// Writes the fixture config with its output moved into `dir`.
fn write_config(dir: &Path, url: &str) -> PathBuf {
    let mut cfg = PipelineConfig::load(&fixture_config()).unwrap();
    cfg.paths.output = dir.join("out");
    cfg.endpoint.url = url.to_string();
    let path = dir.join("config.json");
    fs::write(&path, cfg.to_json()).unwrap();
    path
}

fn citypipe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_citypipe")).args(args).output().unwrap()
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

#[test]
fn run_all_then_render_is_up_to_date() {
    let server = MockServer::chat(reply).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &server.url());
    let cfg = cfg.to_str().unwrap();

    let out = citypipe(&["run-all", "--config", cfg]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let reports = stdout_json(&out);
    assert_eq!(reports.as_array().unwrap().len(), 5);
    for name in ["select", "render", "build-dataset", "infer", "score"] {
        assert!(dir.path().join(format!("out/reports/{name}.json")).is_file(), "{name}");
    }
    assert!(dir.path().join("out/scorecard.csv").is_file());

    let again = citypipe(&["render", "--config", cfg]);
    assert_eq!(again.status.code(), Some(0));
    assert_eq!(stdout_json(&again)["rewritten"], 0);
    let forced = citypipe(&["render", "--config", cfg, "--force"]);
    assert!(stdout_json(&forced)["rewritten"].as_u64().unwrap() > 0);

    let score = citypipe(&["score", "--config", cfg, "--pred", dir.path().join("out/predictions.json").to_str().unwrap()]);
    assert_eq!(score.status.code(), Some(0));
    assert!(stdout_json(&score)["overall"]["composite"].is_number());
}

#[test]
fn score_before_infer_fails_with_stage_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "http://127.0.0.1:9");
    let out = citypipe(&["score", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("predictions not found; run infer"));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"paths": {"annotations": "a", "frames": "f", "output": "o"}, "extra": 1}"#).unwrap();
    assert_eq!(citypipe(&["select", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(citypipe(&["select"]).status.code(), Some(2));
    let missing = dir.path().join("missing.json");
    fs::write(&missing, r#"{"paths": {"annotations": "nope.json", "frames": ".", "output": "o"}}"#).unwrap();
    assert_eq!(citypipe(&["select", "--config", missing.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn select_flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "http://127.0.0.1:9");
    let cfg = cfg.to_str().unwrap();
    let strict = stdout_json(&citypipe(&["select", "--config", cfg]));
    let loose = stdout_json(&citypipe(&["select", "--config", cfg, "--thr-p", "1e9", "--thr-v", "1e9"]));
    let kept = |v: &serde_json::Value| v["kept"].as_array().unwrap().len();
    assert!(kept(&loose) > kept(&strict));
    let test = stdout_json(&citypipe(&["select", "--config", cfg, "--split", "test"]));
    assert!(kept(&test) > 0);
}

#[test]
fn expand_demo_without_config() {
    let out = citypipe(&["expand-demo", "--blocks", "32", "--added", "8", "--dim", "8", "--heads", "2"]);
    assert_eq!(out.status.code(), Some(0));
    let report = stdout_json(&out);
    assert_eq!(report["plan"]["original_blocks"].as_u64().unwrap() + report["plan"]["added_blocks"].as_u64().unwrap(), 40);
    assert!(report["identity_residual"].as_f64().unwrap() <= 1e-6);

    let bad = citypipe(&["expand-demo", "--blocks", "6", "--added", "4"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("[2, 3]"));
}

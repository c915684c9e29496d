#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use citypipe_core::orchestrator::{ChatRole, ChatTurn, MockServer};
use citypipe_core::pipeline::{self, RunOptions, Stage, StageReport};
use citypipe_core::{PipelineConfig, PipelineError};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

pub fn fixture_config(output: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::load(&fixtures().join("pipeline.json")).expect("fixture config");
    cfg.paths.output = output.to_path_buf();
    cfg
}

/// Deterministic stand-in for the VLM: the reply depends only on which role
/// is asked, the perspective wording and how long the conversation is.
pub fn mock_reply(turns: &[ChatTurn]) -> String {
    let last = turns.iter().rev().find(|t| t.role == ChatRole::User).expect("user turn");
    let ego = last.text.contains("ego-vehicle");
    let prior = turns.iter().filter(|t| t.role == ChatRole::Assistant).count();
    let mut reply = if last.text.contains("Describe the pedestrian") {
        String::from(
            "The pedestrian is a male in his 30s wearing a black jacket. He is standing near the vehicle on the left side. \
             The weather is clear and the road is dry.",
        )
    } else if ego {
        String::from("The ego-vehicle is moving slowly and going straight. The street is urban with light traffic.")
    } else {
        String::from(
            "The vehicle is a white sedan on the right side of the pedestrian. The vehicle is moving slowly and going straight. \
             The street is urban with light traffic.",
        )
    };
    if prior > 0 {
        reply.push_str(" He noticed the vehicle.");
    }
    reply
}

/// Runs every pipeline stage on the shipped fixture with a mock endpoint.
pub fn run_fixture(output: &Path, parallelism: usize) -> Result<Vec<StageReport>, PipelineError> {
    let server = MockServer::chat(mock_reply).expect("mock server");
    let mut cfg = fixture_config(output);
    cfg.parallelism = parallelism;
    cfg.endpoint.url = server.url();
    cfg.validate()?;
    let opts = RunOptions::default();
    Stage::PIPELINE.iter().map(|&s| pipeline::run_stage(s, &cfg, opts)).collect()
}

/// Compares `actual` with a golden file; `UPDATE_GOLDEN=1` rewrites it.
pub fn check_golden(name: &str, actual: &str) -> Result<(), String> {
    let path = golden_dir().join(name);
    if std::env::var("UPDATE_GOLDEN").is_ok_and(|v| v == "1") {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, actual).unwrap();
        return Ok(());
    }
    let expected = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    if expected == actual {
        return Ok(());
    }
    let line = expected
        .lines()
        .zip(actual.lines())
        .position(|(a, b)| a != b)
        .unwrap_or_else(|| expected.lines().count().min(actual.lines().count()));
    Err(format!(
        "{name} differs from golden at line {}: expected {:?}, got {:?}",
        line + 1,
        expected.lines().nth(line).unwrap_or(""),
        actual.lines().nth(line).unwrap_or("")
    ))
}

/// Golden comparison of the fixture run outputs.
pub fn check_fixture_goldens(output: &Path) -> Result<(), String> {
    for (file, golden) in [
        ("dataset.json", "dataset.json"),
        ("render/manifest.json", "manifest.json"),
        ("scorecard.json", "scorecard.json"),
        ("scorecard.csv", "scorecard.csv"),
    ] {
        let text = fs::read_to_string(output.join(file)).map_err(|e| format!("{file}: {e}"))?;
        check_golden(golden, &text)?;
    }
    Ok(())
}

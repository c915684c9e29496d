//! Pipeline stages over one output directory.
//!
//! ```text
//! <output>/selection_train.json   select
//! <output>/selection_test.json    select
//! <output>/render/...png          render
//! <output>/render/manifest.json   render
//! <output>/dataset.json           build-dataset
//! <output>/predictions.json       infer
//! <output>/scorecard.{json,csv}   score
//! <output>/reports/<stage>.json   every stage
//! ```
//!
//! Image paths in the manifest and the dataset are relative to
//! `<output>/render`. Outputs whose bytes would not change are left alone
//! unless `force` is set.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{ImageFormat, RgbImage};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::block_expansion;
use crate::config::{ConfigError, PipelineConfig};
use crate::corpus::{parse_corpus, Corpus, CorpusError, SegmentTuple, Subject};
use crate::metrics::{evaluate_run, GroundTruth};
use crate::orchestrator::{run_batch, ChatClient, HttpChatClient, ImagePayload, Prediction, SegmentRequest, TOKEN_ENV};
use crate::qa_builder::{assemble_dataset, to_conversations, AssembleOptions, RuleClassifier};
use crate::view_selection::{filter_training_set, select_test_set, SelectionReport};
use crate::visual_prompting::{build_joint_views, draw_prompt, select_frame, RenderEntry, RenderManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Select,
    Render,
    BuildDataset,
    Infer,
    Score,
    ExpandDemo,
}

impl Stage {
    pub const PIPELINE: [Stage; 5] = [Stage::Select, Stage::Render, Stage::BuildDataset, Stage::Infer, Stage::Score];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Select => "select",
            Stage::Render => "render",
            Stage::BuildDataset => "build-dataset",
            Stage::Infer => "infer",
            Stage::Score => "score",
            Stage::ExpandDemo => "expand-demo",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{what} not found; run {stage}")]
    MissingPrerequisite { what: &'static str, stage: Stage },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("scoring failed: {0}")]
    Eval(#[from] crate::metrics::EvalError),
    #[error("expand demo failed: {0}")]
    Block(#[from] block_expansion::BlockError),
    #[error("endpoint client: {0}")]
    Client(#[from] crate::orchestrator::ChatError),
    #[error("{failed} of {total} segments failed; see reports/infer.json")]
    SegmentsFailed { failed: usize, total: usize },
}

impl PipelineError {
    /// 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            _ => 1,
        }
    }
}

type Result<T, E = PipelineError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub force: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    /// Outputs relative to the output directory, in write order.
    pub outputs: Vec<String>,
    pub rewritten: usize,
    pub skipped: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub details: serde_json::Value,
}

struct Writer<'a> {
    root: &'a Path,
    force: bool,
    report: StageReport,
}

impl<'a> Writer<'a> {
    fn new(root: &'a Path, stage: Stage, opts: RunOptions) -> Self {
        Self { root, force: opts.force, report: StageReport { stage: stage.to_string(), ..Default::default() } }
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let changed = write_if_changed(&self.root.join(rel), bytes, self.force)?;
        self.record(rel, changed);
        Ok(())
    }

    fn record(&mut self, rel: &str, changed: bool) {
        self.report.outputs.push(rel.to_string());
        if changed {
            self.report.rewritten += 1;
        } else {
            self.report.skipped += 1;
        }
    }

    fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).expect("serializable output");
        text.push('\n');
        self.write(rel, text.as_bytes())
    }

    fn finish(self) -> Result<StageReport> {
        let path = self.root.join("reports").join(format!("{}.json", self.report.stage));
        let mut text = serde_json::to_string_pretty(&self.report).expect("report serializes");
        text.push('\n');
        write_if_changed(&path, text.as_bytes(), true)?;
        tracing::info!(
            stage = %self.report.stage,
            rewritten = self.report.rewritten,
            skipped = self.report.skipped,
            warnings = self.report.warnings.len(),
            "stage finished"
        );
        Ok(self.report)
    }
}

/// Writes `bytes` unless the file already holds exactly them. Returns
/// whether the file was written.
pub fn write_if_changed(path: &Path, bytes: &[u8], force: bool) -> Result<bool> {
    if !force && fs::read(path).is_ok_and(|old| old == bytes) {
        return Ok(false);
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| PipelineError::Io { path: dir.to_path_buf(), source })?;
    }
    fs::write(path, bytes).map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })?;
    Ok(true)
}

fn read_json<T: DeserializeOwned>(path: &Path, what: &'static str, stage: Stage) -> Result<T> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(PipelineError::MissingPrerequisite { what, stage })
        }
        Err(source) => return Err(PipelineError::Io { path: path.to_path_buf(), source }),
    };
    serde_json::from_str(&text).map_err(|source| PipelineError::Json { path: path.to_path_buf(), source })
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn encode_png(img: &RgbImage) -> Vec<u8> {
    let mut buf = Vec::new();
    img.write_to(&mut Cursor::new(&mut buf), ImageFormat::Png).expect("in-memory PNG encoding");
    buf
}

fn thread_pool(parallelism: usize) -> Option<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new().num_threads(parallelism.max(1)).build().ok()
}

fn load_corpus(path: &Path, warnings: &mut Vec<String>) -> Result<Corpus> {
    let corpus = parse_corpus(path)?;
    warnings.extend(corpus.diagnostics.iter().map(|d| d.to_string()));
    Ok(corpus)
}

fn kept_tuples<'c>(corpus: &'c Corpus, report: &SelectionReport) -> Vec<&'c SegmentTuple> {
    let kept: BTreeSet<&str> = report.kept.iter().map(String::as_str).collect();
    corpus.segments().filter(|s| kept.contains(s.id().as_str())).collect()
}

const TRAIN_SELECTION: &str = "selection_train.json";
const TEST_SELECTION: &str = "selection_test.json";
const MANIFEST: &str = "render/manifest.json";
const DATASET: &str = "dataset.json";
const PREDICTIONS: &str = "predictions.json";

/// Training filter and test best-view choice.
pub fn run_select(cfg: &PipelineConfig, opts: RunOptions) -> Result<StageReport> {
    let out = &cfg.paths.output;
    let mut w = Writer::new(out, Stage::Select, opts);
    let train = load_corpus(&cfg.paths.annotations, &mut w.report.warnings)?;
    let train_report = filter_training_set(train.segments(), &cfg.selection);
    let test = if cfg.paths.test_annotations.is_some() {
        load_corpus(cfg.test_annotations(), &mut w.report.warnings)?
    } else {
        train.clone()
    };
    let test_report = select_test_set(&test.scenarios);
    w.report.warnings.extend(test_report.warnings.iter().cloned());
    w.report.details = serde_json::json!({
        "train_kept": train_report.kept.len(),
        "train_dropped": train_report.dropped.len(),
        "test_kept": test_report.kept.len(),
    });
    w.write_json(TRAIN_SELECTION, &train_report)?;
    w.write_json(TEST_SELECTION, &test_report)?;
    w.finish()
}

struct Rendered {
    entry: RenderEntry,
    files: Vec<(String, Vec<u8>)>,
}

fn render_tuple(cfg: &PipelineConfig, tuple: &SegmentTuple) -> std::result::Result<Rendered, String> {
    let id = tuple.id();
    let choice = select_frame(tuple).map_err(|e| format!("{id}: {e}"))?;
    let frame_path = cfg.paths.frames.join(&choice.frame.image);
    let frame = image::open(&frame_path)
        .map_err(|e| format!("{id}: cannot load frame {}: {e}", frame_path.display()))?
        .to_rgb8();
    let bp = choice.frame.subject_box(Subject::Pedestrian);
    let bv = choice.frame.subject_box(Subject::Vehicle);
    let base = format!("{}/{}/{}", tuple.scenario_id, tuple.view_id, tuple.phase_index);
    let mut warnings: Vec<String> = choice.warning.into_iter().collect();
    let (global, local, crop_box) = if bp.is_none() && bv.is_none() {
        warnings.push(format!("{id}: no box on the chosen frame; global view only"));
        (draw_prompt(&frame, None, None, &cfg.prompt), None, None)
    } else {
        let views = build_joint_views(&frame, bp, bv, &cfg.joint_view()).map_err(|e| format!("{id}: {e}"))?;
        (views.global, Some(views.local), Some(views.crop_box))
    };
    let global_png = encode_png(&global);
    let local_png = local.as_ref().map(encode_png);
    let global_rel = format!("{base}_global.png");
    let local_rel = local_png.as_ref().map(|_| format!("{base}_local.png"));
    let entry = RenderEntry {
        tuple_id: id,
        scenario_id: tuple.scenario_id.clone(),
        view_id: tuple.view_id.clone(),
        phase_index: tuple.phase_index,
        perspective: tuple.perspective,
        frame_index: choice.frame.index,
        frame_image: choice.frame.image.clone(),
        global_sha256: sha256_hex(&global_png),
        global: global_rel.clone(),
        local_sha256: local_png.as_deref().map(sha256_hex),
        local: local_rel.clone(),
        crop_box,
        global_only: local_png.is_none(),
        warnings,
    };
    let mut files = vec![(global_rel, global_png)];
    if let (Some(rel), Some(png)) = (local_rel, local_png) {
        files.push((rel, png));
    }
    Ok(Rendered { entry, files })
}

/// Draws visual prompts and local crops for every selected tuple.
pub fn run_render(cfg: &PipelineConfig, opts: RunOptions) -> Result<StageReport> {
    let out = &cfg.paths.output;
    let mut w = Writer::new(out, Stage::Render, opts);
    let train_sel: SelectionReport = read_json(&out.join(TRAIN_SELECTION), "training selection", Stage::Select)?;
    let test_sel: SelectionReport = read_json(&out.join(TEST_SELECTION), "test selection", Stage::Select)?;

    let mut tuples: Vec<SegmentTuple> = Vec::new();
    let train = load_corpus(&cfg.paths.annotations, &mut w.report.warnings)?;
    tuples.extend(kept_tuples(&train, &train_sel).into_iter().cloned());
    if cfg.paths.test_annotations.is_some() {
        let test = load_corpus(cfg.test_annotations(), &mut w.report.warnings)?;
        tuples.extend(kept_tuples(&test, &test_sel).into_iter().cloned());
    } else {
        tuples.extend(kept_tuples(&train, &test_sel).into_iter().cloned());
    }
    tuples.sort_by_key(|t| (t.scenario_id.clone(), t.view_id.clone(), t.phase_index));
    tuples.dedup_by_key(|t| t.id());

    let job = || -> Vec<_> { tuples.par_iter().map(|t| render_tuple(cfg, t)).collect() };
    let results = match thread_pool(cfg.parallelism) {
        Some(pool) => pool.install(job),
        None => job(),
    };
    let mut manifest = RenderManifest::default();
    for result in results {
        match result {
            Ok(r) => {
                for (rel, bytes) in &r.files {
                    w.write(&format!("render/{rel}"), bytes)?;
                }
                w.report.warnings.extend(r.entry.warnings.iter().cloned());
                manifest.entries.push(r.entry);
            }
            Err(msg) => {
                tracing::warn!(%msg, "tuple not rendered");
                w.report.warnings.push(msg);
            }
        }
    }
    w.report.details = serde_json::json!({ "rendered": manifest.entries.len(), "requested": tuples.len() });
    w.write_json(MANIFEST, &manifest)?;
    w.finish()
}

/// Instruction-tuning records for the training tuples.
pub fn run_build_dataset(cfg: &PipelineConfig, opts: RunOptions) -> Result<StageReport> {
    let out = &cfg.paths.output;
    let mut w = Writer::new(out, Stage::BuildDataset, opts);
    let train_sel: SelectionReport = read_json(&out.join(TRAIN_SELECTION), "training selection", Stage::Select)?;
    let manifest: RenderManifest = read_json(&out.join(MANIFEST), "render manifest", Stage::Render)?;
    let train = load_corpus(&cfg.paths.annotations, &mut w.report.warnings)?;
    let tuples = kept_tuples(&train, &train_sel);
    let render_dir = out.join("render");
    let build = assemble_dataset(
        tuples.iter().copied(),
        &manifest.entries,
        &AssembleOptions {
            mode: cfg.dataset.mode,
            views: cfg.dataset.views,
            classifier: &RuleClassifier,
            image_root: &render_dir,
            parallelism: cfg.parallelism,
        },
    );
    w.report.warnings.extend(build.diagnostics.iter().cloned());
    let items = to_conversations(&build.records);
    w.report.details = serde_json::json!({ "records": build.records.len(), "conversations": items.len() });
    w.write_json(DATASET, &items)?;
    w.finish()
}

/// Captions the test tuples through `client`.
pub fn run_infer_with(cfg: &PipelineConfig, opts: RunOptions, client: &dyn ChatClient) -> Result<StageReport> {
    let out = &cfg.paths.output;
    let mut w = Writer::new(out, Stage::Infer, opts);
    let test_sel: SelectionReport = read_json(&out.join(TEST_SELECTION), "test selection", Stage::Select)?;
    let manifest: RenderManifest = read_json(&out.join(MANIFEST), "render manifest", Stage::Render)?;
    let test = load_corpus(cfg.test_annotations(), &mut w.report.warnings)?;
    let render_dir = out.join("render");

    let mut requests = Vec::new();
    for tuple in kept_tuples(&test, &test_sel) {
        let id = tuple.id();
        let Some(entry) = manifest.entry(&id) else {
            w.report.warnings.push(format!("{id}: not in render manifest, skipped"));
            continue;
        };
        let mut images = Vec::new();
        for rel in cfg.dataset.views.paths(entry) {
            let path = render_dir.join(&rel);
            let bytes = fs::read(&path).map_err(|source| PipelineError::Io { path, source })?;
            images.push(ImagePayload::png(&bytes));
        }
        requests.push(SegmentRequest {
            scenario_id: tuple.scenario_id.clone(),
            phase_index: tuple.phase_index,
            perspective: tuple.perspective.into(),
            images,
        });
    }
    let outcome = run_batch(client, &requests, &cfg.infer, cfg.parallelism);
    let predictions = outcome.predictions();
    w.report.details = serde_json::json!({
        "mode": cfg.infer.mode,
        "requested": requests.len(),
        "captioned": predictions.len(),
        "failures": outcome.failures,
    });
    w.write_json(PREDICTIONS, &predictions)?;
    let failed = outcome.failures.len();
    let report = w.finish()?;
    if failed > 0 {
        return Err(PipelineError::SegmentsFailed { failed, total: requests.len() });
    }
    Ok(report)
}

/// Captions the test tuples through the configured HTTP endpoint; the bearer
/// token comes from the environment.
pub fn run_infer(cfg: &PipelineConfig, opts: RunOptions) -> Result<StageReport> {
    let mut endpoint = cfg.endpoint.clone();
    endpoint.token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty());
    let client = HttpChatClient::new(endpoint)?;
    run_infer_with(cfg, opts, &client)
}

/// Scores predictions against the test references.
pub fn run_score(cfg: &PipelineConfig, opts: RunOptions) -> Result<StageReport> {
    run_score_from(cfg, opts, &cfg.paths.output.join(PREDICTIONS))
}

/// [`run_score`] with predictions read from `predictions` instead of the
/// output directory.
pub fn run_score_from(cfg: &PipelineConfig, opts: RunOptions, predictions: &Path) -> Result<StageReport> {
    let out = &cfg.paths.output;
    let mut w = Writer::new(out, Stage::Score, opts);
    let predictions: Vec<Prediction> = read_json(predictions, "predictions", Stage::Infer)?;
    let test = load_corpus(cfg.test_annotations(), &mut w.report.warnings)?;
    let gt = GroundTruth::from_scenarios(&test.scenarios);
    let card = evaluate_run(&predictions, &gt, &cfg.metrics)?;
    w.report.warnings.extend(card.warnings.iter().cloned());
    w.report.details = serde_json::json!({
        "composite": card.overall.composite,
        "pedestrian_composite": card.pedestrian.composite,
        "vehicle_composite": card.vehicle.composite,
    });
    w.write_json("scorecard.json", &card)?;
    w.write("scorecard.csv", card.to_csv().as_bytes())?;
    w.finish()
}

pub fn run_expand_demo(cfg: &PipelineConfig, opts: RunOptions) -> Result<StageReport> {
    let d = cfg.expand_demo;
    let report = block_expansion::demo(d.spec, d.added, d.seed, d.samples)?;
    let mut w = Writer::new(&cfg.paths.output, Stage::ExpandDemo, opts);
    w.report.details = serde_json::to_value(&report).expect("report serializes");
    w.finish()
}

pub fn run_stage(stage: Stage, cfg: &PipelineConfig, opts: RunOptions) -> Result<StageReport> {
    tracing::info!(stage = %stage, "stage started");
    match stage {
        Stage::Select => run_select(cfg, opts),
        Stage::Render => run_render(cfg, opts),
        Stage::BuildDataset => run_build_dataset(cfg, opts),
        Stage::Infer => run_infer(cfg, opts),
        Stage::Score => run_score(cfg, opts),
        Stage::ExpandDemo => run_expand_demo(cfg, opts),
    }
}

/// Every pipeline stage in order; stops at the first failure.
pub fn run_all(cfg: &PipelineConfig, opts: RunOptions) -> Result<Vec<StageReport>> {
    cfg.validate()?;
    Stage::PIPELINE.iter().map(|&s| run_stage(s, cfg, opts)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_if_changed_skips_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b.txt");
        assert!(write_if_changed(&p, b"x", false).unwrap());
        assert!(!write_if_changed(&p, b"x", false).unwrap());
        assert!(write_if_changed(&p, b"x", true).unwrap());
        assert!(write_if_changed(&p, b"y", false).unwrap());
    }

    #[test]
    fn missing_prerequisites_name_the_stage() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig::with_paths(dir.path(), dir.path(), dir.path().join("out"));
        let err = run_score(&cfg, RunOptions::default()).unwrap_err();
        assert_eq!(err.to_string(), "predictions not found; run infer");
        assert_eq!(err.exit_code(), 1);
        let err = run_render(&cfg, RunOptions::default()).unwrap_err();
        assert_eq!(err.to_string(), "training selection not found; run select");
        let err = run_build_dataset(&cfg, RunOptions::default()).unwrap_err();
        assert!(err.to_string().contains("run select"));
    }

    #[test]
    fn config_errors_exit_two() {
        let err = PipelineError::Config(ConfigError::Invalid("x".into()));
        assert_eq!(err.exit_code(), 2);
    }
}

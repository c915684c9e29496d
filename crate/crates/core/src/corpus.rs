//! Scenario annotations: the normalized JSON document layer and the
//! in-memory model the rest of the pipeline consumes.
//!
//! A document is a list of scenarios; each scenario has views, each view has
//! up to five phase segments, and each segment lists frames with optional
//! pedestrian and vehicle boxes. See `schema/annotations.schema.json`.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

use crate::geometry::BBox;

/// Number of phases a fully annotated view carries.
pub const PHASE_COUNT: u8 = 5;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("annotation root {0} does not exist")]
    MissingRoot(PathBuf),
    #[error("failed to walk {path}: {source}")]
    Walk {
        path: PathBuf,
        #[source]
        source: walkdir::Error,
    },
    #[error("failed to write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subject {
    Pedestrian,
    Vehicle,
}

impl Subject {
    pub const ALL: [Subject; 2] = [Subject::Pedestrian, Subject::Vehicle];

    pub fn as_str(self) -> &'static str {
        match self {
            Subject::Pedestrian => "pedestrian",
            Subject::Vehicle => "vehicle",
        }
    }
}

impl fmt::Display for Subject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Perspective {
    Overhead,
    Vehicle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Source {
    #[serde(rename = "WTS")]
    Wts,
    #[serde(rename = "BDD")]
    Bdd,
}

// ---------------------------------------------------------------------------
// Document layer (what is on disk)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDoc {
    pub scenario_id: String,
    pub source: Source,
    pub views: Vec<ViewDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewDoc {
    pub view_id: String,
    pub perspective: Perspective,
    /// Absent means "no opinion"; `false` marks an overhead view outside the
    /// recommended camera set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recommended: Option<bool>,
    pub phases: Vec<PhaseDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseDoc {
    pub phase_index: u8,
    pub frames: Vec<FrameDoc>,
    #[serde(default)]
    pub pedestrian_caption: String,
    #[serde(default)]
    pub vehicle_caption: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameDoc {
    pub index: u32,
    pub image: String,
    pub ped_box: Option<[f64; 4]>,
    pub veh_box: Option<[f64; 4]>,
}

// ---------------------------------------------------------------------------
// In-memory model
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRef {
    pub index: u32,
    /// Image path relative to the frames directory.
    pub image: String,
    pub pedestrian: Option<BBox>,
    pub vehicle: Option<BBox>,
}

impl FrameRef {
    pub fn subject_box(&self, subject: Subject) -> Option<&BBox> {
        match subject {
            Subject::Pedestrian => self.pedestrian.as_ref(),
            Subject::Vehicle => self.vehicle.as_ref(),
        }
    }
}

/// One phase clip of one view: frames, both captions and per-frame boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentTuple {
    pub scenario_id: String,
    pub view_id: String,
    pub phase_index: u8,
    pub perspective: Perspective,
    pub recommended: Option<bool>,
    /// Ordered by frame index, never empty.
    pub frames: Vec<FrameRef>,
    pub pedestrian_caption: String,
    pub vehicle_caption: String,
}

impl SegmentTuple {
    pub fn id(&self) -> String {
        format!("{}/{}/{}", self.scenario_id, self.view_id, self.phase_index)
    }

    pub fn caption(&self, subject: Subject) -> &str {
        match subject {
            Subject::Pedestrian => &self.pedestrian_caption,
            Subject::Vehicle => &self.vehicle_caption,
        }
    }

    pub fn has_subject(&self, subject: Subject) -> bool {
        self.frames.iter().any(|f| f.subject_box(subject).is_some())
    }
}

/// Mean box area of `subject` over the frames where it is annotated; 0 when
/// no frame carries it.
pub fn average_area(tuple: &SegmentTuple, subject: Subject) -> f64 {
    let (sum, n) = tuple
        .frames
        .iter()
        .filter_map(|f| f.subject_box(subject))
        .fold((0.0, 0usize), |(s, n), b| (s + b.area(), n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewRecord {
    pub view_id: String,
    pub perspective: Perspective,
    pub recommended: Option<bool>,
    /// Ordered by phase index.
    pub segments: Vec<SegmentTuple>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioRecord {
    pub scenario_id: String,
    pub source: Source,
    /// Ordered by view id.
    pub views: Vec<ViewRecord>,
}

impl ScenarioRecord {
    pub fn segments(&self) -> impl Iterator<Item = &SegmentTuple> {
        self.views.iter().flat_map(|v| v.segments.iter())
    }

    pub fn view(&self, view_id: &str) -> Option<&ViewRecord> {
        self.views.iter().find(|v| v.view_id == view_id)
    }
}

/// A problem found while loading annotations. `field` is a JSON-path-like
/// locator inside the document when the problem is local to one value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub path: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    pub reason: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.field {
            Some(field) => write!(f, "{}: {}: {}", self.path.display(), field, self.reason),
            None => write!(f, "{}: {}", self.path.display(), self.reason),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    /// Sorted by scenario id.
    pub scenarios: Vec<ScenarioRecord>,
    pub diagnostics: Vec<Diagnostic>,
}

impl Corpus {
    pub fn segments(&self) -> impl Iterator<Item = &SegmentTuple> {
        self.scenarios.iter().flat_map(|s| s.segments())
    }

    pub fn scenario(&self, id: &str) -> Option<&ScenarioRecord> {
        self.scenarios.iter().find(|s| s.scenario_id == id)
    }
}

/// Loads every `*.json` document under `root` (or `root` itself when it is a
/// file). Problems inside a document drop the smallest enclosing unit (phase
/// or view) and are reported as diagnostics; unreadable documents are
/// reported and skipped as a whole.
pub fn parse_corpus(root: &Path) -> Result<Corpus, CorpusError> {
    if !root.exists() {
        return Err(CorpusError::MissingRoot(root.to_path_buf()));
    }
    let mut files = Vec::new();
    if root.is_file() {
        files.push(root.to_path_buf());
    } else {
        for entry in WalkDir::new(root).sort_by_file_name() {
            let entry = entry.map_err(|source| CorpusError::Walk {
                path: root.to_path_buf(),
                source,
            })?;
            let is_json = entry.path().extension().is_some_and(|e| e == "json");
            if entry.file_type().is_file() && is_json {
                files.push(entry.into_path());
            }
        }
    }

    let parsed: Vec<(Vec<ScenarioRecord>, Vec<Diagnostic>)> =
        files.par_iter().map(|p| load_file(p)).collect();

    let mut merged: BTreeMap<String, ScenarioRecord> = BTreeMap::new();
    let mut diagnostics = Vec::new();
    for (path, (records, diags)) in files.iter().zip(parsed) {
        diagnostics.extend(diags);
        for record in records {
            merge_scenario(&mut merged, record, path, &mut diagnostics);
        }
    }
    Ok(Corpus {
        scenarios: merged.into_values().collect(),
        diagnostics,
    })
}

fn merge_scenario(
    merged: &mut BTreeMap<String, ScenarioRecord>,
    record: ScenarioRecord,
    path: &Path,
    diagnostics: &mut Vec<Diagnostic>,
) {
    let Some(existing) = merged.get_mut(&record.scenario_id) else {
        merged.insert(record.scenario_id.clone(), record);
        return;
    };
    if existing.source != record.source {
        diagnostics.push(Diagnostic {
            path: path.to_path_buf(),
            field: Some(format!("scenario {}", record.scenario_id)),
            reason: "source disagrees with an earlier document; scenario fragment dropped".into(),
        });
        return;
    }
    for view in record.views {
        if existing.view(&view.view_id).is_some() {
            diagnostics.push(Diagnostic {
                path: path.to_path_buf(),
                field: Some(format!("scenario {} view {}", record.scenario_id, view.view_id)),
                reason: "duplicate view_id within scenario; view dropped".into(),
            });
        } else {
            existing.views.push(view);
        }
    }
    existing.views.sort_by(|a, b| a.view_id.cmp(&b.view_id));
}

fn load_file(path: &Path) -> (Vec<ScenarioRecord>, Vec<Diagnostic>) {
    let diag = |reason: String| Diagnostic {
        path: path.to_path_buf(),
        field: None,
        reason,
    };
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => return (Vec::new(), vec![diag(format!("unreadable: {e}"))]),
    };
    let docs: Vec<ScenarioDoc> = match serde_json::from_str(&text) {
        Ok(d) => d,
        Err(e) => return (Vec::new(), vec![diag(format!("malformed document: {e}"))]),
    };
    let mut diagnostics = Vec::new();
    let records = build_records(&docs, path, &mut diagnostics);
    (records, diagnostics)
}

/// Validates schema documents and converts them to records.
pub fn build_records(
    docs: &[ScenarioDoc],
    path: &Path,
    diagnostics: &mut Vec<Diagnostic>,
) -> Vec<ScenarioRecord> {
    let mut report = |field: String, reason: String| {
        diagnostics.push(Diagnostic {
            path: path.to_path_buf(),
            field: Some(field),
            reason,
        })
    };

    let mut out: Vec<ScenarioRecord> = Vec::new();
    let mut seen_scenarios = HashSet::new();
    for (si, doc) in docs.iter().enumerate() {
        let s_field = format!("[{si}]");
        if doc.scenario_id.is_empty() {
            report(format!("{s_field}.scenario_id"), "empty scenario_id".into());
            continue;
        }
        if !seen_scenarios.insert(doc.scenario_id.as_str()) {
            report(
                format!("{s_field}.scenario_id"),
                format!("scenario {} repeated within document", doc.scenario_id),
            );
            continue;
        }
        let mut views = Vec::new();
        let mut seen_views = HashSet::new();
        'views: for (vi, view) in doc.views.iter().enumerate() {
            let v_field = format!("{s_field}.views[{vi}]");
            if view.view_id.is_empty() {
                report(format!("{v_field}.view_id"), "empty view_id".into());
                continue;
            }
            if !seen_views.insert(view.view_id.as_str()) {
                report(
                    format!("{v_field}.view_id"),
                    format!("duplicate view_id {}", view.view_id),
                );
                continue;
            }
            if doc.source == Source::Bdd && view.perspective != Perspective::Vehicle {
                report(
                    format!("{v_field}.perspective"),
                    "BDD scenarios carry vehicle-perspective views only".into(),
                );
                continue;
            }
            let mut segments: Vec<SegmentTuple> = Vec::new();
            for (pi, phase) in view.phases.iter().enumerate() {
                let p_field = format!("{v_field}.phases[{pi}]");
                if phase.phase_index >= PHASE_COUNT {
                    report(
                        format!("{p_field}.phase_index"),
                        format!("phase_index {} outside 0..=4", phase.phase_index),
                    );
                    continue;
                }
                if segments.iter().any(|s| s.phase_index == phase.phase_index) {
                    report(
                        format!("{p_field}.phase_index"),
                        format!("phase_index {} repeated in view", phase.phase_index),
                    );
                    continue;
                }
                match build_frames(&phase.frames, &p_field) {
                    Ok(frames) => segments.push(SegmentTuple {
                        scenario_id: doc.scenario_id.clone(),
                        view_id: view.view_id.clone(),
                        phase_index: phase.phase_index,
                        perspective: view.perspective,
                        recommended: view.recommended,
                        frames,
                        pedestrian_caption: phase.pedestrian_caption.clone(),
                        vehicle_caption: phase.vehicle_caption.clone(),
                    }),
                    Err((field, reason)) => {
                        report(field, reason);
                        continue;
                    }
                }
            }
            if segments.is_empty() && !view.phases.is_empty() {
                // every phase was rejected; keep nothing of the view
                continue 'views;
            }
            segments.sort_by_key(|s| s.phase_index);
            views.push(ViewRecord {
                view_id: view.view_id.clone(),
                perspective: view.perspective,
                recommended: view.recommended,
                segments,
            });
        }
        views.sort_by(|a, b| a.view_id.cmp(&b.view_id));
        out.push(ScenarioRecord {
            scenario_id: doc.scenario_id.clone(),
            source: doc.source,
            views,
        });
    }
    out
}

fn build_frames(frames: &[FrameDoc], p_field: &str) -> Result<Vec<FrameRef>, (String, String)> {
    if frames.is_empty() {
        return Err((format!("{p_field}.frames"), "segment has no frames".into()));
    }
    let mut out: Vec<FrameRef> = Vec::with_capacity(frames.len());
    for (fi, frame) in frames.iter().enumerate() {
        let f_field = format!("{p_field}.frames[{fi}]");
        if out.iter().any(|f| f.index == frame.index) {
            return Err((
                format!("{f_field}.index"),
                format!("frame index {} repeated", frame.index),
            ));
        }
        if frame.image.is_empty() {
            return Err((format!("{f_field}.image"), "empty image reference".into()));
        }
        let pedestrian = frame
            .ped_box
            .map(|b| check_box(b, &format!("{f_field}.ped_box")))
            .transpose()?;
        let vehicle = frame
            .veh_box
            .map(|b| check_box(b, &format!("{f_field}.veh_box")))
            .transpose()?;
        out.push(FrameRef {
            index: frame.index,
            image: frame.image.clone(),
            pedestrian,
            vehicle,
        });
    }
    out.sort_by_key(|f| f.index);
    Ok(out)
}

fn check_box(raw: [f64; 4], field: &str) -> Result<BBox, (String, String)> {
    const NAMES: [&str; 4] = ["x", "y", "w", "h"];
    if let Some(i) = raw.iter().position(|v| !v.is_finite()) {
        return Err((format!("{field}[{i}] ({})", NAMES[i]), "not finite".into()));
    }
    for i in [2, 3] {
        if raw[i] <= 0.0 {
            return Err((
                format!("{field}[{i}] ({})", NAMES[i]),
                format!("{} must be positive, got {}", NAMES[i], raw[i]),
            ));
        }
    }
    BBox::new(raw[0], raw[1], raw[2], raw[3]).map_err(|e| (field.to_string(), e.to_string()))
}

/// Converts records back to schema documents (sorted, normalized form).
pub fn to_documents(scenarios: &[ScenarioRecord]) -> Vec<ScenarioDoc> {
    scenarios
        .iter()
        .map(|s| ScenarioDoc {
            scenario_id: s.scenario_id.clone(),
            source: s.source,
            views: s
                .views
                .iter()
                .map(|v| ViewDoc {
                    view_id: v.view_id.clone(),
                    perspective: v.perspective,
                    recommended: v.recommended,
                    phases: v
                        .segments
                        .iter()
                        .map(|seg| PhaseDoc {
                            phase_index: seg.phase_index,
                            frames: seg
                                .frames
                                .iter()
                                .map(|f| FrameDoc {
                                    index: f.index,
                                    image: f.image.clone(),
                                    ped_box: f.pedestrian.map(Into::into),
                                    veh_box: f.vehicle.map(Into::into),
                                })
                                .collect(),
                            pedestrian_caption: seg.pedestrian_caption.clone(),
                            vehicle_caption: seg.vehicle_caption.clone(),
                        })
                        .collect(),
                })
                .collect(),
        })
        .collect()
}

/// Canonical ordering of a valid document: scenarios, views, phases and
/// frames sorted by their keys.
pub fn normalize(docs: &[ScenarioDoc]) -> Vec<ScenarioDoc> {
    let mut docs = docs.to_vec();
    docs.sort_by(|a, b| a.scenario_id.cmp(&b.scenario_id));
    for s in &mut docs {
        s.views.sort_by(|a, b| a.view_id.cmp(&b.view_id));
        for v in &mut s.views {
            v.phases.sort_by_key(|p| p.phase_index);
            for p in &mut v.phases {
                p.frames.sort_by_key(|f| f.index);
            }
        }
    }
    docs
}

pub fn write_documents(path: &Path, scenarios: &[ScenarioRecord]) -> Result<(), CorpusError> {
    let mut text = serde_json::to_string_pretty(&to_documents(scenarios)).expect("documents serialize");
    text.push('\n');
    fs::write(path, text).map_err(|source| CorpusError::Write {
        path: path.to_path_buf(),
        source,
    })
}

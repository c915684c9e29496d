//! Area-based training-tuple filter and per-scenario test view choice.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{average_area, Perspective, ScenarioRecord, SegmentTuple, Subject, PHASE_COUNT};

#[derive(Debug, Error, PartialEq)]
pub enum SelectionError {
    #[error("threshold {name} must be finite and non-negative, got {value}")]
    InvalidThreshold { name: &'static str, value: f64 },
    #[error("scenario {0} has no views")]
    NoViews(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionThresholds {
    pub thr_p: f64,
    pub thr_v: f64,
}

impl SelectionThresholds {
    pub fn new(thr_p: f64, thr_v: f64) -> Result<Self, SelectionError> {
        for (name, value) in [("thr_p", thr_p), ("thr_v", thr_v)] {
            if !value.is_finite() || value < 0.0 {
                return Err(SelectionError::InvalidThreshold { name, value });
            }
        }
        Ok(Self { thr_p, thr_v })
    }
}

impl Default for SelectionThresholds {
    fn default() -> Self {
        Self { thr_p: 0.0, thr_v: 0.0 }
    }
}

/// Which rule removed a tuple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    /// Both average areas above their thresholds.
    BothAboveThreshold,
    /// Pedestrian above threshold, vehicle absent.
    PedestrianOnly,
    /// Vehicle above threshold, pedestrian absent.
    VehicleOnly,
    /// Overhead view outside the recommended camera set.
    NonRecommendedView,
    /// Test split: another view of the scenario was chosen.
    NotBestView,
    /// Inverted rule: the tuple did not match any of the keep clauses.
    NotSelected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedTuple {
    pub id: String,
    pub reason: DropReason,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub kept: Vec<String>,
    pub dropped: Vec<DroppedTuple>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl SelectionReport {
    pub fn is_kept(&self, id: &str) -> bool {
        self.kept.iter().any(|k| k == id)
    }
}

/// Matching clause of the area rule, or `None` for the catch-all branch.
pub fn matching_clause(a_p: f64, a_v: f64, thr: &SelectionThresholds) -> Option<DropReason> {
    if a_p > thr.thr_p && a_v > thr.thr_v {
        Some(DropReason::BothAboveThreshold)
    } else if a_p > thr.thr_p && a_v == 0.0 {
        Some(DropReason::PedestrianOnly)
    } else if a_v > thr.thr_v && a_p == 0.0 {
        Some(DropReason::VehicleOnly)
    } else {
        None
    }
}

/// The area rule as printed: a tuple is kept only when none of the three
/// clauses fires.
pub fn filter_training_tuple(a_p: f64, a_v: f64, thr: &SelectionThresholds) -> bool {
    matching_clause(a_p, a_v, thr).is_none()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingFilter {
    pub thresholds: SelectionThresholds,
    /// Keep tuples matched by the three clauses instead of dropping them.
    #[serde(default)]
    pub invert: bool,
    /// View ids excluded regardless of areas.
    #[serde(default)]
    pub excluded_views: BTreeSet<String>,
}

impl TrainingFilter {
    fn decide(&self, tuple: &SegmentTuple) -> Option<DropReason> {
        let non_recommended = tuple.perspective == Perspective::Overhead && tuple.recommended == Some(false);
        if non_recommended || self.excluded_views.contains(&tuple.view_id) {
            return Some(DropReason::NonRecommendedView);
        }
        let a_p = average_area(tuple, Subject::Pedestrian);
        let a_v = average_area(tuple, Subject::Vehicle);
        match (matching_clause(a_p, a_v, &self.thresholds), self.invert) {
            (Some(reason), false) => Some(reason),
            (None, false) => None,
            (Some(_), true) => None,
            (None, true) => Some(DropReason::NotSelected),
        }
    }
}

pub fn filter_training_set<'a>(
    tuples: impl IntoIterator<Item = &'a SegmentTuple>,
    filter: &TrainingFilter,
) -> SelectionReport {
    let mut report = SelectionReport::default();
    for tuple in tuples {
        match filter.decide(tuple) {
            None => report.kept.push(tuple.id()),
            Some(reason) => report.dropped.push(DroppedTuple { id: tuple.id(), reason }),
        }
    }
    report
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestView {
    pub view_id: String,
    pub mean_pedestrian_area: f64,
    /// Set when no view carried pedestrian boxes in all phases.
    pub warning: Option<String>,
}

fn covers_all_phases(segments: &[SegmentTuple]) -> bool {
    (0..PHASE_COUNT).all(|p| {
        segments
            .iter()
            .any(|s| s.phase_index == p && s.has_subject(Subject::Pedestrian))
    })
}

fn mean_pedestrian_area(segments: &[SegmentTuple]) -> f64 {
    if segments.is_empty() {
        return 0.0;
    }
    segments.iter().map(|s| average_area(s, Subject::Pedestrian)).sum::<f64>() / segments.len() as f64
}

/// Picks the view with pedestrian boxes in every phase and the largest mean
/// pedestrian area; ties go to the smallest view id.
pub fn select_best_test_view(scenario: &ScenarioRecord) -> Result<BestView, SelectionError> {
    if scenario.views.is_empty() {
        return Err(SelectionError::NoViews(scenario.scenario_id.clone()));
    }
    let scored: Vec<(&str, f64, bool)> = scenario
        .views
        .iter()
        .map(|v| (v.view_id.as_str(), mean_pedestrian_area(&v.segments), covers_all_phases(&v.segments)))
        .collect();
    let best = |candidates: &mut dyn Iterator<Item = &(&str, f64, bool)>| {
        candidates
            .min_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)))
            .map(|(id, area, _)| (id.to_string(), *area))
    };
    if let Some((view_id, area)) = best(&mut scored.iter().filter(|s| s.2)) {
        return Ok(BestView { view_id, mean_pedestrian_area: area, warning: None });
    }
    let (view_id, area) = best(&mut scored.iter()).expect("at least one view");
    let warning = format!(
        "scenario {}: no view has pedestrian boxes in all {PHASE_COUNT} phases; falling back to {view_id}",
        scenario.scenario_id
    );
    tracing::warn!(scenario = %scenario.scenario_id, view = %view_id, "best-view fallback");
    Ok(BestView { view_id, mean_pedestrian_area: area, warning: Some(warning) })
}

/// Keeps the best view of every scenario; other views' tuples are dropped
/// as `NotBestView`.
pub fn select_test_set(scenarios: &[ScenarioRecord]) -> SelectionReport {
    let mut report = SelectionReport::default();
    for scenario in scenarios {
        let best = match select_best_test_view(scenario) {
            Ok(b) => b,
            Err(e) => {
                report.warnings.push(e.to_string());
                continue;
            }
        };
        report.warnings.extend(best.warning.clone());
        for seg in scenario.segments() {
            if seg.view_id == best.view_id {
                report.kept.push(seg.id());
            } else {
                report.dropped.push(DroppedTuple { id: seg.id(), reason: DropReason::NotBestView });
            }
        }
    }
    report
}

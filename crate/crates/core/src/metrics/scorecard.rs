use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{bleu4, cider::CiderScorer, composite, meteor, rouge_l, tokenize, BleuSmoothing, CiderVariant};
use crate::corpus::{ScenarioRecord, Subject};
use crate::orchestrator::Prediction;
use crate::view_selection::select_best_test_view;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("predictions without ground truth: {}", .0.join(", "))]
    Unmatched(Vec<String>),
    #[error("duplicate predictions: {}", .0.join(", "))]
    Duplicate(Vec<String>),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricOptions {
    #[serde(default)]
    pub cider_variant: CiderVariant,
    #[serde(default)]
    pub bleu_smoothing: BleuSmoothing,
}

/// Reference captions keyed by (scenario id, phase index).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    pub entries: BTreeMap<(String, u8), RefPair>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RefPair {
    pub pedestrian: String,
    pub vehicle: String,
}

impl GroundTruth {
    pub fn insert(&mut self, scenario_id: &str, phase_index: u8, pedestrian: &str, vehicle: &str) {
        self.entries.insert(
            (scenario_id.to_string(), phase_index),
            RefPair { pedestrian: pedestrian.to_string(), vehicle: vehicle.to_string() },
        );
    }

    /// References taken from each scenario's best test view.
    pub fn from_scenarios(scenarios: &[ScenarioRecord]) -> Self {
        let mut gt = Self::default();
        for scenario in scenarios {
            let Ok(best) = select_best_test_view(scenario) else { continue };
            let Some(view) = scenario.view(&best.view_id) else { continue };
            for seg in &view.segments {
                gt.insert(&seg.scenario_id, seg.phase_index, &seg.pedestrian_caption, &seg.vehicle_caption);
            }
        }
        gt
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub count: usize,
    pub bleu4: f64,
    pub meteor: f64,
    pub rouge_l: f64,
    pub cider: f64,
    pub composite: f64,
}

#[derive(Debug, Clone, Copy)]
struct ItemScore {
    role: Subject,
    phase: u8,
    bleu4: f64,
    meteor: f64,
    rouge_l: f64,
    cider: f64,
}

impl MetricSet {
    fn from_items<'a>(items: impl Iterator<Item = &'a ItemScore>) -> Self {
        let mut set = MetricSet::default();
        for it in items {
            set.count += 1;
            set.bleu4 += it.bleu4;
            set.meteor += it.meteor;
            set.rouge_l += it.rouge_l;
            set.cider += it.cider;
        }
        if set.count > 0 {
            let n = set.count as f64;
            set.bleu4 /= n;
            set.meteor /= n;
            set.rouge_l /= n;
            set.cider /= n;
        }
        set.composite = composite(set.bleu4, set.meteor, set.rouge_l, set.cider);
        set
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreCard {
    pub overall: MetricSet,
    pub pedestrian: MetricSet,
    pub vehicle: MetricSet,
    pub per_phase: BTreeMap<u8, MetricSet>,
    /// Ground-truth segments with no prediction ("scenario/phase").
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub missing: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl ScoreCard {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scope,count,bleu4,meteor,rouge_l,cider,composite\n");
        let mut row = |scope: &str, m: &MetricSet| {
            let _ = writeln!(
                out,
                "{scope},{},{:.6},{:.6},{:.6},{:.6},{:.4}",
                m.count, m.bleu4, m.meteor, m.rouge_l, m.cider, m.composite
            );
        };
        row("overall", &self.overall);
        row("pedestrian", &self.pedestrian);
        row("vehicle", &self.vehicle);
        for (phase, m) in &self.per_phase {
            row(&format!("phase_{phase}"), m);
        }
        out
    }
}

/// Scores every prediction against its reference. Metrics are averaged per
/// caption; composites come from the averaged metrics. CIDEr IDF is built
/// separately for the pedestrian and vehicle corpora.
pub fn evaluate_run(predictions: &[Prediction], gt: &GroundTruth, opts: &MetricOptions) -> Result<ScoreCard, EvalError> {
    let key = |p: &Prediction| format!("{}/{}", p.scenario_id, p.phase_index);
    let unmatched: Vec<String> = predictions
        .iter()
        .filter(|p| !gt.entries.contains_key(&(p.scenario_id.clone(), p.phase_index)))
        .map(key)
        .collect();
    if !unmatched.is_empty() {
        return Err(EvalError::Unmatched(unmatched));
    }
    let mut seen = BTreeMap::new();
    for p in predictions {
        *seen.entry(key(p)).or_insert(0usize) += 1;
    }
    let dups: Vec<String> = seen.into_iter().filter(|(_, c)| *c > 1).map(|(k, _)| k).collect();
    if !dups.is_empty() {
        return Err(EvalError::Duplicate(dups));
    }

    let mut sorted: Vec<&Prediction> = predictions.iter().collect();
    sorted.sort_by(|a, b| (&a.scenario_id, a.phase_index).cmp(&(&b.scenario_id, b.phase_index)));

    let mut items = Vec::new();
    let mut warnings = Vec::new();
    for role in Subject::ALL {
        let pairs: Vec<(u8, _, _)> = sorted
            .iter()
            .map(|p| {
                let refs = &gt.entries[&(p.scenario_id.clone(), p.phase_index)];
                let (hyp, reference) = match role {
                    Subject::Pedestrian => (&p.pedestrian_caption, &refs.pedestrian),
                    Subject::Vehicle => (&p.vehicle_caption, &refs.vehicle),
                };
                (p.phase_index, tokenize(hyp), vec![tokenize(reference)])
            })
            .collect();
        let refs: Vec<_> = pairs.iter().map(|(_, _, r)| r.clone()).collect();
        let scorer = CiderScorer::new(&refs, opts.cider_variant);
        if !pairs.is_empty() {
            if let Some(w) = scorer.warning() {
                warnings.push(format!("{role}: {w}"));
            }
        }
        let scored: Vec<ItemScore> = pairs
            .par_iter()
            .map(|(phase, hyp, refs)| ItemScore {
                role,
                phase: *phase,
                bleu4: bleu4(hyp, refs, opts.bleu_smoothing),
                meteor: meteor(hyp, refs),
                rouge_l: rouge_l(hyp, refs),
                cider: scorer.score(hyp, refs),
            })
            .collect();
        items.extend(scored);
    }

    let mut phases: Vec<u8> = items.iter().map(|i| i.phase).collect();
    phases.sort_unstable();
    phases.dedup();
    let missing = gt
        .entries
        .keys()
        .filter(|(s, ph)| !predictions.iter().any(|p| &p.scenario_id == s && p.phase_index == *ph))
        .map(|(s, ph)| format!("{s}/{ph}"))
        .collect();

    Ok(ScoreCard {
        overall: MetricSet::from_items(items.iter()),
        pedestrian: MetricSet::from_items(items.iter().filter(|i| i.role == Subject::Pedestrian)),
        vehicle: MetricSet::from_items(items.iter().filter(|i| i.role == Subject::Vehicle)),
        per_phase: phases
            .into_iter()
            .map(|ph| (ph, MetricSet::from_items(items.iter().filter(|i| i.phase == ph))))
            .collect(),
        missing,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(s: &str, phase: u8, ped: &str, veh: &str) -> Prediction {
        Prediction {
            scenario_id: s.into(),
            phase_index: phase,
            pedestrian_caption: ped.into(),
            vehicle_caption: veh.into(),
        }
    }

    fn gt() -> GroundTruth {
        let mut gt = GroundTruth::default();
        gt.insert("s1", 0, "a man stands on the left side of the road", "the car moves slowly forward");
        gt.insert("s2", 1, "a woman in a red coat walks across", "a white bus waits at the junction");
        gt
    }

    #[test]
    fn perfect_predictions() {
        let g = gt();
        let preds: Vec<_> =
            g.entries.iter().map(|((s, p), r)| pred(s, *p, &r.pedestrian, &r.vehicle)).collect();
        let card = evaluate_run(&preds, &g, &MetricOptions::default()).unwrap();
        assert!((card.overall.bleu4 - 1.0).abs() < 1e-12);
        assert!((card.overall.rouge_l - 1.0).abs() < 1e-12);
        assert_eq!(card.overall.count, 4);
        assert!(card.missing.is_empty());
    }

    #[test]
    fn half_perfect_half_empty() {
        let g = gt();
        let preds = vec![
            pred("s1", 0, "a man stands on the left side of the road", "the car moves slowly forward"),
            pred("s2", 1, "", ""),
        ];
        let card = evaluate_run(&preds, &g, &MetricOptions::default()).unwrap();
        // item scores: perfect items give 1 for BLEU and ROUGE, empty ones give 0
        assert!((card.overall.bleu4 - 0.5).abs() < 1e-12);
        assert!((card.overall.rouge_l - 0.5).abs() < 1e-12);
        let m_ped = 1.0 - 0.5 / 10f64.powi(3);
        let m_veh = 1.0 - 0.5 / 5f64.powi(3);
        assert!((card.overall.meteor - (m_ped + m_veh) / 4.0).abs() < 1e-12);
        assert!((card.pedestrian.meteor - m_ped / 2.0).abs() < 1e-12);
        assert_eq!(card.per_phase.len(), 2);
        assert!((card.per_phase[&1].bleu4).abs() < 1e-12);
    }

    #[test]
    fn unmatched_ids_listed() {
        let err = evaluate_run(&[pred("zz", 3, "a", "b"), pred("s1", 0, "a", "b")], &gt(), &MetricOptions::default())
            .unwrap_err();
        assert_eq!(err, EvalError::Unmatched(vec!["zz/3".into()]));
        assert!(err.to_string().contains("zz/3"));
    }

    #[test]
    fn missing_and_csv() {
        let card = evaluate_run(&[pred("s1", 0, "a man", "the car")], &gt(), &MetricOptions::default()).unwrap();
        assert_eq!(card.missing, ["s2/1"]);
        let csv = card.to_csv();
        assert!(csv.starts_with("scope,count,bleu4"));
        assert_eq!(csv.lines().count(), 5);
        assert!(!card.warnings.is_empty());
    }

    #[test]
    fn order_independent() {
        let g = gt();
        let a = vec![pred("s1", 0, "a man on the road", "a car"), pred("s2", 1, "a woman walks", "the bus waits")];
        let b: Vec<_> = a.iter().rev().cloned().collect();
        let opts = MetricOptions::default();
        assert_eq!(evaluate_run(&a, &g, &opts).unwrap(), evaluate_run(&b, &g, &opts).unwrap());
    }
}

//! Instruction records from segment captions: long prompts, per-dimension
//! short QA pairs, and single- or multi-round dataset layouts.

mod classify;
mod templates;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use classify::{
    keywords, ClassifierError, RemoteClassifier, RuleClassifier, SentenceClassifier, LABELING_INSTRUCTION,
};
pub use templates::{build_long_prompt, long_template, short_question, PromptPerspective, PromptTemplate};

use crate::corpus::{SegmentTuple, Subject};
use crate::visual_prompting::RenderEntry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Attributes,
    Location,
    MotionState,
    Environment,
}

impl Dimension {
    pub const ALL: [Dimension; 4] = [
        Dimension::Attributes,
        Dimension::Location,
        Dimension::MotionState,
        Dimension::Environment,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::Attributes => "attributes",
            Dimension::Location => "location",
            Dimension::MotionState => "motion_state",
            Dimension::Environment => "environment",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Splits on `.`, `?` or `!` followed by whitespace or end of text. The
/// terminal punctuation stays with its sentence; blank pieces are dropped.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '?' | '!') {
            let boundary = chars.peek().is_none_or(|(_, n)| n.is_whitespace());
            if boundary {
                let end = i + c.len_utf8();
                let piece = text[start..end].trim();
                if !piece.trim_end_matches(['.', '?', '!']).trim().is_empty() {
                    out.push(piece.to_string());
                }
                start = end;
            }
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail.to_string());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LabeledSentence {
    pub sentence: String,
    pub dimension: Dimension,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitOutcome {
    pub sentences: Vec<LabeledSentence>,
    pub warning: Option<String>,
}

/// Labels every sentence of `desc`. A failing classifier falls back to the
/// rule table and reports a warning.
pub fn split_description(desc: &str, classifier: &dyn SentenceClassifier) -> SplitOutcome {
    let sentences = split_sentences(desc);
    let (labels, warning) = match classifier.classify(&sentences) {
        Ok(labels) if labels.len() == sentences.len() => (labels, None),
        Ok(labels) => {
            let msg = format!("classifier returned {} labels for {} sentences", labels.len(), sentences.len());
            (RuleClassifier.classify(&sentences).expect("rule classifier"), Some(msg))
        }
        Err(e) => {
            tracing::warn!(error = %e, "sentence classifier failed, using rule table");
            (RuleClassifier.classify(&sentences).expect("rule classifier"), Some(e.to_string()))
        }
    };
    SplitOutcome {
        sentences: sentences
            .into_iter()
            .zip(labels)
            .map(|(sentence, dimension)| LabeledSentence { sentence, dimension })
            .collect(),
        warning,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct QaPair {
    pub dimension: Dimension,
    pub question: String,
    pub answer: String,
}

/// One QA pair per dimension present in `labeled`; the answer joins that
/// dimension's sentences in source order.
pub fn short_qa_from_labels(
    labeled: &[LabeledSentence],
    role: Subject,
    perspective: PromptPerspective,
) -> Vec<QaPair> {
    Dimension::ALL
        .into_iter()
        .filter_map(|dim| {
            let parts: Vec<&str> = labeled
                .iter()
                .filter(|l| l.dimension == dim)
                .map(|l| l.sentence.as_str())
                .collect();
            (!parts.is_empty()).then(|| QaPair {
                dimension: dim,
                question: short_question(role, dim, perspective),
                answer: parts.join(" "),
            })
        })
        .collect()
}

pub fn build_short_qa(
    desc: &str,
    role: Subject,
    perspective: PromptPerspective,
    classifier: &dyn SentenceClassifier,
) -> Vec<QaPair> {
    short_qa_from_labels(&split_description(desc, classifier).sentences, role, perspective)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetMode {
    #[default]
    SingleRound,
    MultiRound,
}

/// Which rendered views go into a record.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewSet {
    #[default]
    GlobalLocal,
    GlobalOnly,
    LocalOnly,
}

impl ViewSet {
    /// Image paths of `entry` for this set; global-only entries always
    /// provide the global image.
    pub fn paths(self, entry: &RenderEntry) -> Vec<String> {
        match (self, &entry.local) {
            (ViewSet::GlobalLocal, Some(local)) => vec![entry.global.clone(), local.clone()],
            (ViewSet::LocalOnly, Some(local)) => vec![local.clone()],
            _ => vec![entry.global.clone()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub id: String,
    /// Global view first, then local.
    pub image_paths: Vec<String>,
    pub question: String,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round_group: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetBuild {
    pub records: Vec<InstructionRecord>,
    pub diagnostics: Vec<String>,
}

#[derive(Clone, Copy)]
pub struct AssembleOptions<'a> {
    pub mode: DatasetMode,
    pub views: ViewSet,
    pub classifier: &'a dyn SentenceClassifier,
    /// Directory the manifest's relative paths resolve against.
    pub image_root: &'a Path,
    /// Upper bound on concurrently classified tuples.
    pub parallelism: usize,
}

fn tuple_records(tuple: &SegmentTuple, entry: &RenderEntry, opts: &AssembleOptions<'_>) -> DatasetBuild {
    let mut out = DatasetBuild::default();
    let perspective = PromptPerspective::from(tuple.perspective);
    let images = opts.views.paths(entry);
    let id = tuple.id();
    let group = (opts.mode == DatasetMode::MultiRound).then(|| id.clone());
    let mut push = |suffix: String, question: String, answer: String| {
        out.records.push(InstructionRecord {
            id: format!("{id}#{suffix}"),
            image_paths: images.clone(),
            question,
            answer,
            round_group: group.clone(),
        })
    };
    let mut warnings = Vec::new();
    for role in Subject::ALL {
        let caption = tuple.caption(role).trim();
        if caption.is_empty() {
            warnings.push(format!("{id}: empty {role} caption, role skipped"));
            continue;
        }
        push(format!("long-{role}"), build_long_prompt(role, perspective), caption.to_string());
        let split = split_description(caption, opts.classifier);
        warnings.extend(split.warning.map(|w| format!("{id}: {w}")));
        for qa in short_qa_from_labels(&split.sentences, role, perspective) {
            push(format!("short-{role}-{}", qa.dimension), qa.question, qa.answer);
        }
    }
    out.diagnostics = warnings;
    out
}

/// Builds instruction records for `tuples`, looking up each tuple's rendered
/// images in `entries`. Tuples without rendered images on disk are skipped
/// with a diagnostic.
pub fn assemble_dataset<'a>(
    tuples: impl IntoIterator<Item = &'a SegmentTuple>,
    entries: &[RenderEntry],
    opts: &AssembleOptions<'_>,
) -> DatasetBuild {
    let by_id: BTreeMap<&str, &RenderEntry> = entries.iter().map(|e| (e.tuple_id.as_str(), e)).collect();
    let mut jobs = Vec::new();
    let mut build = DatasetBuild::default();
    for tuple in tuples {
        let id = tuple.id();
        let Some(entry) = by_id.get(id.as_str()) else {
            build.diagnostics.push(format!("{id}: not in render manifest, skipped"));
            continue;
        };
        let missing: Vec<String> = opts
            .views
            .paths(entry)
            .into_iter()
            .filter(|p| !opts.image_root.join(p).is_file())
            .collect();
        if !missing.is_empty() {
            build.diagnostics.push(format!("{id}: rendered image missing: {}", missing.join(", ")));
            continue;
        }
        jobs.push((tuple, *entry));
    }
    let run = || -> Vec<DatasetBuild> { jobs.par_iter().map(|(t, e)| tuple_records(t, e, opts)).collect() };
    let parts = match rayon::ThreadPoolBuilder::new().num_threads(opts.parallelism.max(1)).build() {
        Ok(pool) => pool.install(run),
        Err(_) => run(),
    };
    for part in parts {
        build.records.extend(part.records);
        build.diagnostics.extend(part.diagnostics);
    }
    build
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationTurn {
    pub from: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationItem {
    pub id: String,
    pub image: Vec<String>,
    pub conversations: Vec<ConversationTurn>,
}

fn image_tokens(n: usize) -> String {
    "<image>\n".repeat(n)
}

/// Instruction-tuning JSON layout: records sharing a `round_group` become one
/// multi-turn conversation; image placeholders open the first human turn.
pub fn to_conversations(records: &[InstructionRecord]) -> Vec<ConversationItem> {
    let mut items: Vec<ConversationItem> = Vec::new();
    let mut group_slot: BTreeMap<&str, usize> = BTreeMap::new();
    for r in records {
        let human = |first: bool| ConversationTurn {
            from: "human".into(),
            value: if first { format!("{}{}", image_tokens(r.image_paths.len()), r.question) } else { r.question.clone() },
        };
        let gpt = ConversationTurn { from: "gpt".into(), value: r.answer.clone() };
        match r.round_group.as_deref() {
            Some(g) if group_slot.contains_key(g) => {
                let item = &mut items[group_slot[g]];
                item.conversations.push(human(false));
                item.conversations.push(gpt);
            }
            group => {
                if let Some(g) = group {
                    group_slot.insert(g, items.len());
                }
                items.push(ConversationItem {
                    id: group.map_or_else(|| r.id.clone(), str::to_string),
                    image: r.image_paths.clone(),
                    conversations: vec![human(true), gpt],
                });
            }
        }
    }
    items
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{FrameRef, Perspective};

    #[test]
    fn sentence_splitting() {
        assert_eq!(
            split_sentences("He is tall. It rained! Why? 3.5 m away"),
            ["He is tall.", "It rained!", "Why?", "3.5 m away"]
        );
        assert!(split_sentences("  .  ").is_empty());
        assert_eq!(split_sentences("One.  . Two."), ["One.", "Two."]);
    }

    #[test]
    fn short_qa_counts_and_order() {
        let all = "He is in his 30s. He stood in front of the car. He was walking slowly. It was raining.";
        let qa = build_short_qa(all, Subject::Pedestrian, PromptPerspective::Overhead, &RuleClassifier);
        assert_eq!(qa.len(), 4);
        let env = build_short_qa("It was raining. The road was wet.", Subject::Vehicle, PromptPerspective::Overhead, &RuleClassifier);
        assert_eq!(env.len(), 1);
        assert_eq!(env[0].answer, "It was raining. The road was wet.");
        let ordered = build_short_qa(
            "He wore a red hat. The road was dry. He is tall, 180 cm.",
            Subject::Pedestrian,
            PromptPerspective::Overhead,
            &RuleClassifier,
        );
        assert_eq!(ordered[0].dimension, Dimension::Attributes);
        assert_eq!(ordered[0].answer, "He wore a red hat. He is tall, 180 cm.");
    }

    struct Failing;
    impl SentenceClassifier for Failing {
        fn classify(&self, _: &[String]) -> Result<Vec<Dimension>, ClassifierError> {
            Err(ClassifierError::Remote("connection refused".into()))
        }
    }

    #[test]
    fn failing_classifier_falls_back() {
        let out = split_description("It was raining.", &Failing);
        assert_eq!(out.sentences[0].dimension, Dimension::Environment);
        assert!(out.warning.unwrap().contains("connection refused"));
    }

    fn tuple() -> SegmentTuple {
        SegmentTuple {
            scenario_id: "s".into(),
            view_id: "v".into(),
            phase_index: 2,
            perspective: Perspective::Overhead,
            recommended: None,
            frames: vec![FrameRef { index: 0, image: "f.png".into(), pedestrian: None, vehicle: None }],
            pedestrian_caption: "He is in his 30s. He stood in front of the car. He was walking slowly. It was raining.".into(),
            vehicle_caption: String::new(),
        }
    }

    fn entry(dir: &Path) -> RenderEntry {
        std::fs::write(dir.join("g.png"), b"x").unwrap();
        std::fs::write(dir.join("l.png"), b"x").unwrap();
        RenderEntry::for_test("s/v/2", "g.png", Some("l.png"))
    }

    #[test]
    fn single_and_multi_round_assembly() {
        let dir = tempfile::tempdir().unwrap();
        let e = entry(dir.path());
        let mut opts = AssembleOptions {
            mode: DatasetMode::SingleRound,
            views: ViewSet::GlobalLocal,
            classifier: &RuleClassifier,
            image_root: dir.path(),
            parallelism: 2,
        };
        let t = tuple();
        let single = assemble_dataset([&t], std::slice::from_ref(&e), &opts);
        // long pedestrian + 4 short; vehicle caption empty
        assert_eq!(single.records.len(), 5);
        assert!(single.records.iter().all(|r| r.round_group.is_none()));
        assert_eq!(single.records[0].image_paths, ["g.png", "l.png"]);
        assert_eq!(to_conversations(&single.records).len(), 5);

        opts.mode = DatasetMode::MultiRound;
        let multi = assemble_dataset([&t], std::slice::from_ref(&e), &opts);
        assert_eq!(multi.records.len(), 5);
        let conv = to_conversations(&multi.records);
        assert_eq!(conv.len(), 1);
        assert_eq!(conv[0].conversations.len(), 10);
        assert!(conv[0].conversations[0].value.starts_with("<image>\n<image>\nThis picture"));
        assert!(!conv[0].conversations[2].value.contains("<image>"));

        let empty = assemble_dataset(std::iter::empty(), &[], &opts);
        assert!(empty.records.is_empty());
    }

    #[test]
    fn missing_image_skips_tuple() {
        let dir = tempfile::tempdir().unwrap();
        let e = RenderEntry::for_test("s/v/2", "nope.png", None);
        let opts = AssembleOptions {
            mode: DatasetMode::SingleRound,
            views: ViewSet::GlobalLocal,
            classifier: &RuleClassifier,
            image_root: dir.path(),
            parallelism: 1,
        };
        let t = tuple();
        let out = assemble_dataset([&t], &[e], &opts);
        assert!(out.records.is_empty());
        assert!(out.diagnostics[0].contains("nope.png"));
    }
}

//! Sentence-to-dimension labeling.
//!
//! The default [`RuleClassifier`] counts keyword hits per dimension over the
//! lowercased alphanumeric tokens of a sentence. The highest count wins; ties
//! are broken in the order location, motion state, environment, attributes.
//! A sentence with no hits is labeled attributes.

use std::fmt::Write as _;

use thiserror::Error;

use crate::orchestrator::{ChatClient, ChatTurn};

use super::Dimension;

pub const ATTRIBUTE_KEYWORDS: &[&str] = &[
    "age", "aged", "years", "old", "young", "elderly", "10s", "teens", "teenager", "20s", "30s", "40s", "50s",
    "60s", "70s", "80s", "male", "female", "man", "woman", "boy", "girl", "child", "height", "tall", "short",
    "cm", "wearing", "wears", "wore", "dressed", "clothing", "clothes", "jacket", "shirt", "slacks", "pants",
    "trousers", "jeans", "shorts", "skirt", "dress", "coat", "hoodie", "sweater", "hat", "cap", "glasses",
    "shoes", "sneakers", "backpack", "bag", "umbrella", "black", "white", "gray", "grey", "red", "green",
    "yellow", "brown", "navy", "beige", "pink", "purple", "orange",
];

pub const LOCATION_KEYWORDS: &[&str] = &[
    "front", "behind", "left", "right", "diagonally", "side", "near", "nearby", "close", "closest", "far",
    "distance", "position", "positioned", "located", "location", "next", "beside", "across", "opposite",
    "adjacent", "relative", "meters", "away",
];

pub const MOTION_KEYWORDS: &[&str] = &[
    "walk", "walks", "walking", "walked", "running", "ran", "standing", "stood", "stopped", "stop",
    "stationary", "moving", "moved", "move", "crossing", "crossed", "going", "went", "turning", "turned",
    "turn", "speed", "slowly", "slow", "fast", "accelerating", "decelerating", "braking", "constant",
    "straight", "waiting", "waited", "approaching", "passing", "passed", "driving", "drove", "heading",
    "direction", "oriented", "orientation", "facing", "looking", "watching", "gaze", "sight", "noticed",
    "aware", "attention",
];

pub const ENVIRONMENT_KEYWORDS: &[&str] = &[
    "weather", "clear", "cloudy", "rain", "raining", "rainy", "snow", "snowing", "sunny", "fog", "foggy",
    "brightness", "bright", "dim", "dark", "daytime", "night", "lighting", "road", "roads", "surface", "dry",
    "wet", "level", "asphalt", "paved", "traffic", "volume", "lane", "lanes", "residential", "urban",
    "street", "intersection", "crosswalk", "sidewalk", "sidewalks", "highway", "signal", "signals",
    "environment", "conditions", "buildings",
];

/// Tie-break priority, highest first.
const PRIORITY: [Dimension; 4] = [
    Dimension::Location,
    Dimension::MotionState,
    Dimension::Environment,
    Dimension::Attributes,
];

pub fn keywords(dimension: Dimension) -> &'static [&'static str] {
    match dimension {
        Dimension::Attributes => ATTRIBUTE_KEYWORDS,
        Dimension::Location => LOCATION_KEYWORDS,
        Dimension::MotionState => MOTION_KEYWORDS,
        Dimension::Environment => ENVIRONMENT_KEYWORDS,
    }
}

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("remote classifier failed: {0}")]
    Remote(String),
    #[error("remote classifier reply unusable: {0}")]
    Reply(String),
}

pub trait SentenceClassifier: Sync {
    /// One label per input sentence, same order.
    fn classify(&self, sentences: &[String]) -> Result<Vec<Dimension>, ClassifierError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RuleClassifier;

impl RuleClassifier {
    pub fn hits(sentence: &str) -> [usize; 4] {
        let lower = sentence.to_lowercase();
        let mut counts = [0usize; 4];
        for token in lower.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
            for (i, dim) in Dimension::ALL.iter().enumerate() {
                if keywords(*dim).contains(&token) {
                    counts[i] += 1;
                }
            }
        }
        counts
    }

    pub fn label(sentence: &str) -> Dimension {
        let counts = Self::hits(sentence);
        let count = |d: Dimension| counts[Dimension::ALL.iter().position(|x| *x == d).unwrap()];
        let max = counts.iter().copied().max().unwrap_or(0);
        if max == 0 {
            return Dimension::Attributes;
        }
        PRIORITY.into_iter().find(|d| count(*d) == max).expect("max is attained")
    }
}

impl SentenceClassifier for RuleClassifier {
    fn classify(&self, sentences: &[String]) -> Result<Vec<Dimension>, ClassifierError> {
        Ok(sentences.iter().map(|s| Self::label(s)).collect())
    }
}

pub const LABELING_INSTRUCTION: &str = "Please select the most appropriate label for each descriptive text from the following options, and format the output by providing the text index followed by the letter a, b, c, d, or e. Each selection should be on a new line.";

const OPTIONS: &str = "a. attributes\nb. location\nc. motion state\nd. environment\ne. none of the above";

/// Labels sentences through a chat model. Replies of `e` (or missing lines)
/// fall back to the rule table for that sentence.
pub struct RemoteClassifier<C> {
    pub client: C,
}

impl<C: ChatClient> RemoteClassifier<C> {
    pub fn prompt(sentences: &[String]) -> String {
        let mut text = format!("{LABELING_INSTRUCTION}\n\nOptions:\n{OPTIONS}\n\nTexts:\n");
        for (i, s) in sentences.iter().enumerate() {
            let _ = writeln!(text, "{}. {}", i + 1, s);
        }
        text
    }

    pub fn parse_reply(reply: &str, sentences: &[String]) -> Result<Vec<Dimension>, ClassifierError> {
        let mut labels: Vec<Option<Dimension>> = vec![None; sentences.len()];
        let mut any = false;
        for line in reply.lines() {
            let mut parts = line
                .split(|c: char| c.is_whitespace() || matches!(c, '.' | ':' | ')' | ',' | '-'))
                .filter(|p| !p.is_empty());
            let (Some(idx), Some(letter)) = (parts.next(), parts.next()) else { continue };
            let Ok(idx) = idx.parse::<usize>() else { continue };
            if idx == 0 || idx > sentences.len() {
                continue;
            }
            let dim = match letter.to_ascii_lowercase().as_str() {
                "a" => Some(Dimension::Attributes),
                "b" => Some(Dimension::Location),
                "c" => Some(Dimension::MotionState),
                "d" => Some(Dimension::Environment),
                "e" => None,
                other => return Err(ClassifierError::Reply(format!("unknown label {other:?}"))),
            };
            any = true;
            labels[idx - 1] = dim;
        }
        if !any {
            return Err(ClassifierError::Reply("no labeled lines".into()));
        }
        Ok(labels
            .into_iter()
            .zip(sentences)
            .map(|(l, s)| l.unwrap_or_else(|| RuleClassifier::label(s)))
            .collect())
    }
}

impl<C: ChatClient> SentenceClassifier for RemoteClassifier<C> {
    fn classify(&self, sentences: &[String]) -> Result<Vec<Dimension>, ClassifierError> {
        if sentences.is_empty() {
            return Ok(Vec::new());
        }
        let turns = [ChatTurn::user(Self::prompt(sentences), Vec::new())];
        let reply = self
            .client
            .chat(&turns)
            .map_err(|e| ClassifierError::Remote(e.to_string()))?;
        Self::parse_reply(&reply, sentences)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spot_labels() {
        assert_eq!(
            RuleClassifier::label("The pedestrian is in his 30s, wearing a black jacket."),
            Dimension::Attributes
        );
        assert_eq!(RuleClassifier::label("It was raining and the road was wet."), Dimension::Environment);
        assert_eq!(RuleClassifier::label("Nothing to see."), Dimension::Attributes);
    }

    #[test]
    fn ties_follow_priority() {
        // one motion hit, one environment hit
        assert_eq!(RuleClassifier::label("He was standing on the sidewalk."), Dimension::MotionState);
        // one location hit, one motion hit
        assert_eq!(RuleClassifier::label("He stood in front."), Dimension::Location);
    }

    #[test]
    fn keyword_tables_disjoint() {
        for (i, a) in Dimension::ALL.iter().enumerate() {
            for b in &Dimension::ALL[i + 1..] {
                for k in keywords(*a) {
                    assert!(!keywords(*b).contains(k), "{k} in {a:?} and {b:?}");
                }
            }
        }
    }

    #[test]
    fn remote_reply_parsing() {
        let s: Vec<String> = ["He is tall.", "It rained.", "He walked."].iter().map(|s| s.to_string()).collect();
        let labels = RemoteClassifier::<crate::orchestrator::ScriptedChat>::parse_reply("1. a\n2: d\n3 e\n", &s).unwrap();
        assert_eq!(labels, [Dimension::Attributes, Dimension::Environment, Dimension::MotionState]);
        assert!(RemoteClassifier::<crate::orchestrator::ScriptedChat>::parse_reply("sorry", &s).is_err());
        assert!(RemoteClassifier::<crate::orchestrator::ScriptedChat>::parse_reply("1 z", &s).is_err());
    }
}

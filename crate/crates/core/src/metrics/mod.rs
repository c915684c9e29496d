//! Caption metrics (BLEU-4, METEOR, ROUGE-L, CIDEr) and the composite score.
//!
//! All n-gram tables are ordered maps so floating-point sums run in the same
//! order on every run; scorecards are byte-stable.

mod bleu;
mod cider;
mod meteor;
mod rouge;
mod scorecard;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use bleu::{bleu4, BleuSmoothing};
pub use cider::{cider, CiderResult, CiderScorer, CiderVariant, CIDER_SIGMA};
pub use meteor::{meteor, meteor_alignment, Alignment, MatchKind};
pub use rouge::{lcs_len, rouge_l, ROUGE_BETA};
pub use scorecard::{evaluate_run, EvalError, GroundTruth, MetricOptions, MetricSet, ScoreCard};

/// Lowercased word tokens of a caption.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedCaption {
    pub tokens: Vec<String>,
}

impl TokenizedCaption {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn from_tokens<S: AsRef<str>>(tokens: &[S]) -> Self {
        Self { tokens: tokens.iter().map(|t| t.as_ref().to_string()).collect() }
    }
}

/// Lowercase, map every non-alphanumeric character to a space, split on
/// whitespace.
pub fn tokenize(text: &str) -> TokenizedCaption {
    let cleaned: String = text
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect::<String>()
        .to_lowercase();
    TokenizedCaption { tokens: cleaned.split_whitespace().map(str::to_string).collect() }
}

pub(crate) fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut counts = BTreeMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// `(BLEU-4 + METEOR + ROUGE-L + 0.1 * CIDEr) / 4 * 100`.
pub fn composite(bleu4: f64, meteor: f64, rouge_l: f64, cider: f64) -> f64 {
    (bleu4 + meteor + rouge_l + 0.1 * cider) / 4.0 * 100.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer() {
        assert_eq!(tokenize("A man, 30s.").tokens, ["a", "man", "30s"]);
        assert!(tokenize("").is_empty());
        let clean = tokenize("a man in his 30s");
        let joined = clean.tokens.join(" ");
        assert_eq!(tokenize(&joined), clean);
        assert_eq!(tokenize("T-shirt, 170cm").tokens, ["t", "shirt", "170cm"]);
    }

    #[test]
    fn composite_values() {
        assert!((composite(0.278, 0.477, 0.470, 1.130) - 33.45).abs() < 1e-9);
        assert!((composite(0.287, 0.483, 0.477, 1.186) - 34.14).abs() < 1e-9);
        assert!((composite(0.340, 0.531, 0.578, 1.175) - 39.1625).abs() < 1e-9);
        assert_eq!(composite(1.0, 1.0, 1.0, 10.0), 100.0);
    }

    #[test]
    fn composite_linear_and_monotone() {
        let base = composite(0.2, 0.3, 0.4, 1.0);
        assert!((composite(0.3, 0.3, 0.4, 1.0) - base - 2.5).abs() < 1e-9);
        assert!((composite(0.2, 0.3, 0.4, 2.0) - base - 2.5).abs() < 1e-9);
        assert!(composite(0.2, 0.31, 0.4, 1.0) > base);
    }
}

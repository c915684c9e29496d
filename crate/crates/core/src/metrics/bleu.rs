use serde::{Deserialize, Serialize};

use super::{ngram_counts, TokenizedCaption};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BleuSmoothing {
    /// A zero precision at any order gives 0.
    #[default]
    None,
    /// Add one to numerator and denominator for orders 2..=4.
    AddOne,
}

/// Sentence-level BLEU-4: clipped n-gram precisions, geometric mean, and the
/// brevity penalty against the reference closest in length (shorter on ties).
pub fn bleu4(hyp: &TokenizedCaption, refs: &[TokenizedCaption], smoothing: BleuSmoothing) -> f64 {
    if hyp.is_empty() || refs.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let hyp_counts = ngram_counts(&hyp.tokens, n);
        let ref_counts: Vec<_> = refs.iter().map(|r| ngram_counts(&r.tokens, n)).collect();
        let total: usize = hyp_counts.values().sum();
        let clipped: usize = hyp_counts
            .iter()
            .map(|(gram, &c)| {
                let max_ref = ref_counts.iter().map(|rc| rc.get(gram).copied().unwrap_or(0)).max().unwrap_or(0);
                c.min(max_ref)
            })
            .sum();
        let (num, den) = match smoothing {
            BleuSmoothing::AddOne if n > 1 => (clipped as f64 + 1.0, total as f64 + 1.0),
            _ => (clipped as f64, total as f64),
        };
        if num == 0.0 || den == 0.0 {
            return 0.0;
        }
        log_sum += (num / den).ln();
    }
    let c = hyp.len() as f64;
    let r = refs
        .iter()
        .map(|r| r.len())
        .min_by_key(|&len| (len.abs_diff(hyp.len()), len))
        .unwrap_or(0) as f64;
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    bp * (log_sum / 4.0).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::tokenize;

    #[test]
    fn identical_is_one() {
        let t = tokenize("the man walked across the road slowly");
        assert!((bleu4(&t, std::slice::from_ref(&t), BleuSmoothing::None) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn no_shared_four_gram_is_zero() {
        let h = tokenize("a b c d e");
        let r = tokenize("a b c x d e");
        assert_eq!(bleu4(&h, std::slice::from_ref(&r), BleuSmoothing::None), 0.0);
        assert!(bleu4(&h, &[r], BleuSmoothing::AddOne) > 0.0);
        assert_eq!(bleu4(&tokenize(""), &[h], BleuSmoothing::None), 0.0);
    }

    #[test]
    fn half_of_reference() {
        // 20 distinct tokens; every precision is 1, BP = exp(1 - 20/10)
        let r: Vec<String> = (0..20).map(|i| format!("w{i}")).collect();
        let h = TokenizedCaption::from_tokens(&r[..10]);
        let r = TokenizedCaption::from_tokens(&r);
        let got = bleu4(&h, &[r], BleuSmoothing::None);
        assert!((got - 0.367_879_441_171_442_3).abs() < 1e-12, "{got}");
    }

    #[test]
    fn closest_reference_length() {
        let h = tokenize("a b c d e f");
        let long = tokenize("a b c d e f g h");
        let short = tokenize("a b c d e f g h i j k l");
        let one = bleu4(&h, std::slice::from_ref(&long), BleuSmoothing::None);
        let both = bleu4(&h, &[short, long], BleuSmoothing::None);
        assert_eq!(one, both);
    }
}

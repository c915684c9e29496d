use super::TokenizedCaption;

/// Recall weight of the LCS F-measure, as in the COCO caption toolkit.
pub const ROUGE_BETA: f64 = 1.2;

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L with the best precision and best recall taken over references.
pub fn rouge_l(hyp: &TokenizedCaption, refs: &[TokenizedCaption]) -> f64 {
    if hyp.is_empty() || refs.is_empty() {
        return 0.0;
    }
    let (mut p_max, mut r_max) = (0.0f64, 0.0f64);
    for r in refs.iter().filter(|r| !r.is_empty()) {
        let lcs = lcs_len(&hyp.tokens, &r.tokens) as f64;
        p_max = p_max.max(lcs / hyp.len() as f64);
        r_max = r_max.max(lcs / r.len() as f64);
    }
    if p_max == 0.0 || r_max == 0.0 {
        return 0.0;
    }
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * p_max * r_max / (r_max + b2 * p_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::tokenize;

    #[test]
    fn examples() {
        let t = tokenize("a b c d");
        assert!((rouge_l(&t, std::slice::from_ref(&t)) - 1.0).abs() < 1e-12);
        assert_eq!(rouge_l(&t, &[tokenize("x y z")]), 0.0);
        assert_eq!(rouge_l(&tokenize(""), &[tokenize("")]), 0.0);

        let h = tokenize("a b c d");
        let r = tokenize("a c b d");
        assert_eq!(lcs_len(&h.tokens, &r.tokens), 3);
        // P = R = 3/4 -> F = 3/4
        assert!((rouge_l(&h, &[r]) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn asymmetric_lengths() {
        // LCS 2, P = 2/2, R = 2/4: F = 2.44 * 0.5 / (0.5 + 1.44)
        let got = rouge_l(&tokenize("a b"), &[tokenize("a x b y")]);
        assert!((got - 2.44 * 0.5 / 1.94).abs() < 1e-12);
    }
}

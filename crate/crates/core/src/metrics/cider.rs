use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ngram_counts, TokenizedCaption};

/// Width of the Gaussian length penalty in CIDEr-D.
pub const CIDER_SIGMA: f64 = 6.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiderVariant {
    /// Clipped counts and a length penalty.
    #[default]
    CiderD,
    Cider,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CiderResult {
    pub per_item: Vec<f64>,
    pub mean: f64,
    pub warning: Option<String>,
}

struct TfIdf {
    vecs: [BTreeMap<Vec<String>, f64>; 4],
    norms: [f64; 4],
    len: usize,
}

/// Document frequencies built once over the reference corpus.
#[derive(Debug, Clone)]
pub struct CiderScorer {
    df: BTreeMap<Vec<String>, usize>,
    ref_len: f64,
    items: usize,
    variant: CiderVariant,
}

impl CiderScorer {
    pub fn new(refs_per_item: &[Vec<TokenizedCaption>], variant: CiderVariant) -> Self {
        let mut df: BTreeMap<Vec<String>, usize> = BTreeMap::new();
        for refs in refs_per_item {
            let mut seen = std::collections::BTreeSet::new();
            for r in refs {
                for n in 1..=4 {
                    for gram in ngram_counts(&r.tokens, n).into_keys() {
                        seen.insert(gram.to_vec());
                    }
                }
            }
            for gram in seen {
                *df.entry(gram).or_default() += 1;
            }
        }
        let items = refs_per_item.len();
        Self { df, ref_len: (items.max(1) as f64).ln(), items, variant }
    }

    pub fn warning(&self) -> Option<String> {
        (self.items < 2).then(|| format!("CIDEr corpus has {} item(s); IDF weights are degenerate", self.items))
    }

    fn tfidf(&self, caption: &TokenizedCaption) -> TfIdf {
        let mut vecs: [BTreeMap<Vec<String>, f64>; 4] = Default::default();
        let mut norms = [0.0; 4];
        for n in 1..=4 {
            for (gram, tf) in ngram_counts(&caption.tokens, n) {
                let df = self.df.get(gram).copied().unwrap_or(0).max(1) as f64;
                let w = tf as f64 * (self.ref_len - df.ln());
                norms[n - 1] += w * w;
                vecs[n - 1].insert(gram.to_vec(), w);
            }
            norms[n - 1] = norms[n - 1].sqrt();
        }
        TfIdf { vecs, norms, len: caption.len() }
    }

    fn similarity(&self, hyp: &TfIdf, reference: &TfIdf) -> f64 {
        let delta = hyp.len as f64 - reference.len as f64;
        let mut total = 0.0;
        for n in 0..4 {
            let mut val = 0.0;
            for (gram, &h) in &hyp.vecs[n] {
                if let Some(&r) = reference.vecs[n].get(gram) {
                    val += match self.variant {
                        CiderVariant::CiderD => h.min(r) * r,
                        CiderVariant::Cider => h * r,
                    };
                }
            }
            if hyp.norms[n] != 0.0 && reference.norms[n] != 0.0 {
                val /= hyp.norms[n] * reference.norms[n];
            }
            if self.variant == CiderVariant::CiderD {
                val *= (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
            }
            total += val;
        }
        total / 4.0
    }

    /// Score of one hypothesis against its references, on the 0..=10 scale.
    pub fn score(&self, hyp: &TokenizedCaption, refs: &[TokenizedCaption]) -> f64 {
        if refs.is_empty() {
            return 0.0;
        }
        let h = self.tfidf(hyp);
        let sum: f64 = refs.iter().map(|r| self.similarity(&h, &self.tfidf(r))).sum();
        sum / refs.len() as f64 * 10.0
    }
}

/// Per-item CIDEr over a corpus; IDF comes from `refs`.
pub fn cider(hyps: &[TokenizedCaption], refs: &[Vec<TokenizedCaption>], variant: CiderVariant) -> CiderResult {
    assert_eq!(hyps.len(), refs.len(), "one reference set per hypothesis");
    let scorer = CiderScorer::new(refs, variant);
    let per_item: Vec<f64> = hyps.iter().zip(refs).map(|(h, r)| scorer.score(h, r)).collect();
    let mean = if per_item.is_empty() { 0.0 } else { per_item.iter().sum::<f64>() / per_item.len() as f64 };
    CiderResult { per_item, mean, warning: scorer.warning() }
}

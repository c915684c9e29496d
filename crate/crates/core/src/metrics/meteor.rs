//! METEOR with exact and stem matching (no synonym or paraphrase tables).
//!
//! The alignment maximizes exact matches, then stem matches among the
//! remaining words, then minimizes the number of chunks. The chunk search is
//! a depth-first branch and bound; it is exact unless the node budget runs
//! out, in which case the best alignment found so far is used.

use std::collections::HashMap;
use std::sync::OnceLock;

use rust_stemmers::{Algorithm, Stemmer};

use super::TokenizedCaption;

const NODE_BUDGET: usize = 200_000;
const ALPHA: f64 = 0.9;
const GAMMA: f64 = 0.5;
const BETA: f64 = 3.0;

fn stemmer() -> &'static Stemmer {
    static STEMMER: OnceLock<Stemmer> = OnceLock::new();
    STEMMER.get_or_init(|| Stemmer::create(Algorithm::English))
}

pub(crate) fn stem(word: &str) -> String {
    stemmer().stem(word).into_owned()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchKind {
    Exact,
    Stem,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Alignment {
    /// (hypothesis index, reference index, kind), ordered by hypothesis index.
    pub pairs: Vec<(usize, usize, MatchKind)>,
}

impl Alignment {
    pub fn matches(&self) -> usize {
        self.pairs.len()
    }

    pub fn chunks(&self) -> usize {
        if self.pairs.is_empty() {
            return 0;
        }
        1 + self
            .pairs
            .windows(2)
            .filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1))
            .count()
    }
}

struct Search<'a> {
    hyp: &'a [String],
    cands: Vec<Vec<(usize, MatchKind)>>,
    /// Remaining exact matches each hypothesis word must still make.
    need_exact: HashMap<&'a str, usize>,
    /// Hypothesis occurrences of each word at or after the current position.
    rem_hyp: HashMap<&'a str, usize>,
    stem_target: usize,
    used_ref: Vec<bool>,
    current: Vec<(usize, usize, MatchKind)>,
    stem_count: usize,
    best: Option<(usize, Vec<(usize, usize, MatchKind)>)>,
    nodes: usize,
}

impl<'a> Search<'a> {
    fn continuations(&self) -> usize {
        self.current
            .windows(2)
            .filter(|w| w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1)
            .count()
    }

    fn run(&mut self, i: usize, conts: usize) {
        self.nodes += 1;
        if self.best.is_some() && self.nodes > NODE_BUDGET {
            return;
        }
        let n = self.hyp.len();
        if let Some((best, _)) = &self.best {
            // every remaining position could at most add one continuation
            if conts + (n - i) <= *best {
                return;
            }
        }
        if i == n {
            let exact_done = self.need_exact.values().all(|&v| v == 0);
            if exact_done && self.stem_count == self.stem_target {
                self.best = Some((conts, self.current.clone()));
            }
            return;
        }
        let word = self.hyp[i].as_str();
        let need = self.need_exact[word];
        let rem = self.rem_hyp[word];
        if need > rem {
            return;
        }
        let prev = self.current.last().copied().filter(|(hi, _, _)| *hi + 1 == i);
        let mut options: Vec<(usize, MatchKind)> = self.cands[i]
            .iter()
            .copied()
            .filter(|(j, kind)| {
                !self.used_ref[*j]
                    && match kind {
                        MatchKind::Exact => need > 0,
                        MatchKind::Stem => self.stem_count < self.stem_target && need < rem,
                    }
            })
            .collect();
        let target = prev.map_or(0, |(_, j, _)| j + 1);
        options.sort_by_key(|(j, kind)| (*j != target, *kind == MatchKind::Stem, j.abs_diff(target), *j));

        *self.rem_hyp.get_mut(word).unwrap() -= 1;
        for (j, kind) in options {
            let gain = usize::from(prev.is_some_and(|(_, pj, _)| pj + 1 == j));
            self.used_ref[j] = true;
            self.current.push((i, j, kind));
            match kind {
                MatchKind::Exact => *self.need_exact.get_mut(word).unwrap() -= 1,
                MatchKind::Stem => self.stem_count += 1,
            }
            self.run(i + 1, conts + gain);
            match kind {
                MatchKind::Exact => *self.need_exact.get_mut(word).unwrap() += 1,
                MatchKind::Stem => self.stem_count -= 1,
            }
            self.current.pop();
            self.used_ref[j] = false;
        }
        // leave this position unmatched, allowed while the word's exact quota
        // can still be met later
        if need < rem {
            self.run(i + 1, conts);
        }
        *self.rem_hyp.get_mut(word).unwrap() += 1;
    }
}

/// Best alignment between `hyp` and `reference` (see module docs).
pub fn meteor_alignment(hyp: &[String], reference: &[String]) -> Alignment {
    let hyp_stems: Vec<String> = hyp.iter().map(|w| stem(w)).collect();
    let ref_stems: Vec<String> = reference.iter().map(|w| stem(w)).collect();

    let mut count_h: HashMap<&str, usize> = HashMap::new();
    let mut count_r: HashMap<&str, usize> = HashMap::new();
    for w in hyp {
        *count_h.entry(w.as_str()).or_default() += 1;
    }
    for w in reference {
        *count_r.entry(w.as_str()).or_default() += 1;
    }
    let need_exact: HashMap<&str, usize> = count_h
        .iter()
        .map(|(w, &c)| (*w, c.min(count_r.get(w).copied().unwrap_or(0))))
        .collect();

    // words left over after exact matching, grouped by stem
    let mut left_h: HashMap<&str, usize> = HashMap::new();
    let mut left_r: HashMap<&str, usize> = HashMap::new();
    for (w, &c) in &count_h {
        let extra = c - need_exact[w];
        if extra > 0 {
            let s = &hyp_stems[hyp.iter().position(|x| x == w).unwrap()];
            *left_h.entry(s.as_str()).or_default() += extra;
        }
    }
    for (w, &c) in &count_r {
        let extra = c - c.min(count_h.get(w).copied().unwrap_or(0));
        if extra > 0 {
            let s = &ref_stems[reference.iter().position(|x| x == w).unwrap()];
            *left_r.entry(s.as_str()).or_default() += extra;
        }
    }
    let stem_target: usize = left_h
        .iter()
        .map(|(s, &c)| c.min(left_r.get(s).copied().unwrap_or(0)))
        .sum();

    let cands: Vec<Vec<(usize, MatchKind)>> = hyp
        .iter()
        .enumerate()
        .map(|(i, w)| {
            reference
                .iter()
                .enumerate()
                .filter_map(|(j, r)| {
                    if r == w {
                        Some((j, MatchKind::Exact))
                    } else if ref_stems[j] == hyp_stems[i] {
                        Some((j, MatchKind::Stem))
                    } else {
                        None
                    }
                })
                .collect()
        })
        .collect();

    let mut search = Search {
        hyp,
        cands,
        need_exact,
        rem_hyp: count_h,
        stem_target,
        used_ref: vec![false; reference.len()],
        current: Vec::new(),
        stem_count: 0,
        best: None,
        nodes: 0,
    };
    search.run(0, 0);
    debug_assert!(search.current.is_empty() && search.continuations() == 0);
    Alignment { pairs: search.best.map(|(_, p)| p).unwrap_or_default() }
}

pub(crate) fn meteor_from_alignment(matches: usize, chunks: usize, hyp_len: usize, ref_len: usize) -> f64 {
    if matches == 0 {
        return 0.0;
    }
    let m = matches as f64;
    let p = m / hyp_len as f64;
    let r = m / ref_len as f64;
    let fmean = p * r / (ALPHA * p + (1.0 - ALPHA) * r);
    let penalty = GAMMA * (chunks as f64 / m).powf(BETA);
    fmean * (1.0 - penalty)
}

/// METEOR against each reference; the best score is kept.
pub fn meteor(hyp: &TokenizedCaption, refs: &[TokenizedCaption]) -> f64 {
    refs.iter()
        .map(|r| {
            let a = meteor_alignment(&hyp.tokens, &r.tokens);
            meteor_from_alignment(a.matches(), a.chunks(), hyp.len(), r.len())
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::tokenize;
    use proptest::prelude::*;

    /// Exhaustive search over all partial injections hyp -> ref.
    fn brute_force(hyp: &[String], reference: &[String]) -> (usize, usize, usize) {
        let hs: Vec<String> = hyp.iter().map(|w| stem(w)).collect();
        let rs: Vec<String> = reference.iter().map(|w| stem(w)).collect();
        let mut best: Option<(usize, usize, usize)> = None;
        let mut assign: Vec<Option<usize>> = vec![None; hyp.len()];
        fn rec(
            i: usize,
            hyp: &[String],
            reference: &[String],
            hs: &[String],
            rs: &[String],
            used: &mut Vec<bool>,
            assign: &mut Vec<Option<usize>>,
            best: &mut Option<(usize, usize, usize)>,
        ) {
            if i == hyp.len() {
                let pairs: Vec<(usize, usize)> =
                    assign.iter().enumerate().filter_map(|(h, r)| r.map(|r| (h, r))).collect();
                let exact = pairs.iter().filter(|(h, r)| hyp[*h] == reference[*r]).count();
                let stemmed = pairs.len() - exact;
                let mut chunks = usize::from(!pairs.is_empty());
                for w in pairs.windows(2) {
                    if !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1) {
                        chunks += 1;
                    }
                }
                let key = (exact, stemmed, chunks);
                let better = match best {
                    None => true,
                    Some(b) => (key.0, key.1, std::cmp::Reverse(key.2)) > (b.0, b.1, std::cmp::Reverse(b.2)),
                };
                if better {
                    *best = Some(key);
                }
                return;
            }
            rec(i + 1, hyp, reference, hs, rs, used, assign, best);
            for j in 0..reference.len() {
                if !used[j] && (hyp[i] == reference[j] || hs[i] == rs[j]) {
                    used[j] = true;
                    assign[i] = Some(j);
                    rec(i + 1, hyp, reference, hs, rs, used, assign, best);
                    assign[i] = None;
                    used[j] = false;
                }
            }
        }
        let mut used = vec![false; reference.len()];
        rec(0, hyp, reference, &hs, &rs, &mut used, &mut assign, &mut best);
        best.unwrap()
    }

    #[test]
    fn disjoint_is_zero() {
        assert_eq!(meteor(&tokenize("a b c"), &[tokenize("x y z")]), 0.0);
    }

    #[test]
    fn identical_closed_form() {
        for m in 1..8usize {
            let words: Vec<String> = (0..m).map(|i| format!("w{i}")).collect();
            let t = TokenizedCaption::from_tokens(&words);
            let expected = 1.0 - 0.5 / (m as f64).powi(3);
            assert!((meteor(&t, std::slice::from_ref(&t)) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn swapped_pair_matches_brute_force() {
        let h = tokenize("the man crossed road quickly today");
        let r = tokenize("the man road crossed quickly today");
        let a = meteor_alignment(&h.tokens, &r.tokens);
        let (exact, stemmed, chunks) = brute_force(&h.tokens, &r.tokens);
        assert_eq!((a.matches(), a.chunks()), (exact + stemmed, chunks));
        assert_eq!(chunks, 4);
    }

    #[test]
    fn stem_matches_count() {
        let a = meteor_alignment(&tokenize("he walks").tokens, &tokenize("he walked").tokens);
        assert_eq!(a.pairs, [(0, 0, MatchKind::Exact), (1, 1, MatchKind::Stem)]);
    }

    #[test]
    fn exact_preferred_over_stem() {
        // "walked" must pair exactly even though "walks" also stems to "walk"
        let a = meteor_alignment(&tokenize("walks walked").tokens, &tokenize("walked").tokens);
        assert_eq!(a.pairs, [(1, 0, MatchKind::Exact)]);
    }

    #[test]
    fn long_captions_finish() {
        let text = "the pedestrian was standing on the left side of the road and the vehicle was on the right side of the road near the pedestrian ".repeat(4);
        let h = tokenize(&text);
        let r = tokenize(&text.replace("left", "right"));
        let s = meteor(&h, &[r]);
        assert!(s > 0.9 && s <= 1.0, "{s}");
    }

    proptest! {
        #[test]
        fn small_alignments_match_brute_force(
            h in prop::collection::vec(prop::sample::select(vec!["walk", "walks", "walked", "the", "car", "cars"]), 0..6),
            r in prop::collection::vec(prop::sample::select(vec!["walk", "walks", "walked", "the", "car", "cars"]), 0..6),
        ) {
            let h: Vec<String> = h.into_iter().map(String::from).collect();
            let r: Vec<String> = r.into_iter().map(String::from).collect();
            let a = meteor_alignment(&h, &r);
            let (exact, stemmed, chunks) = brute_force(&h, &r);
            let got_exact = a.pairs.iter().filter(|p| p.2 == MatchKind::Exact).count();
            prop_assert_eq!(got_exact, exact);
            prop_assert_eq!(a.matches() - got_exact, stemmed);
            prop_assert_eq!(a.chunks(), chunks);
        }
    }
}

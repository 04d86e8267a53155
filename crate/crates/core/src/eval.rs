//! Caption metrics: BLEU@1–4 at sentence and corpus level, and positional
//! token accuracy.

use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Smoothing {
    #[default]
    None,
    /// Adds one to the matched and total counts of every order above 1.
    AddOne,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BleuReport {
    /// `bleu[k]` is BLEU@(k+1).
    pub bleu: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub candidate_len: usize,
    pub reference_len: usize,
}

impl BleuReport {
    pub fn score(&self, n: usize) -> f64 {
        self.bleu[n - 1]
    }
}

/// Pooled clipped n-gram statistics for orders 1..=4.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct Counts {
    matched: [usize; MAX_ORDER],
    total: [usize; MAX_ORDER],
    cand_len: usize,
    ref_len: usize,
}

fn ngrams<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w).or_insert(0) += 1;
        }
    }
    out
}

/// Reference length closest to `c`, preferring the shorter on ties.
fn closest_ref_len<T>(c: usize, references: &[Vec<T>]) -> usize {
    references
        .iter()
        .map(Vec::len)
        .min_by_key(|&r| (r.abs_diff(c), r))
        .unwrap_or(0)
}

fn pair_counts<T: Eq + Hash>(candidate: &[T], references: &[Vec<T>]) -> Counts {
    let mut counts = Counts {
        cand_len: candidate.len(),
        ref_len: closest_ref_len(candidate.len(), references),
        ..Counts::default()
    };
    for n in 1..=MAX_ORDER {
        let cand = ngrams(candidate, n);
        let mut max_ref: HashMap<&[T], usize> = HashMap::new();
        for r in references {
            for (g, c) in ngrams(r, n) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
        counts.total[n - 1] = candidate.len().saturating_sub(n - 1);
        counts.matched[n - 1] = cand.iter().map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0))).sum();
    }
    counts
}

fn score(counts: &Counts, n: usize, smoothing: Smoothing) -> f64 {
    if counts.cand_len == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for k in 0..n {
        let (mut m, mut t) = (counts.matched[k] as f64, counts.total[k] as f64);
        if smoothing == Smoothing::AddOne && k > 0 {
            m += 1.0;
            t += 1.0;
        }
        if m == 0.0 || t == 0.0 {
            return 0.0;
        }
        log_sum += (m / t).ln();
    }
    (brevity_penalty(counts) * (log_sum / n as f64).exp()).min(1.0)
}

fn brevity_penalty(counts: &Counts) -> f64 {
    let c = counts.cand_len.max(1) as f64;
    let r = counts.ref_len as f64;
    if c > r {
        1.0
    } else {
        (1.0 - r / c).exp()
    }
}

fn check_order(n: usize) -> Result<()> {
    if (1..=MAX_ORDER).contains(&n) {
        Ok(())
    } else {
        Err(Error::Input(format!("BLEU order must be in 1..={MAX_ORDER}, got {n}")))
    }
}

/// Sentence-level BLEU@n with uniform weights over orders 1..=n.
pub fn bleu_n<T: Eq + Hash>(candidate: &[T], references: &[Vec<T>], n: usize) -> Result<f64> {
    check_order(n)?;
    if references.is_empty() {
        return Err(Error::Input("BLEU needs at least one reference".into()));
    }
    Ok(score(&pair_counts(candidate, references), n, Smoothing::None))
}

/// Corpus BLEU: clipped counts and lengths are pooled over every pair before
/// the precisions are formed.
pub fn corpus_bleu<T: Eq + Hash>(pairs: &[(Vec<T>, Vec<Vec<T>>)], smoothing: Smoothing) -> Result<BleuReport> {
    if pairs.is_empty() {
        return Err(Error::Input("corpus BLEU needs at least one pair".into()));
    }
    let mut pooled = Counts::default();
    for (cand, refs) in pairs {
        if refs.is_empty() {
            return Err(Error::Input("every candidate needs at least one reference".into()));
        }
        let c = pair_counts(cand, refs);
        for k in 0..MAX_ORDER {
            pooled.matched[k] += c.matched[k];
            pooled.total[k] += c.total[k];
        }
        pooled.cand_len += c.cand_len;
        pooled.ref_len += c.ref_len;
    }
    Ok(BleuReport {
        bleu: std::array::from_fn(|k| score(&pooled, k + 1, smoothing)),
        brevity_penalty: brevity_penalty(&pooled),
        candidate_len: pooled.cand_len,
        reference_len: pooled.ref_len,
    })
}

/// Positional matches over the longer length; two empty sequences score 1.
pub fn token_accuracy<T: PartialEq>(candidate: &[T], reference: &[T]) -> f64 {
    let len = candidate.len().max(reference.len());
    if len == 0 {
        return 1.0;
    }
    let hits = candidate.iter().zip(reference).filter(|(a, b)| a == b).count();
    hits as f64 / len as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn identical_is_one() {
        let s = toks("a man is playing a guitar");
        for n in 1..=4 {
            assert_eq!(bleu_n(&s, &[s.clone()], n).unwrap(), 1.0);
        }
    }

    #[test]
    fn clipped_unigram() {
        let b = bleu_n(&toks("a a a"), &[toks("a")], 1).unwrap();
        assert!((b - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn no_overlap_and_empty() {
        assert_eq!(bleu_n(&toks("x y z"), &[toks("a b c")], 1).unwrap(), 0.0);
        assert_eq!(bleu_n(&toks(""), &[toks("a b c")], 2).unwrap(), 0.0);
        assert!(bleu_n(&toks("a"), &[], 1).is_err());
        assert!(bleu_n(&toks("a"), &[toks("a")], 5).is_err());
        assert!(corpus_bleu::<String>(&[], Smoothing::None).is_err());
    }

    #[test]
    fn brevity_penalty_applies() {
        let b = bleu_n(&toks("a b"), &[toks("a b c d")], 1).unwrap();
        assert!((b - (1.0f64 - 2.0).exp()).abs() < 1e-15);
    }

    #[test]
    fn multiple_references_clip_by_max() {
        let b = bleu_n(&toks("the the cat"), &[toks("the cat sat"), toks("the the dog")], 1).unwrap();
        assert!((b - 1.0).abs() < 1e-15);
    }

    #[test]
    fn single_pair_corpus_matches_sentence() {
        let cand = toks("a cat sits on the mat today");
        let refs = vec![toks("the cat sits on the mat"), toks("a cat is on a mat")];
        let report = corpus_bleu(&[(cand.clone(), refs.clone())], Smoothing::None).unwrap();
        for n in 1..=4 {
            assert_eq!(report.score(n), bleu_n(&cand, &refs, n).unwrap());
        }
    }

    #[test]
    fn add_one_smoothing_rescues_zero_orders() {
        let pairs = vec![(toks("a b"), vec![toks("a c")])];
        assert_eq!(corpus_bleu(&pairs, Smoothing::None).unwrap().score(2), 0.0);
        assert!(corpus_bleu(&pairs, Smoothing::AddOne).unwrap().score(2) > 0.0);
    }

    #[test]
    fn token_accuracy_examples() {
        assert_eq!(token_accuracy(&toks("a b c"), &toks("a b c")), 1.0);
        assert_eq!(token_accuracy(&toks("a b"), &toks("c d")), 0.0);
        assert!((token_accuracy(&toks("a b c"), &toks("a x c")) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(token_accuracy::<String>(&[], &[]), 1.0);
        assert_eq!(token_accuracy(&toks("a"), &toks("a b")), 0.5);
    }

    fn sentence() -> impl Strategy<Value = Vec<u8>> {
        proptest::collection::vec(0u8..5, 0..10)
    }

    proptest! {
        #[test]
        fn scores_in_unit_interval(c in sentence(), r in proptest::collection::vec(sentence(), 1..3), n in 1usize..=4) {
            let b = bleu_n(&c, &r, n).unwrap();
            prop_assert!((0.0..=1.0).contains(&b));
        }

        #[test]
        fn relabeling_invariance(c in sentence(), r in proptest::collection::vec(sentence(), 1..3), shift in 1u8..50) {
            let relabel = |s: &Vec<u8>| s.iter().map(|t| t.wrapping_mul(3).wrapping_add(shift)).collect::<Vec<u8>>();
            let r2: Vec<Vec<u8>> = r.iter().map(relabel).collect();
            for n in 1..=4 {
                prop_assert_eq!(bleu_n(&c, &r, n).unwrap(), bleu_n(&relabel(&c), &r2, n).unwrap());
            }
        }

        #[test]
        fn corpus_order_invariance(pairs in proptest::collection::vec((sentence(), proptest::collection::vec(sentence(), 1..3)), 1..6)) {
            let mut rev = pairs.clone();
            rev.reverse();
            prop_assert_eq!(corpus_bleu(&pairs, Smoothing::None).unwrap(), corpus_bleu(&rev, Smoothing::None).unwrap());
        }

        #[test]
        fn corpus_identity_is_one(cs in proptest::collection::vec(proptest::collection::vec(0u8..5, 4..10), 1..6)) {
            let pairs: Vec<_> = cs.iter().map(|c| (c.clone(), vec![c.clone()])).collect();
            let report = corpus_bleu(&pairs, Smoothing::None).unwrap();
            prop_assert_eq!(report.bleu, [1.0; 4]);
        }
    }
}

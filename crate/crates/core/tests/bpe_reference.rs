mod common;

use std::collections::HashMap;

use anchormt::corpus::{Lang, SentenceTokens};
use anchormt::subword::learn_bpe;
use proptest::prelude::*;

#[test]
fn toy_corpus_merges_match_reference_learner() {
    assert!(common::bpe_matches_reference());
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn random_corpora_merges_match_reference_learner(
        lines in prop::collection::vec(prop::collection::vec("[abc]{1,6}", 1..8), 1..10),
        merges in 0usize..30,
    ) {
        let corpus: Vec<SentenceTokens> = lines.iter().map(|l| SentenceTokens::raw(l.clone(), Lang::Src)).collect();
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for w in lines.iter().flatten() {
            *counts.entry(w.as_str()).or_insert(0) += 1;
        }
        let words: Vec<(&str, u64)> = counts.into_iter().collect();
        let codec = learn_bpe(&[&corpus], &[], merges).unwrap();
        let expected = common::reference_bpe(&words, merges);
        prop_assert_eq!(codec.merges(), expected.as_slice());
    }
}

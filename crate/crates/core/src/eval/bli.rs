//! Bilingual lexicon induction precision, and word spaces read off a model's
//! shared embedding table.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::baselines::csls::{CslsIndex, DEFAULT_KNN};
use crate::baselines::embeddings::EmbeddingSpace;
use crate::dictionary::BilingualDictionary;
use crate::error::{data_err, Result};
use crate::model::SeqModel;
use crate::subword::BpeCodec;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PrecisionReport {
    /// k → percentage of queries whose gold translation is among the top k.
    pub p_at: BTreeMap<usize, f64>,
    pub num_queries: usize,
    /// Test pairs skipped because a word is missing from its space.
    pub out_of_vocab: usize,
}

/// CSLS retrieval of each test source word among all target words.
pub fn bli_precision(
    test: &BilingualDictionary,
    src: &EmbeddingSpace,
    tgt: &EmbeddingSpace,
    ks: &[usize],
) -> Result<PrecisionReport> {
    let queries: Vec<(usize, &str)> = test
        .map
        .iter()
        .filter_map(|(s, t)| Some((*src.index.get(s)?, tgt.index.get(t).map(|_| t.as_str())?)))
        .collect();
    let out_of_vocab = test.entry_count() - queries.len();
    if queries.is_empty() {
        return data_err("no test pair has both words in vocabulary");
    }
    let kmax = ks.iter().copied().max().unwrap_or(1).min(tgt.len());
    let index = CslsIndex::new(src, tgt, DEFAULT_KNN)?;
    let mut hits: BTreeMap<usize, usize> = ks.iter().map(|&k| (k, 0)).collect();
    for (row, gold) in &queries {
        let ranked = index.neighbors(*row, kmax)?;
        if let Some(rank) = ranked.iter().position(|(w, _)| w == gold) {
            for (&k, h) in hits.iter_mut() {
                if rank < k {
                    *h += 1;
                }
            }
        }
    }
    let n = queries.len();
    Ok(PrecisionReport {
        p_at: hits.into_iter().map(|(k, h)| (k, 100.0 * h as f64 / n as f64)).collect(),
        num_queries: n,
        out_of_vocab,
    })
}

/// Mean of the embedding rows of a word's units.
pub fn word_vector(model: &SeqModel, codec: &BpeCodec, word: &str) -> Vec<f32> {
    let d = model.config.model_dim;
    let table = model.store.get(model.layout.embed).data();
    let ids = codec.encode_word(word);
    let mut v = vec![0f32; d];
    for &id in &ids {
        for (a, b) in v.iter_mut().zip(&table[id * d..(id + 1) * d]) {
            *a += b;
        }
    }
    let n = ids.len().max(1) as f32;
    v.iter_mut().for_each(|a| *a /= n);
    v
}

/// The model's embedding table as a word space over `words` (duplicates dropped).
pub fn model_space<'a>(model: &SeqModel, codec: &BpeCodec, words: impl IntoIterator<Item = &'a str>) -> Result<EmbeddingSpace> {
    let mut seen = std::collections::HashSet::new();
    let mut kept = Vec::new();
    let mut matrix = Vec::new();
    for w in words {
        if seen.insert(w) {
            kept.push(w.to_owned());
            matrix.extend(word_vector(model, codec, w).into_iter().map(f64::from));
        }
    }
    EmbeddingSpace::new(kept, model.config.model_dim, matrix)
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::corpus::Lang;
    use crate::rng;

    fn space(words: &[String], d: usize, seed: u64) -> EmbeddingSpace {
        let mut r = rng::stream(seed, "bli");
        EmbeddingSpace::new(words.to_vec(), d, (0..words.len() * d).map(|_| r.random::<f64>() - 0.5).collect()).unwrap()
    }

    #[test]
    fn identical_spaces_with_identity_dictionary_score_100() {
        let words: Vec<String> = (0..50).map(|i| format!("w{i}")).collect();
        let s = space(&words, 8, 1);
        let d = BilingualDictionary::from_pairs((Lang::Src, Lang::Tgt), words.iter().map(|w| (w.clone(), w.clone())));
        let r = bli_precision(&d, &s, &s, &[1, 5, 10]).unwrap();
        assert_eq!(r.p_at[&1], 100.0);
        assert_eq!(r.num_queries, 50);
    }

    #[test]
    fn random_spaces_are_near_chance() {
        let sw: Vec<String> = (0..1000).map(|i| format!("s{i}")).collect();
        let tw: Vec<String> = (0..1000).map(|i| format!("t{i}")).collect();
        let s = space(&sw, 16, 2);
        let t = space(&tw, 16, 3);
        let d = BilingualDictionary::from_pairs((Lang::Src, Lang::Tgt), sw.iter().cloned().zip(tw.iter().cloned()));
        let r = bli_precision(&d, &s, &t, &[1, 5, 10]).unwrap();
        assert!((r.p_at[&1] - 0.1).abs() <= 0.5, "{:?}", r.p_at);
        assert!(r.p_at[&1] <= r.p_at[&5] && r.p_at[&5] <= r.p_at[&10]);
    }

    #[test]
    fn out_of_vocab_queries_are_counted() {
        let words: Vec<String> = (0..20).map(|i| format!("w{i}")).collect();
        let s = space(&words, 4, 4);
        let d = BilingualDictionary::from_pairs((Lang::Src, Lang::Tgt), [("w1", "w1"), ("zz", "w2"), ("w3", "yy")]);
        let r = bli_precision(&d, &s, &s, &[1]).unwrap();
        assert_eq!((r.num_queries, r.out_of_vocab), (1, 2));
        let none = BilingualDictionary::from_pairs((Lang::Src, Lang::Tgt), [("zz", "yy")]);
        assert!(bli_precision(&none, &s, &s, &[1]).is_err());
    }
}

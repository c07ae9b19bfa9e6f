//! Word-by-word dictionary translation, monolingual word embeddings, their
//! supervised orthogonal alignment, and CSLS retrieval.

pub mod csls;
pub mod embeddings;
pub mod swet;

use crate::corpus::SentenceTokens;
use crate::dictionary::{anchor_sentence, BilingualDictionary};

/// Replaces covered words by their dictionary translation and copies the
/// rest, keeping word order. The result is tagged with the dictionary's target language.
pub fn word_by_word(s: &SentenceTokens, dict: &BilingualDictionary) -> SentenceTokens {
    let a = anchor_sentence(s, dict);
    SentenceTokens::raw(a.tokens, dict.direction.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Lang;

    #[test]
    fn word_by_word_replaces_covered_words_and_keeps_length() {
        let d = BilingualDictionary::from_pairs((Lang::Src, Lang::Tgt), [("a", "x"), ("c", "z")]);
        let s = SentenceTokens::from_line("a b c a", Lang::Src);
        let t = word_by_word(&s, &d);
        assert_eq!(t.tokens, ["x", "b", "z", "x"]);
        assert_eq!(t.lang, Lang::Tgt);
        assert!(t.anchor_mask.iter().all(|f| !f));
        assert_eq!(t.tokens, anchor_sentence(&s, &d).tokens);
        let empty = BilingualDictionary::new((Lang::Src, Lang::Tgt));
        assert_eq!(word_by_word(&s, &empty).tokens, s.tokens);
    }
}

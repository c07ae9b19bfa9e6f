//! Synthetic language pair: a word cipher plus bounded class-based reordering
//! over latent Zipfian sentences, with a known full dictionary.

use std::collections::{BTreeSet, HashSet};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{build_freq_table, Lang, SentenceTokens};
use crate::dictionary::BilingualDictionary;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub vocab_size: usize,
    /// Training sentences per side.
    pub sentence_count: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Maximum displacement of a word between a latent sentence and its target image.
    pub reorder_window: usize,
    pub dict_coverage: f64,
    /// Sentences in each of the validation and test sets.
    pub heldout_count: usize,
    pub zipf_exponent: f64,
    /// Probability that the next word comes from the current word's successors.
    pub successor_prob: f64,
    pub successors_per_word: usize,
    /// Fraction of latent words that move behind their neighbours in the target language.
    pub modifier_fraction: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            vocab_size: 500,
            sentence_count: 20_000,
            min_len: 5,
            max_len: 15,
            reorder_window: 2,
            dict_coverage: 0.5,
            heldout_count: 500,
            zipf_exponent: 1.1,
            successor_prob: 0.7,
            successors_per_word: 4,
            modifier_fraction: 0.3,
            seed: 1,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("invalid synthetic pair settings: {m}")));
        if !(self.dict_coverage > 0.0 && self.dict_coverage <= 1.0) {
            return bad("dict_coverage must lie in (0, 1]");
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad("length range must satisfy 0 < min_len <= max_len");
        }
        if self.vocab_size < 2 || self.successors_per_word == 0 {
            return bad("vocab_size must be at least 2 and successors_per_word positive");
        }
        if !(0.0..=1.0).contains(&self.successor_prob) || !(0.0..=1.0).contains(&self.modifier_fraction) {
            return bad("probabilities must lie in [0, 1]");
        }
        if (self.dict_coverage * self.vocab_size as f64).round() < 1.0 {
            return bad("vocabulary too small for the requested dictionary coverage");
        }
        Ok(())
    }
}

pub struct SynthPair {
    pub src: Vec<SentenceTokens>,
    pub tgt: Vec<SentenceTokens>,
    /// The exact cipher, source → target.
    pub full_dict: BilingualDictionary,
    /// Partial dictionary at the requested coverage.
    pub dict: BilingualDictionary,
    pub valid: Vec<(SentenceTokens, SentenceTokens)>,
    pub test: Vec<(SentenceTokens, SentenceTokens)>,
}

/// The generative model behind a synthetic pair.
pub struct Grammar {
    pub src_words: Vec<String>,
    pub tgt_words: Vec<String>,
    pub modifier: Vec<bool>,
    reorder_window: usize,
    unigram: WeightedIndex<f64>,
    successors: Vec<(Vec<usize>, WeightedIndex<f64>)>,
    successor_prob: f64,
    min_len: usize,
    max_len: usize,
}

fn random_word<R: Rng>(r: &mut R, letters: std::ops::RangeInclusive<u8>, seen: &mut HashSet<String>) -> String {
    loop {
        let len = r.random_range(2..=4);
        let w: String = (0..len).map(|_| r.random_range(letters.clone()) as char).collect();
        if seen.insert(w.clone()) {
            return w;
        }
    }
}

impl Grammar {
    pub fn new(spec: &SynthSpec) -> Result<Self> {
        spec.validate()?;
        let v = spec.vocab_size;
        let mut r = rng::stream(spec.seed, "synth.grammar");
        let mut seen = HashSet::new();
        let src_words = (0..v).map(|_| random_word(&mut r, b'a'..=b'm', &mut seen)).collect();
        let tgt_words = (0..v).map(|_| random_word(&mut r, b'n'..=b'z', &mut seen)).collect();
        let modifier = (0..v).map(|_| r.random_bool(spec.modifier_fraction)).collect();
        let weights: Vec<f64> = (1..=v).map(|k| (k as f64).powf(-spec.zipf_exponent)).collect();
        let unigram = WeightedIndex::new(&weights).map_err(|e| Error::Config(e.to_string()))?;
        let k = spec.successors_per_word.min(v);
        let successors = (0..v)
            .map(|_| {
                let mut next = BTreeSet::new();
                while next.len() < k {
                    next.insert(unigram.sample(&mut r));
                }
                let next: Vec<usize> = next.into_iter().collect();
                let w: Vec<f64> = next.iter().map(|&i| weights[i]).collect();
                let dist = WeightedIndex::new(&w).expect("positive weights");
                (next, dist)
            })
            .collect();
        Ok(Self {
            src_words,
            tgt_words,
            modifier,
            reorder_window: spec.reorder_window,
            unigram,
            successors,
            successor_prob: spec.successor_prob,
            min_len: spec.min_len,
            max_len: spec.max_len,
        })
    }

    pub fn sample_latent<R: Rng>(&self, r: &mut R) -> Vec<usize> {
        let len = r.random_range(self.min_len..=self.max_len);
        let mut s = Vec::with_capacity(len);
        s.push(self.unigram.sample(r));
        while s.len() < len {
            let prev = *s.last().expect("non-empty");
            let next = if r.random_bool(self.successor_prob) {
                let (ids, dist) = &self.successors[prev];
                ids[dist.sample(r)]
            } else {
                self.unigram.sample(r)
            };
            s.push(next);
        }
        s
    }

    /// Target word order: within consecutive blocks of `reorder_window + 1`
    /// words, non-modifiers keep their order and modifiers follow them.
    pub fn reorder(&self, latent: &[usize]) -> Vec<usize> {
        let mut out = Vec::with_capacity(latent.len());
        for block in latent.chunks(self.reorder_window + 1) {
            out.extend(block.iter().filter(|&&w| !self.modifier[w]));
            out.extend(block.iter().filter(|&&w| self.modifier[w]));
        }
        out
    }

    pub fn source_sentence(&self, latent: &[usize]) -> SentenceTokens {
        SentenceTokens::raw(latent.iter().map(|&w| self.src_words[w].clone()).collect(), Lang::Src)
    }

    pub fn target_sentence(&self, latent: &[usize]) -> SentenceTokens {
        SentenceTokens::raw(
            self.reorder(latent).iter().map(|&w| self.tgt_words[w].clone()).collect(),
            Lang::Tgt,
        )
    }

    pub fn full_dictionary(&self) -> BilingualDictionary {
        BilingualDictionary::from_pairs(
            (Lang::Src, Lang::Tgt),
            self.src_words.iter().cloned().zip(self.tgt_words.iter().cloned()),
        )
    }
}

/// Picks dictionary entries by word type so that the kept entries cover
/// `coverage` of the tokens in `corpus` while stepping evenly through the
/// frequency ranking. A type is kept when doing so leaves the covered mass no
/// further above its target than half the type's own mass.
pub fn sample_partial_dictionary(
    full: &BilingualDictionary,
    corpus: &[SentenceTokens],
    coverage: f64,
) -> Result<BilingualDictionary> {
    if !(coverage > 0.0 && coverage <= 1.0) {
        return Err(Error::Config(format!("dictionary coverage {coverage} outside (0, 1]")));
    }
    if coverage == 1.0 {
        return Ok(full.clone());
    }
    let freq = build_freq_table(corpus);
    let ranked: Vec<(&str, u64)> = freq.by_frequency().into_iter().filter(|(w, _)| full.lookup(w).is_some()).collect();
    let mut kept = Vec::new();
    let mut seen = 0.0;
    let mut covered = 0.0;
    for &(w, c) in &ranked {
        let c = c as f64;
        seen += c;
        if covered + c / 2.0 <= coverage * seen {
            covered += c;
            kept.push(w);
        }
    }
    // Types absent from the corpus are sampled at the same type rate.
    let present: HashSet<&str> = ranked.iter().map(|(w, _)| *w).collect();
    let mut acc = 0.0;
    for w in full.map.keys().filter(|w| !present.contains(w.as_str())) {
        acc += coverage;
        if acc >= 1.0 {
            acc -= 1.0;
            kept.push(w);
        }
    }
    if kept.is_empty() {
        return Err(Error::Config("vocabulary too small for the requested dictionary coverage".into()));
    }
    Ok(full.restricted(kept))
}

fn parallel_pair(g: &Grammar, latent: &[usize]) -> (SentenceTokens, SentenceTokens) {
    (g.source_sentence(latent), g.target_sentence(latent))
}

/// Generates training corpora from disjoint latent halves, the full cipher,
/// a partial dictionary sampled against the source corpus, and heldout
/// parallel sets whose latent sentences appear in neither half.
pub fn generate_pair(spec: &SynthSpec) -> Result<SynthPair> {
    let g = Grammar::new(spec)?;
    let mut r = rng::stream(spec.seed, "synth.sentences");
    let wanted = 2 * spec.sentence_count + 2 * spec.heldout_count;
    // Distinct latent sentences can share a target image, so both are deduplicated.
    let mut seen: HashSet<Vec<usize>> = HashSet::with_capacity(wanted);
    let mut seen_images: HashSet<Vec<usize>> = HashSet::with_capacity(wanted);
    let mut latent = Vec::with_capacity(wanted);
    let mut attempts = 0usize;
    while latent.len() < wanted {
        attempts += 1;
        if attempts > 50 * wanted + 1000 {
            return Err(Error::Config("grammar cannot produce enough distinct sentences".into()));
        }
        let s = g.sample_latent(&mut r);
        if !seen.contains(&s) && seen_images.insert(g.reorder(&s)) {
            seen.insert(s.clone());
            latent.push(s);
        }
    }
    let (train, heldout) = latent.split_at(2 * spec.sentence_count);
    let (src_half, tgt_half) = train.split_at(spec.sentence_count);
    let src: Vec<SentenceTokens> = src_half.iter().map(|s| g.source_sentence(s)).collect();
    let tgt = tgt_half.iter().map(|s| g.target_sentence(s)).collect();
    let (valid, test) = heldout.split_at(spec.heldout_count);
    let full_dict = g.full_dictionary();
    let dict = sample_partial_dictionary(&full_dict, &src, spec.dict_coverage)?;
    Ok(SynthPair {
        src,
        tgt,
        full_dict,
        dict,
        valid: valid.iter().map(|s| parallel_pair(&g, s)).collect(),
        test: test.iter().map(|s| parallel_pair(&g, s)).collect(),
    })
}

//! Joint byte-pair encoding with `@@` continuation markers.
//!
//! Units are stored in display form: a unit that does not end a word carries a
//! trailing `@@` (`"ab@@"`), a word-final unit does not (`"c"`). Merging `l` and
//! `r` yields `l` without its marker followed by `r`, so one symbol table serves
//! both learning and rendering.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Lang, SentenceTokens};
use crate::error::{data_err, io_err, Result};

pub const CONTINUATION: &str = "@@";

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const MASK: usize = 4;
pub const NUM_SPECIALS: usize = 5;
pub const SPECIAL_NAMES: [&str; NUM_SPECIALS] = ["<pad>", "<s>", "</s>", "<unk>", "<mask>"];

pub const DEFAULT_MAX_LEN: usize = 100;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialIds {
    pub pad: usize,
    pub bos: usize,
    pub eos: usize,
    pub unk: usize,
    pub mask: usize,
}

impl Default for SpecialIds {
    fn default() -> Self {
        Self {
            pad: PAD,
            bos: BOS,
            eos: EOS,
            unk: UNK,
            mask: MASK,
        }
    }
}

/// Subword ids of one sentence plus the anchor flag of the word each unit came from.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct IdSequence {
    pub ids: Vec<usize>,
    pub anchor_mask: Vec<bool>,
}

impl IdSequence {
    pub fn plain(ids: Vec<usize>) -> Self {
        let anchor_mask = vec![false; ids.len()];
        Self { ids, anchor_mask }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn truncate(&mut self, n: usize) {
        self.ids.truncate(n);
        self.anchor_mask.truncate(n);
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CodecFile {
    merges: Vec<(String, String)>,
    units: Vec<String>,
    frequencies: Vec<u64>,
    specials: SpecialIds,
    max_len: usize,
}

#[derive(Clone, Debug)]
pub struct BpeCodec {
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
    /// Non-special units; unit `i` has id `NUM_SPECIALS + i`.
    units: Vec<String>,
    unit_ids: HashMap<String, usize>,
    frequencies: Vec<u64>,
    inventory: usize,
    pub specials: SpecialIds,
    pub max_len: usize,
}

fn initial_symbols(word: &str) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    chars
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if i + 1 < chars.len() {
                format!("{c}{CONTINUATION}")
            } else {
                c.to_string()
            }
        })
        .collect()
}

pub fn merge_symbols(left: &str, right: &str) -> String {
    let stem = left.strip_suffix(CONTINUATION).unwrap_or(left);
    format!("{stem}{right}")
}

/// Learns `num_merges` merges over the word counts of all given corpora plus
/// `extra_words` (each counted once). Each step merges the most frequent adjacent
/// pair, ties to the lexicographically smallest pair; learning stops early when no
/// pair occurs at least twice.
pub fn learn_bpe(
    corpora: &[&[SentenceTokens]],
    extra_words: &[&str],
    num_merges: usize,
) -> Result<BpeCodec> {
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for corpus in corpora {
        for s in corpus.iter() {
            for w in &s.tokens {
                *counts.entry(w).or_insert(0) += 1;
            }
        }
    }
    for w in extra_words {
        if !w.is_empty() {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    if counts.is_empty() {
        return data_err("cannot learn BPE from empty corpora");
    }
    let mut word_list: Vec<(&str, u64)> = counts.into_iter().collect();
    word_list.sort_unstable();

    let mut sym_names: Vec<String> = Vec::new();
    let mut sym_ids: HashMap<String, u32> = HashMap::new();
    let mut intern = |s: String, names: &mut Vec<String>| -> u32 {
        if let Some(&i) = sym_ids.get(&s) {
            return i;
        }
        let i = names.len() as u32;
        sym_ids.insert(s.clone(), i);
        names.push(s);
        i
    };

    let mut words: Vec<Vec<u32>> = Vec::with_capacity(word_list.len());
    let freqs: Vec<i64> = word_list.iter().map(|&(_, c)| c as i64).collect();
    let mut inventory = BTreeSet::new();
    for &(w, _) in &word_list {
        let syms = initial_symbols(w);
        inventory.extend(syms.iter().cloned());
        words.push(syms.into_iter().map(|s| intern(s, &mut sym_names)).collect());
    }

    let mut pair_counts: HashMap<(u32, u32), i64> = HashMap::new();
    let mut where_: HashMap<(u32, u32), HashSet<usize>> = HashMap::new();
    for (wi, syms) in words.iter().enumerate() {
        for p in syms.windows(2) {
            *pair_counts.entry((p[0], p[1])).or_insert(0) += freqs[wi];
            where_.entry((p[0], p[1])).or_default().insert(wi);
        }
    }
    type HeapKey = (i64, Reverse<(String, String)>, (u32, u32));
    let key = |p: (u32, u32), c: i64, names: &[String]| -> HeapKey {
        (c, Reverse((names[p.0 as usize].clone(), names[p.1 as usize].clone())), p)
    };
    let mut heap: BinaryHeap<HeapKey> = pair_counts
        .iter()
        .map(|(&p, &c)| key(p, c, &sym_names))
        .collect();

    let mut merges = Vec::new();
    while merges.len() < num_merges {
        let Some((c, _, pair)) = heap.pop() else { break };
        if pair_counts.get(&pair).copied().unwrap_or(0) != c {
            continue;
        }
        if c < 2 {
            break;
        }
        let merged_name = merge_symbols(&sym_names[pair.0 as usize], &sym_names[pair.1 as usize]);
        merges.push((sym_names[pair.0 as usize].clone(), sym_names[pair.1 as usize].clone()));
        let merged = intern(merged_name, &mut sym_names);

        let mut affected: Vec<usize> = where_.remove(&pair).unwrap_or_default().into_iter().collect();
        affected.sort_unstable();
        let mut changed: HashSet<(u32, u32)> = HashSet::new();
        for wi in affected {
            let f = freqs[wi];
            let old = std::mem::take(&mut words[wi]);
            for p in old.windows(2) {
                let k = (p[0], p[1]);
                *pair_counts.get_mut(&k).expect("pair counted") -= f;
                changed.insert(k);
            }
            let mut new = Vec::with_capacity(old.len());
            let mut i = 0;
            while i < old.len() {
                if i + 1 < old.len() && (old[i], old[i + 1]) == pair {
                    new.push(merged);
                    i += 2;
                } else {
                    new.push(old[i]);
                    i += 1;
                }
            }
            for p in new.windows(2) {
                let k = (p[0], p[1]);
                *pair_counts.entry(k).or_insert(0) += f;
                where_.entry(k).or_default().insert(wi);
                changed.insert(k);
            }
            words[wi] = new;
        }
        let mut changed: Vec<_> = changed.into_iter().collect();
        changed.sort_unstable();
        for k in changed {
            let c = pair_counts.get(&k).copied().unwrap_or(0);
            if c <= 0 {
                pair_counts.remove(&k);
            } else {
                heap.push(key(k, c, &sym_names));
            }
        }
    }

    let mut codec = BpeCodec::from_parts(merges, inventory.into_iter().collect(), None, DEFAULT_MAX_LEN)?;
    let mut freq = vec![0u64; codec.units.len()];
    for &(w, c) in &word_list {
        for id in codec.encode_word(w) {
            if id >= NUM_SPECIALS {
                freq[id - NUM_SPECIALS] += c;
            }
        }
    }
    codec.frequencies = freq;
    Ok(codec)
}

impl BpeCodec {
    /// Builds the codec from a merge table and the initial symbol inventory.
    /// Merge results that repeat an existing unit do not get a second id.
    fn from_parts(
        merges: Vec<(String, String)>,
        inventory: Vec<String>,
        frequencies: Option<Vec<u64>>,
        max_len: usize,
    ) -> Result<Self> {
        let mut units = Vec::new();
        let mut unit_ids = HashMap::new();
        for u in inventory.iter().cloned().chain(merges.iter().map(|(l, r)| merge_symbols(l, r))) {
            if !unit_ids.contains_key(&u) {
                unit_ids.insert(u.clone(), NUM_SPECIALS + units.len());
                units.push(u);
            }
        }
        let mut ranks = HashMap::new();
        for (i, m) in merges.iter().enumerate() {
            ranks.entry(m.clone()).or_insert(i);
        }
        let n = units.len();
        Ok(Self {
            merges,
            ranks,
            units,
            unit_ids,
            frequencies: frequencies.unwrap_or_else(|| vec![0; n]),
            inventory: inventory.len(),
            specials: SpecialIds::default(),
            max_len,
        })
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn vocab_size(&self) -> usize {
        NUM_SPECIALS + self.units.len()
    }

    /// Number of distinct initial (character-level) units.
    pub fn inventory_size(&self) -> usize {
        self.inventory
    }

    pub fn id(&self, unit: &str) -> Option<usize> {
        self.unit_ids.get(unit).copied()
    }

    pub fn unit(&self, id: usize) -> Option<&str> {
        if id < NUM_SPECIALS {
            Some(SPECIAL_NAMES[id])
        } else {
            self.units.get(id - NUM_SPECIALS).map(String::as_str)
        }
    }

    pub fn is_special(&self, id: usize) -> bool {
        id < NUM_SPECIALS
    }

    /// Units of one word, replaying merges lowest rank first.
    pub fn segment_word(&self, word: &str) -> Vec<String> {
        let mut syms = initial_symbols(word);
        loop {
            let best = syms
                .windows(2)
                .enumerate()
                .filter_map(|(i, p)| {
                    self.ranks
                        .get(&(p[0].clone(), p[1].clone()))
                        .map(|&r| (r, i))
                })
                .min();
            let Some((rank, _)) = best else { break };
            let (l, r) = &self.merges[rank];
            let mut out = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && &syms[i] == l && &syms[i + 1] == r {
                    out.push(merge_symbols(l, r));
                    i += 2;
                } else {
                    out.push(std::mem::take(&mut syms[i]));
                    i += 1;
                }
            }
            syms = out;
        }
        syms
    }

    pub fn encode_word(&self, word: &str) -> Vec<usize> {
        self.segment_word(word)
            .iter()
            .map(|u| self.id(u).unwrap_or(self.specials.unk))
            .collect()
    }

    /// Segments a sentence; anchor flags spread to every unit of a flagged word.
    /// Output beyond `max_len` units is dropped.
    pub fn apply(&self, s: &SentenceTokens) -> IdSequence {
        let mut out = IdSequence::default();
        for (w, &flag) in s.tokens.iter().zip(&s.anchor_mask) {
            for id in self.encode_word(w) {
                out.ids.push(id);
                out.anchor_mask.push(flag);
            }
            if out.len() >= self.max_len {
                break;
            }
        }
        out.truncate(self.max_len);
        out
    }

    /// Inverse of [`BpeCodec::apply`]: joins units at `@@` markers and drops
    /// special ids. A word is flagged when its first unit is.
    pub fn detokenize(&self, seq: &IdSequence, lang: Lang) -> Result<SentenceTokens> {
        let mut tokens = Vec::new();
        let mut mask = Vec::new();
        let mut cur = String::new();
        let mut cur_flag = None;
        for (i, &id) in seq.ids.iter().enumerate() {
            if id >= self.vocab_size() {
                return data_err(format!("subword id {id} outside vocabulary of {}", self.vocab_size()));
            }
            if self.is_special(id) {
                continue;
            }
            let unit = &self.units[id - NUM_SPECIALS];
            let flag = seq.anchor_mask.get(i).copied().unwrap_or(false);
            cur_flag.get_or_insert(flag);
            match unit.strip_suffix(CONTINUATION) {
                Some(stem) => cur.push_str(stem),
                None => {
                    cur.push_str(unit);
                    tokens.push(std::mem::take(&mut cur));
                    mask.push(cur_flag.take().unwrap_or(false));
                }
            }
        }
        if !cur.is_empty() {
            tokens.push(cur);
            mask.push(cur_flag.unwrap_or(false));
        }
        Ok(SentenceTokens {
            tokens,
            lang,
            anchor_mask: mask,
        })
    }

    pub fn to_json(&self) -> String {
        let file = CodecFile {
            merges: self.merges.clone(),
            units: self.units[..self.inventory].to_vec(),
            frequencies: self.frequencies.clone(),
            specials: self.specials.clone(),
            max_len: self.max_len,
        };
        serde_json::to_string_pretty(&file).expect("codec serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CodecFile = serde_json::from_str(text)
            .map_err(|e| crate::Error::Data(format!("invalid codec file: {e}")))?;
        if file.specials != SpecialIds::default() {
            return data_err("codec file uses a non-standard special id layout");
        }
        let codec = Self::from_parts(file.merges, file.units, None, file.max_len)?;
        if file.frequencies.len() != codec.units.len() {
            return data_err("codec frequency table does not match its vocabulary");
        }
        Ok(Self {
            frequencies: file.frequencies,
            ..codec
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path).map_err(io_err(path))?)
    }

    /// Vocabulary as `unit<TAB>id<TAB>frequency` lines, specials first.
    pub fn write_vocab_tsv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(io_err(path))?);
        for (id, name) in SPECIAL_NAMES.iter().enumerate() {
            writeln!(f, "{name}\t{id}\t0").map_err(io_err(path))?;
        }
        for (i, (u, c)) in self.units.iter().zip(&self.frequencies).enumerate() {
            writeln!(f, "{u}\t{}\t{c}", NUM_SPECIALS + i).map_err(io_err(path))?;
        }
        f.flush().map_err(io_err(path))
    }
}

/// Segments every sentence, caching word segmentations.
pub fn encode_corpus(codec: &BpeCodec, corpus: &[SentenceTokens]) -> Vec<IdSequence> {
    let mut cache: HashMap<&str, Vec<usize>> = HashMap::new();
    corpus
        .iter()
        .map(|s| {
            let mut out = IdSequence::default();
            for (w, &flag) in s.tokens.iter().zip(&s.anchor_mask) {
                let ids = cache.entry(w).or_insert_with(|| codec.encode_word(w));
                out.ids.extend_from_slice(ids);
                out.anchor_mask.extend(std::iter::repeat_n(flag, ids.len()));
                if out.len() >= codec.max_len {
                    break;
                }
            }
            out.truncate(codec.max_len);
            out
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(lines: &[&str], lang: Lang) -> Vec<SentenceTokens> {
        lines.iter().map(|l| SentenceTokens::from_line(l, lang)).collect()
    }

    #[test]
    fn zero_merges_is_character_level() {
        let c = corpus(&["ab ba"], Lang::Src);
        let codec = learn_bpe(&[&c], &[], 0).unwrap();
        assert!(codec.merges().is_empty());
        // a@@ b@@ a b
        assert_eq!(codec.vocab_size(), NUM_SPECIALS + 4);
        assert_eq!(codec.inventory_size(), 4);
    }

    #[test]
    fn dominant_pair_merges_first() {
        let c = corpus(&["aa aa aa"], Lang::Src);
        let codec = learn_bpe(&[&c], &[], 1).unwrap();
        assert_eq!(codec.merges(), &[("a@@".to_string(), "a".to_string())]);
        assert_eq!(codec.encode_word("aa").len(), 1);
    }

    #[test]
    fn learning_stops_at_singletons() {
        let c = corpus(&["abc"], Lang::Src);
        assert!(learn_bpe(&[&c], &[], 10).unwrap().merges().is_empty());
    }

    #[test]
    fn round_trip_and_anchor_spread() {
        let c = corpus(&["lower lowest newer", "new low"], Lang::Tgt);
        let codec = learn_bpe(&[&c], &[], 3).unwrap();
        let mut s = SentenceTokens::from_line("newest lower", Lang::Tgt);
        s.anchor_mask = vec![true, false];
        let ids = codec.apply(&s);
        let n_first = codec.encode_word("newest").len();
        assert!(n_first >= 3);
        assert_eq!(&ids.anchor_mask[..n_first], vec![true; n_first].as_slice());
        assert!(ids.anchor_mask[n_first..].iter().all(|f| !f));
        assert_eq!(codec.detokenize(&ids, Lang::Tgt).unwrap(), s);
    }

    #[test]
    fn unknown_characters_become_unk() {
        let c = corpus(&["ab"], Lang::Src);
        let codec = learn_bpe(&[&c], &[], 0).unwrap();
        assert_eq!(codec.encode_word("az"), vec![codec.id("a@@").unwrap(), UNK]);
    }

    #[test]
    fn specials_are_stripped_and_bad_ids_rejected() {
        let c = corpus(&["ab"], Lang::Src);
        let codec = learn_bpe(&[&c], &[], 0).unwrap();
        let only = IdSequence::plain(vec![BOS, PAD, EOS]);
        assert!(codec.detokenize(&only, Lang::Src).unwrap().is_empty());
        assert!(codec.detokenize(&IdSequence::default(), Lang::Src).unwrap().is_empty());
        assert!(codec.detokenize(&IdSequence::plain(vec![999]), Lang::Src).is_err());
    }

    #[test]
    fn truncation_drops_trailing_units() {
        let c = corpus(&["a b c d"], Lang::Src);
        let mut codec = learn_bpe(&[&c], &[], 0).unwrap();
        codec.max_len = 2;
        let s = SentenceTokens::from_line("a b c d", Lang::Src);
        assert_eq!(codec.apply(&s).len(), 2);
        assert_eq!(encode_corpus(&codec, &[s])[0].len(), 2);
    }

    #[test]
    fn json_round_trip_preserves_ids() {
        let c = corpus(&["the cat sat on the mat", "the hat"], Lang::Src);
        let codec = learn_bpe(&[&c], &["bat"], 6).unwrap();
        let back = BpeCodec::from_json(&codec.to_json()).unwrap();
        assert_eq!(back.merges(), codec.merges());
        assert_eq!(back.vocab_size(), codec.vocab_size());
        for w in ["the", "mat", "bat", "zzz"] {
            assert_eq!(back.encode_word(w), codec.encode_word(w));
        }
    }
}

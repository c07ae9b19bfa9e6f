//! Word-level bilingual dictionaries and the anchoring transform.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::corpus::{FreqTable, Lang, SentenceTokens};
use crate::error::{data_err, io_err, Result};
use crate::rng;

/// Dictionary entries as read, possibly several targets per source word.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawDictionary {
    pub entries: Vec<(String, String)>,
    pub direction: (Lang, Lang),
}

impl RawDictionary {
    pub fn new(direction: (Lang, Lang)) -> Self {
        Self {
            entries: Vec::new(),
            direction,
        }
    }
}

/// Reads a MUSE-style dictionary: one `source target` pair per line, separated
/// by spaces or a tab. Identical pairs are kept once. Tab-separated entries whose
/// target is a phrase are dropped with a warning, since anchoring replaces one
/// word with one word.
pub fn load_raw_dictionary(path: &Path, direction: (Lang, Lang)) -> Result<RawDictionary> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_raw_dictionary(&text, direction)
        .map_err(|e| crate::Error::Data(format!("{}: {e}", path.display())))
}

pub fn parse_raw_dictionary(text: &str, direction: (Lang, Lang)) -> Result<RawDictionary> {
    let mut seen = BTreeSet::new();
    let mut dict = RawDictionary::new(direction);
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (src, tgt) = if line.contains('\t') {
            let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
            if fields.len() != 2 || fields.iter().any(|f| f.is_empty()) {
                return data_err(format!("line {}: expected 2 fields", i + 1));
            }
            if fields.iter().any(|f| f.contains(char::is_whitespace)) {
                log::warn!("dictionary line {}: multi-word entry dropped", i + 1);
                continue;
            }
            (fields[0], fields[1])
        } else {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 2 {
                return data_err(format!("line {}: expected 2 fields, found {}", i + 1, fields.len()));
            }
            (fields[0], fields[1])
        };
        if seen.insert((src.to_owned(), tgt.to_owned())) {
            dict.entries.push((src.to_owned(), tgt.to_owned()));
        }
    }
    Ok(dict)
}

/// One translation per source word.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BilingualDictionary {
    pub map: BTreeMap<String, String>,
    pub direction: (Lang, Lang),
    /// Look words up after lowercasing them.
    pub lowercase: bool,
}

impl BilingualDictionary {
    pub fn new(direction: (Lang, Lang)) -> Self {
        Self {
            map: BTreeMap::new(),
            direction,
            lowercase: false,
        }
    }

    pub fn from_pairs<I, A, B>(direction: (Lang, Lang), pairs: I) -> Self
    where
        I: IntoIterator<Item = (A, B)>,
        A: Into<String>,
        B: Into<String>,
    {
        let mut d = Self::new(direction);
        for (a, b) in pairs {
            d.map.insert(a.into(), b.into());
        }
        d
    }

    pub fn entry_count(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn lookup(&self, word: &str) -> Option<&str> {
        if self.lowercase {
            self.map.get(&word.to_lowercase()).map(String::as_str)
        } else {
            self.map.get(word).map(String::as_str)
        }
    }

    /// Lowercased source keys with case-insensitive lookup. Where keys collide,
    /// the entry of the lexicographically smallest original key wins.
    pub fn case_folded(&self) -> BilingualDictionary {
        let mut out = BilingualDictionary::new(self.direction);
        out.lowercase = true;
        for (s, t) in &self.map {
            out.map.entry(s.to_lowercase()).or_insert_with(|| t.clone());
        }
        out
    }

    /// Reverse direction. Where several sources share a target, the
    /// lexicographically smallest source wins.
    pub fn inverted(&self) -> BilingualDictionary {
        let mut out = BilingualDictionary::new((self.direction.1, self.direction.0));
        out.lowercase = self.lowercase;
        for (s, t) in &self.map {
            out.map.entry(t.clone()).or_insert_with(|| s.clone());
        }
        out
    }

    /// Restricts the dictionary to the given source words.
    pub fn restricted<'a>(&self, words: impl IntoIterator<Item = &'a str>) -> BilingualDictionary {
        let mut out = BilingualDictionary::new(self.direction);
        out.lowercase = self.lowercase;
        for w in words {
            if let Some((k, v)) = self.map.get_key_value(w) {
                out.map.insert(k.clone(), v.clone());
            }
        }
        out
    }

    pub fn to_raw(&self) -> RawDictionary {
        RawDictionary {
            entries: self.map.iter().map(|(a, b)| (a.clone(), b.clone())).collect(),
            direction: self.direction,
        }
    }
}

pub fn write_dictionary(path: &Path, dict: &BilingualDictionary) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(io_err(path))?);
    for (s, t) in &dict.map {
        writeln!(f, "{s} {t}").map_err(io_err(path))?;
    }
    f.flush().map_err(io_err(path))
}

/// Keeps, for each source word, the candidate most frequent in the target corpus;
/// ties go to the lexicographically smallest candidate.
pub fn resolve_senses(raw: &RawDictionary, target_freq: &FreqTable) -> BilingualDictionary {
    let mut best: BTreeMap<&str, (&str, u64)> = BTreeMap::new();
    for (s, t) in &raw.entries {
        let c = target_freq.count(t);
        best.entry(s)
            .and_modify(|cur| {
                if c > cur.1 || (c == cur.1 && t.as_str() < cur.0) {
                    *cur = (t, c);
                }
            })
            .or_insert((t, c));
    }
    BilingualDictionary::from_pairs(raw.direction, best.into_iter().map(|(s, (t, _))| (s, t)))
}

/// Replaces every covered word with its translation and flags the position.
/// The output keeps the input's length and language.
pub fn anchor_sentence(s: &SentenceTokens, dict: &BilingualDictionary) -> SentenceTokens {
    let mut out = s.clone();
    for (tok, flag) in out.tokens.iter_mut().zip(out.anchor_mask.iter_mut()) {
        if let Some(t) = dict.lookup(tok) {
            *tok = t.to_owned();
            *flag = true;
        }
    }
    out
}

pub fn anchor_corpus(corpus: &[SentenceTokens], dict: &BilingualDictionary) -> Vec<SentenceTokens> {
    corpus.iter().map(|s| anchor_sentence(s, dict)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoverageReport {
    pub entries: usize,
    /// Fraction of corpus tokens the dictionary covers.
    pub coverage: f64,
}

pub fn coverage_stats(corpus: &[SentenceTokens], dict: &BilingualDictionary) -> Result<CoverageReport> {
    let total: usize = corpus.iter().map(SentenceTokens::len).sum();
    if total == 0 {
        return data_err("coverage of an empty corpus is undefined");
    }
    let hits = corpus
        .iter()
        .flat_map(|s| &s.tokens)
        .filter(|w| dict.lookup(w).is_some())
        .count();
    Ok(CoverageReport {
        entries: dict.entry_count(),
        coverage: hits as f64 / total as f64,
    })
}

/// Seeded random split of the source words into disjoint train and test parts.
pub fn split_dictionary(
    dict: &BilingualDictionary,
    train_fraction: f64,
    seed: u64,
) -> Result<(BilingualDictionary, BilingualDictionary)> {
    if dict.entry_count() < 2 {
        return data_err("cannot split a dictionary with fewer than 2 entries");
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(crate::Error::Config(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let mut keys: Vec<&str> = dict.map.keys().map(String::as_str).collect();
    keys.shuffle(&mut rng::stream(seed, "dictionary.split"));
    let n = keys.len();
    let k = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
    Ok((
        dict.restricted(keys[..k].iter().copied()),
        dict.restricted(keys[k..].iter().copied()),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_freq_table;

    const ST: (Lang, Lang) = (Lang::Src, Lang::Tgt);

    fn sent(words: &[&str]) -> SentenceTokens {
        SentenceTokens::raw(words.iter().map(|w| w.to_string()).collect(), Lang::Src)
    }

    #[test]
    fn multi_sense_entries_are_kept() {
        let raw = parse_raw_dictionary("chat cat\nchat feline\nchat cat\n", ST).unwrap();
        assert_eq!(raw.entries.len(), 2);
        assert!(parse_raw_dictionary("", ST).unwrap().entries.is_empty());
    }

    #[test]
    fn malformed_line_is_reported() {
        let err = parse_raw_dictionary("a b\nx y z\n", ST).unwrap_err();
        assert!(err.to_string().contains("line 2"));
    }

    #[test]
    fn tab_separated_phrases_are_dropped() {
        let raw = parse_raw_dictionary("a\tb\nc\tice cream\n", ST).unwrap();
        assert_eq!(raw.entries, vec![("a".into(), "b".into())]);
    }

    #[test]
    fn most_frequent_sense_wins() {
        let raw = parse_raw_dictionary("chat cat\nchat feline\n", ST).unwrap();
        let mut f = FreqTable::default();
        f.add("cat", 5);
        f.add("feline", 1);
        assert_eq!(resolve_senses(&raw, &f).lookup("chat"), Some("cat"));
    }

    #[test]
    fn zero_frequency_ties_pick_smallest() {
        let raw = parse_raw_dictionary("w zeta\nw alpha\nw mu\n", ST).unwrap();
        let d = resolve_senses(&raw, &FreqTable::default());
        assert_eq!(d.lookup("w"), Some("alpha"));
    }

    #[test]
    fn anchoring_replaces_covered_words() {
        let d = BilingualDictionary::from_pairs(ST, [("s2", "t2"), ("s3", "t3")]);
        let a = anchor_sentence(&sent(&["s1", "s2", "s3", "s4"]), &d);
        assert_eq!(a.tokens, vec!["s1", "t2", "t3", "s4"]);
        assert_eq!(a.anchor_mask, vec![false, true, true, false]);
        let none = sent(&["q", "r"]);
        assert_eq!(anchor_sentence(&none, &d), none);
    }

    #[test]
    fn lowercase_lookup_is_optional() {
        let mut d = BilingualDictionary::from_pairs(ST, [("house", "maison")]);
        assert_eq!(anchor_sentence(&sent(&["House"]), &d).tokens, vec!["House"]);
        d.lowercase = true;
        assert_eq!(anchor_sentence(&sent(&["House"]), &d).tokens, vec!["maison"]);
        let f = BilingualDictionary::from_pairs(ST, [("Paris", "paris"), ("paris", "x")]).case_folded();
        assert_eq!(f.entry_count(), 1);
        assert_eq!(f.lookup("PARIS"), Some("paris"));
    }

    #[test]
    fn coverage_is_token_ratio() {
        let d = BilingualDictionary::from_pairs(ST, [("a", "x")]);
        let r = coverage_stats(&[sent(&["a", "b"]), sent(&["c"])], &d).unwrap();
        assert_eq!(r.entries, 1);
        assert!((r.coverage - 1.0 / 3.0).abs() < 1e-12);
        assert!(coverage_stats(&[], &d).is_err());
        let empty = BilingualDictionary::new(ST);
        assert_eq!(coverage_stats(&[sent(&["a"])], &empty).unwrap().coverage, 0.0);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let d = BilingualDictionary::from_pairs(ST, (0..10).map(|i| (format!("s{i}"), format!("t{i}"))));
        let (a, b) = split_dictionary(&d, 0.5, 3).unwrap();
        assert_eq!((a.entry_count(), b.entry_count()), (5, 5));
        assert_eq!(split_dictionary(&d, 0.5, 3).unwrap(), (a, b));
        let big = BilingualDictionary::from_pairs(ST, (0..13_749).map(|i| (format!("s{i}"), format!("t{i}"))));
        assert_eq!(split_dictionary(&big, 0.25, 1).unwrap().0.entry_count(), 3437);
        let one = BilingualDictionary::from_pairs(ST, [("a", "b")]);
        assert!(split_dictionary(&one, 0.5, 0).is_err());
    }

    #[test]
    fn resolution_matches_brute_force() {
        use rand::Rng;
        let mut r = rng::stream(11, "test");
        let words: Vec<String> = (0..30).map(|i| format!("t{i}")).collect();
        let mut freq = FreqTable::default();
        for w in &words {
            freq.add(w, r.random_range(0..4));
        }
        let mut raw = RawDictionary::new(ST);
        for s in 0..100 {
            for _ in 0..r.random_range(1..5) {
                raw.entries.push((format!("s{s}"), words[r.random_range(0..words.len())].clone()));
            }
        }
        let got = resolve_senses(&raw, &freq);
        for s in 0..100 {
            let key = format!("s{s}");
            let cands: Vec<&String> = raw.entries.iter().filter(|e| e.0 == key).map(|e| &e.1).collect();
            let max = cands.iter().map(|c| freq.count(c)).max().unwrap();
            let want = cands.iter().filter(|c| freq.count(c) == max).min().unwrap();
            assert_eq!(got.lookup(&key), Some(want.as_str()));
        }
        let _ = build_freq_table(&[]);
    }
}

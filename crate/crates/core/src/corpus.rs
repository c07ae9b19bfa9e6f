//! Monolingual corpora: one pre-tokenized sentence per line.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{data_err, io_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Lang {
    Src,
    Tgt,
}

impl Lang {
    pub const BOTH: [Lang; 2] = [Lang::Src, Lang::Tgt];

    pub fn index(self) -> usize {
        match self {
            Lang::Src => 0,
            Lang::Tgt => 1,
        }
    }

    pub fn other(self) -> Lang {
        match self {
            Lang::Src => Lang::Tgt,
            Lang::Tgt => Lang::Src,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Lang::Src => "src",
            Lang::Tgt => "tgt",
        }
    }

    pub fn parse(s: &str) -> Option<Lang> {
        match s {
            "src" => Some(Lang::Src),
            "tgt" => Some(Lang::Tgt),
            _ => None,
        }
    }
}

impl std::fmt::Display for Lang {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A tokenized sentence. `anchor_mask[i]` is set when token `i` was substituted
/// through a dictionary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentenceTokens {
    pub tokens: Vec<String>,
    pub lang: Lang,
    pub anchor_mask: Vec<bool>,
}

impl SentenceTokens {
    pub fn raw(tokens: Vec<String>, lang: Lang) -> Self {
        let anchor_mask = vec![false; tokens.len()];
        Self {
            tokens,
            lang,
            anchor_mask,
        }
    }

    pub fn from_line(line: &str, lang: Lang) -> Self {
        Self::raw(line.split_whitespace().map(str::to_owned).collect(), lang)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn line(&self) -> String {
        self.tokens.join(" ")
    }
}

pub fn load_corpus(path: &Path, lang: Lang, max_sentences: Option<usize>) -> Result<Vec<SentenceTokens>> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    parse_corpus(&bytes, lang, max_sentences).map_err(|e| match e {
        crate::Error::Data(msg) => crate::Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_corpus(bytes: &[u8], lang: Lang, max_sentences: Option<usize>) -> Result<Vec<SentenceTokens>> {
    let cap = max_sentences.unwrap_or(usize::MAX);
    let mut out = Vec::new();
    for (i, raw) in bytes.split(|&b| b == b'\n').enumerate() {
        if out.len() >= cap {
            break;
        }
        let Ok(line) = std::str::from_utf8(raw) else {
            return data_err(format!("line {}: invalid UTF-8", i + 1));
        };
        let s = SentenceTokens::from_line(line, lang);
        if !s.is_empty() {
            out.push(s);
        }
    }
    Ok(out)
}

pub fn write_corpus(path: &Path, corpus: &[SentenceTokens]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(io_err(path))?);
    for s in corpus {
        writeln!(f, "{}", s.line()).map_err(io_err(path))?;
    }
    f.flush().map_err(io_err(path))
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FreqTable {
    counts: HashMap<String, u64>,
    total_tokens: u64,
}

impl FreqTable {
    pub fn count(&self, word: &str) -> u64 {
        self.counts.get(word).copied().unwrap_or(0)
    }

    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    pub fn num_types(&self) -> usize {
        self.counts.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> {
        self.counts.iter().map(|(w, &c)| (w.as_str(), c))
    }

    /// Word types by descending count, ties in lexicographic order.
    pub fn by_frequency(&self) -> Vec<(&str, u64)> {
        let mut v: Vec<_> = self.iter().collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        v
    }

    pub fn add(&mut self, word: &str, n: u64) {
        *self.counts.entry(word.to_owned()).or_insert(0) += n;
        self.total_tokens += n;
    }
}

pub fn build_freq_table(corpus: &[SentenceTokens]) -> FreqTable {
    let mut t = FreqTable::default();
    for s in corpus {
        for w in &s.tokens {
            t.add(w, 1);
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sent(words: &[&str]) -> SentenceTokens {
        SentenceTokens::raw(words.iter().map(|w| w.to_string()).collect(), Lang::Src)
    }

    #[test]
    fn blank_lines_are_skipped() {
        let c = parse_corpus(b"a b\n\nc\n", Lang::Src, None).unwrap();
        assert_eq!(c, vec![sent(&["a", "b"]), sent(&["c"])]);
        assert!(parse_corpus(b"", Lang::Src, None).unwrap().is_empty());
    }

    #[test]
    fn cap_keeps_a_prefix() {
        let text: String = (0..10).map(|i| format!("w{i} x\n")).collect();
        let all = parse_corpus(text.as_bytes(), Lang::Tgt, None).unwrap();
        let some = parse_corpus(text.as_bytes(), Lang::Tgt, Some(3)).unwrap();
        assert_eq!(some, all[..3]);
    }

    #[test]
    fn invalid_utf8_reports_line() {
        let err = parse_corpus(b"ok\n\xff\xfe\n", Lang::Src, None).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn unicode_whitespace_splits() {
        let c = parse_corpus("a\u{3000}b\tc".as_bytes(), Lang::Src, None).unwrap();
        assert_eq!(c[0].tokens, vec!["a", "b", "c"]);
    }

    #[test]
    fn counts_are_exact() {
        let t = build_freq_table(&[sent(&["a", "b", "a"])]);
        assert_eq!((t.count("a"), t.count("b"), t.count("z")), (2, 1, 0));
        assert_eq!(t.total_tokens(), 3);
        assert_eq!(build_freq_table(&[]).total_tokens(), 0);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.txt");
        let c = vec![sent(&["x", "y"]), sent(&["z"])];
        write_corpus(&p, &c).unwrap();
        assert_eq!(load_corpus(&p, Lang::Src, None).unwrap(), c);
    }
}

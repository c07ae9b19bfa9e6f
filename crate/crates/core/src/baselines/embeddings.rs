//! Word embedding spaces and a skip-gram negative-sampling trainer.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{build_freq_table, SentenceTokens};
use crate::error::{data_err, io_err, Error, Result};
use crate::rng;

/// Row-major `|V| × dim` matrix with a word index.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSpace {
    pub words: Vec<String>,
    pub index: HashMap<String, usize>,
    pub dim: usize,
    pub matrix: Vec<f64>,
    pub unit_normalized: bool,
}

impl EmbeddingSpace {
    pub fn new(words: Vec<String>, dim: usize, matrix: Vec<f64>) -> Result<Self> {
        if dim == 0 || matrix.len() != words.len() * dim {
            return data_err(format!(
                "embedding matrix of {} values does not fit {} words × {dim}",
                matrix.len(),
                words.len()
            ));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return data_err("embedding matrix has non-finite values");
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return data_err(format!("duplicate embedding word {w:?}"));
            }
        }
        Ok(Self {
            words,
            index,
            dim,
            matrix,
            unit_normalized: false,
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.matrix[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.index.get(word).map(|&i| self.row(i))
    }

    fn normalize_rows(&mut self) {
        for row in self.matrix.chunks_mut(self.dim) {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 0.0 {
                row.iter_mut().for_each(|v| *v /= n);
            }
        }
    }

    /// Unit length rows, then mean-centering, then unit length again.
    pub fn normalized(&self) -> Self {
        let mut out = self.clone();
        out.normalize_rows();
        if !out.is_empty() {
            let mut mean = vec![0.0; self.dim];
            for row in out.matrix.chunks(self.dim) {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= out.len() as f64);
            for row in out.matrix.chunks_mut(self.dim) {
                for (v, m) in row.iter_mut().zip(&mean) {
                    *v -= m;
                }
            }
        }
        out.normalize_rows();
        out.unit_normalized = true;
        out
    }

    /// Keeps the listed words that are present, in the given order.
    pub fn restricted<'a>(&self, words: impl IntoIterator<Item = &'a str>) -> Self {
        let mut kept = Vec::new();
        let mut matrix = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for w in words {
            if let Some(v) = self.get(w) {
                if seen.insert(w) {
                    kept.push(w.to_owned());
                    matrix.extend_from_slice(v);
                }
            }
        }
        let mut out = Self::new(kept, self.dim, matrix).expect("rows come from a valid space");
        out.unit_normalized = self.unit_normalized;
        out
    }

    /// word2vec text format: a `V d` header, then `word v1 … vd` per line.
    pub fn to_word2vec(&self) -> String {
        let mut s = format!("{} {}\n", self.len(), self.dim);
        for (i, w) in self.words.iter().enumerate() {
            s.push_str(w);
            for v in self.row(i) {
                write!(s, " {v}").expect("string write");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_word2vec(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Data("empty embedding file".into()))?;
        let nums: Vec<usize> = header
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Data(format!("bad embedding header {header:?}")))?;
        let [n, dim] = nums[..] else {
            return data_err(format!("bad embedding header {header:?}"));
        };
        let mut words = Vec::with_capacity(n);
        let mut matrix = Vec::with_capacity(n * dim);
        for (lineno, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let mut parts = line.split_whitespace();
            let w = parts.next().expect("non-empty line");
            let vals: Vec<f64> = parts
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Data(format!("line {}: bad number", lineno + 2)))?;
            if vals.len() != dim {
                return data_err(format!("line {}: {} values, expected {dim}", lineno + 2, vals.len()));
            }
            words.push(w.to_owned());
            matrix.extend(vals);
        }
        if words.len() != n {
            return data_err(format!("header announces {n} words, found {}", words.len()));
        }
        Self::new(words, dim, matrix)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_word2vec()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_word2vec(&std::fs::read_to_string(path).map_err(io_err(path))?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgnsConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub min_count: u64,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for SgnsConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            window: 5,
            negatives: 5,
            min_count: 2,
            epochs: 5,
            lr: 0.025,
            seed: 1,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Skip-gram with negative sampling from the unigram distribution raised to
/// 3/4, learning rate decaying linearly to zero. Words below `min_count` are
/// dropped before windows are formed.
pub fn train_embeddings(corpus: &[SentenceTokens], cfg: &SgnsConfig) -> Result<EmbeddingSpace> {
    if cfg.dim == 0 || cfg.window == 0 || cfg.epochs == 0 {
        return Err(Error::Config("dim, window and epochs must be positive".into()));
    }
    let freq = build_freq_table(corpus);
    let vocab: Vec<(String, u64)> = freq
        .by_frequency()
        .into_iter()
        .filter(|&(_, c)| c >= cfg.min_count)
        .map(|(w, c)| (w.to_owned(), c))
        .collect();
    if vocab.is_empty() {
        return data_err("no word reaches the embedding min_count");
    }
    let index: HashMap<&str, usize> = vocab.iter().enumerate().map(|(i, (w, _))| (w.as_str(), i)).collect();
    let sentences: Vec<Vec<usize>> = corpus
        .iter()
        .map(|s| s.tokens.iter().filter_map(|w| index.get(w.as_str()).copied()).collect())
        .collect();
    let noise = WeightedIndex::new(vocab.iter().map(|&(_, c)| (c as f64).powf(0.75))).expect("positive counts");
    let d = cfg.dim;
    let v = vocab.len();
    let mut r = rng::stream(cfg.seed, "sgns");
    let mut input: Vec<f64> = (0..v * d).map(|_| (r.random::<f64>() - 0.5) / d as f64).collect();
    let mut output = vec![0.0; v * d];
    let total: usize = sentences.iter().map(Vec::len).sum::<usize>() * cfg.epochs;
    let mut done = 0usize;
    let mut grad = vec![0.0; d];
    for _ in 0..cfg.epochs {
        for s in &sentences {
            for (pos, &center) in s.iter().enumerate() {
                let lr = (cfg.lr * (1.0 - done as f64 / total as f64)).max(cfg.lr * 1e-4);
                done += 1;
                let lo = pos.saturating_sub(cfg.window);
                let hi = (pos + cfg.window + 1).min(s.len());
                for (cpos, &ctx) in s.iter().enumerate().take(hi).skip(lo) {
                    if cpos == pos {
                        continue;
                    }
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    let x = center * d;
                    for k in 0..=cfg.negatives {
                        let (target, label) = if k == 0 {
                            (ctx, 1.0)
                        } else {
                            let t = noise.sample(&mut r);
                            if t == ctx {
                                continue;
                            }
                            (t, 0.0)
                        };
                        let y = target * d;
                        let dot: f64 = (0..d).map(|j| input[x + j] * output[y + j]).sum();
                        let g = lr * (label - sigmoid(dot));
                        for j in 0..d {
                            grad[j] += g * output[y + j];
                            output[y + j] += g * input[x + j];
                        }
                    }
                    for j in 0..d {
                        input[x + j] += grad[j];
                    }
                }
            }
        }
    }
    EmbeddingSpace::new(vocab.into_iter().map(|(w, _)| w).collect(), d, input)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Lang;

    fn corpus() -> Vec<SentenceTokens> {
        let mut out = Vec::new();
        for i in 0..200 {
            let line = match i % 4 {
                0 => "the cat sat on the mat",
                1 => "the dog sat on the rug",
                2 => "a cat ran to a mat",
                _ => "a dog ran to a rug once",
            };
            out.push(SentenceTokens::from_line(line, Lang::Src));
        }
        out
    }

    fn cos(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    #[test]
    fn training_is_deterministic_and_rows_are_finite() {
        let cfg = SgnsConfig {
            dim: 16,
            epochs: 3,
            ..SgnsConfig::default()
        };
        let a = train_embeddings(&corpus(), &cfg).unwrap();
        let b = train_embeddings(&corpus(), &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 11);
        for i in 0..a.len() {
            assert!(a.row(i).iter().any(|v| *v != 0.0));
        }
    }

    #[test]
    fn words_in_shared_contexts_end_up_close() {
        let cfg = SgnsConfig {
            dim: 16,
            epochs: 20,
            ..SgnsConfig::default()
        };
        let e = train_embeddings(&corpus(), &cfg).unwrap();
        let cat_dog = cos(e.get("cat").unwrap(), e.get("dog").unwrap());
        let cat_once = cos(e.get("cat").unwrap(), e.get("once").unwrap());
        assert!(cat_dog > cat_once, "{cat_dog} vs {cat_once}");
    }

    #[test]
    fn min_count_filters_rare_words() {
        let mut c = corpus();
        c.push(SentenceTokens::from_line("hapax", Lang::Src));
        let e = train_embeddings(
            &c,
            &SgnsConfig {
                dim: 4,
                epochs: 1,
                ..SgnsConfig::default()
            },
        )
        .unwrap();
        assert!(e.get("hapax").is_none());
        assert!(train_embeddings(&c, &SgnsConfig { dim: 0, ..SgnsConfig::default() }).is_err());
    }

    #[test]
    fn normalization_gives_unit_centered_rows() {
        let e = EmbeddingSpace::new(
            vec!["a".into(), "b".into(), "c".into()],
            2,
            vec![3.0, 4.0, 1.0, 0.0, 0.0, 2.0],
        )
        .unwrap();
        let n = e.normalized();
        assert!(n.unit_normalized);
        for i in 0..3 {
            let norm: f64 = n.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn word2vec_text_round_trips_exactly() {
        let e = train_embeddings(
            &corpus(),
            &SgnsConfig {
                dim: 5,
                epochs: 1,
                ..SgnsConfig::default()
            },
        )
        .unwrap();
        let back = EmbeddingSpace::from_word2vec(&e.to_word2vec()).unwrap();
        assert_eq!(back, e);
        assert!(EmbeddingSpace::from_word2vec("2 2\na 1 2\n").is_err());
        assert!(EmbeddingSpace::from_word2vec("1 2\na 1\n").is_err());
    }
}

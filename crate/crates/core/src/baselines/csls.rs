//! Cross-domain similarity local scaling retrieval.

use rayon::prelude::*;

use super::embeddings::EmbeddingSpace;
use crate::error::{data_err, Result};

pub const DEFAULT_KNN: usize = 10;

fn unit_rows(space: &EmbeddingSpace) -> Vec<f64> {
    let mut m = space.matrix.clone();
    for row in m.chunks_mut(space.dim) {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
    m
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean of the `k` largest values.
fn top_mean(mut v: Vec<f64>, k: usize) -> f64 {
    let k = k.min(v.len());
    if k == 0 {
        return 0.0;
    }
    v.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
    v[..k].iter().sum::<f64>() / k as f64
}

/// Precomputed neighbourhood penalties for retrieving `tgt` words from `src` rows.
pub struct CslsIndex<'a> {
    src: &'a EmbeddingSpace,
    tgt: &'a EmbeddingSpace,
    src_unit: Vec<f64>,
    tgt_unit: Vec<f64>,
    /// Mean cosine of each source row to its nearest target rows.
    pub r_src: Vec<f64>,
    /// Mean cosine of each target row to its nearest source rows.
    pub r_tgt: Vec<f64>,
}

impl<'a> CslsIndex<'a> {
    /// `knn` is capped at the size of the other space.
    pub fn new(src: &'a EmbeddingSpace, tgt: &'a EmbeddingSpace, knn: usize) -> Result<Self> {
        if src.dim != tgt.dim {
            return data_err(format!("dimension mismatch: {} vs {}", src.dim, tgt.dim));
        }
        if src.is_empty() || tgt.is_empty() {
            return data_err("CSLS needs non-empty spaces");
        }
        let d = src.dim;
        let src_unit = unit_rows(src);
        let tgt_unit = unit_rows(tgt);
        let penalties = |from: &[f64], to: &[f64]| -> Vec<f64> {
            from.par_chunks(d)
                .map(|x| top_mean(to.chunks(d).map(|y| dot(x, y)).collect(), knn))
                .collect()
        };
        let r_src = penalties(&src_unit, &tgt_unit);
        let r_tgt = penalties(&tgt_unit, &src_unit);
        Ok(Self {
            src,
            tgt,
            src_unit,
            tgt_unit,
            r_src,
            r_tgt,
        })
    }

    /// `2·cos(x, y) − r_src(x) − r_tgt(y)`
    pub fn score(&self, src_row: usize, tgt_row: usize) -> f64 {
        let d = self.src.dim;
        let x = &self.src_unit[src_row * d..(src_row + 1) * d];
        let y = &self.tgt_unit[tgt_row * d..(tgt_row + 1) * d];
        2.0 * dot(x, y) - self.r_src[src_row] - self.r_tgt[tgt_row]
    }

    /// Top `k` target words for a source row by descending CSLS; equal scores
    /// are ordered by word.
    pub fn neighbors(&self, src_row: usize, k: usize) -> Result<Vec<(String, f64)>> {
        if k == 0 || k > self.tgt.len() {
            return data_err(format!("k = {k} outside 1..={}", self.tgt.len()));
        }
        let mut scored: Vec<(usize, f64)> = (0..self.tgt.len()).map(|j| (j, self.score(src_row, j))).collect();
        let cmp = |a: &(usize, f64), b: &(usize, f64)| {
            b.1.total_cmp(&a.1).then_with(|| self.tgt.words[a.0].cmp(&self.tgt.words[b.0]))
        };
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_by(cmp);
        Ok(scored.into_iter().map(|(j, s)| (self.tgt.words[j].clone(), s)).collect())
    }

    pub fn neighbors_of(&self, word: &str, k: usize) -> Result<Option<Vec<(String, f64)>>> {
        match self.src.index.get(word) {
            Some(&i) => self.neighbors(i, k).map(Some),
            None => Ok(None),
        }
    }
}

/// CSLS top-`k` target words for every source word, with `K = 10` penalties.
pub fn csls_neighbors(src: &EmbeddingSpace, tgt: &EmbeddingSpace, k: usize) -> Result<Vec<Vec<(String, f64)>>> {
    let idx = CslsIndex::new(src, tgt, DEFAULT_KNN)?;
    (0..src.len()).into_par_iter().map(|i| idx.neighbors(i, k)).collect()
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::rng;

    fn space(n: usize, d: usize, seed: u64, prefix: &str) -> EmbeddingSpace {
        let mut r = rng::stream(seed, "csls");
        EmbeddingSpace::new(
            (0..n).map(|i| format!("{prefix}{i:03}")).collect(),
            d,
            (0..n * d).map(|_| r.random::<f64>() - 0.5).collect(),
        )
        .unwrap()
    }

    /// Direct recomputation: every cosine from scratch, full sort.
    fn brute_force(src: &EmbeddingSpace, tgt: &EmbeddingSpace, k: usize) -> Vec<Vec<String>> {
        let cos = |a: &[f64], b: &[f64]| {
            let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
            a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (n(a) * n(b))
        };
        let r = |x: &[f64], other: &EmbeddingSpace| {
            let mut c: Vec<f64> = (0..other.len()).map(|j| cos(x, other.row(j))).collect();
            c.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let kk = 10.min(c.len());
            c[..kk].iter().sum::<f64>() / kk as f64
        };
        (0..src.len())
            .map(|i| {
                let x = src.row(i);
                let rx = r(x, tgt);
                let mut all: Vec<(String, f64)> = (0..tgt.len())
                    .map(|j| {
                        let y = tgt.row(j);
                        (tgt.words[j].clone(), 2.0 * cos(x, y) - rx - r(y, src))
                    })
                    .collect();
                all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
                all.into_iter().take(k).map(|(w, _)| w).collect()
            })
            .collect()
    }

    #[test]
    fn rankings_match_brute_force_on_200_words() {
        let src = space(200, 12, 1, "s");
        let tgt = space(200, 12, 2, "t");
        let fast: Vec<Vec<String>> = csls_neighbors(&src, &tgt, 10)
            .unwrap()
            .into_iter()
            .map(|v| v.into_iter().map(|(w, _)| w).collect())
            .collect();
        assert_eq!(fast, brute_force(&src, &tgt, 10));
    }

    #[test]
    fn duplicate_space_retrieves_itself() {
        let s = space(50, 8, 3, "w");
        for (i, n) in csls_neighbors(&s, &s, 1).unwrap().iter().enumerate() {
            assert_eq!(n[0].0, s.words[i]);
        }
    }

    #[test]
    fn ties_break_by_word() {
        let s = EmbeddingSpace::new(vec!["q".into()], 2, vec![1.0, 0.0]).unwrap();
        let t = EmbeddingSpace::new(vec!["b".into(), "a".into(), "c".into()], 2, vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        let n = csls_neighbors(&s, &t, 3).unwrap();
        let words: Vec<&str> = n[0].iter().map(|(w, _)| w.as_str()).collect();
        assert_eq!(words, ["a", "b", "c"]);
    }

    #[test]
    fn oversized_k_is_rejected() {
        let s = space(5, 4, 4, "w");
        assert!(csls_neighbors(&s, &s, 6).is_err());
        assert!(csls_neighbors(&s, &s, 0).is_err());
    }
}

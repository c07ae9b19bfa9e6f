//! Corpus-level BLEU with the conventions of `multi-bleu.perl`.

use std::collections::HashMap;

use serde::Serialize;

use crate::error::{data_err, Result};

pub const MAX_ORDER: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BleuReport {
    /// Percentage in `[0, 100]`.
    pub bleu: f64,
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

fn ngram_counts<'a>(tokens: &'a [String], n: usize) -> HashMap<&'a [String], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Scores `hypotheses[i]` against every reference in `references[i]`.
/// N-gram counts are clipped by the maximum count in any single reference, and
/// the reference length is the one closest to the hypothesis (shorter on ties).
pub fn bleu_multi(hypotheses: &[Vec<String>], references: &[Vec<Vec<String>>]) -> Result<BleuReport> {
    if hypotheses.len() != references.len() {
        return data_err(format!(
            "{} hypotheses but {} references",
            hypotheses.len(),
            references.len()
        ));
    }
    if hypotheses.is_empty() {
        return data_err("BLEU of an empty corpus is undefined");
    }
    let mut correct = [0usize; MAX_ORDER];
    let mut total = [0usize; MAX_ORDER];
    let mut hyp_len = 0;
    let mut ref_len = 0;
    for (hyp, refs) in hypotheses.iter().zip(references) {
        hyp_len += hyp.len();
        let mut closest: Option<(usize, usize)> = None;
        for r in refs {
            let diff = hyp.len().abs_diff(r.len());
            closest = match closest {
                None => Some((diff, r.len())),
                Some((d, l)) if diff < d || (diff == d && r.len() < l) => Some((diff, r.len())),
                keep => keep,
            };
        }
        ref_len += closest.map_or(0, |(_, l)| l);
        for n in 1..=MAX_ORDER {
            let h = ngram_counts(hyp, n);
            let mut max_ref: HashMap<&[String], usize> = HashMap::new();
            for r in refs {
                for (g, c) in ngram_counts(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(c);
                }
            }
            for (g, c) in &h {
                correct[n - 1] += (*c).min(max_ref.get(g).copied().unwrap_or(0));
            }
            total[n - 1] += hyp.len().saturating_sub(n - 1);
        }
    }
    let mut precisions = [0.0; MAX_ORDER];
    for n in 0..MAX_ORDER {
        precisions[n] = if total[n] > 0 {
            correct[n] as f64 / total[n] as f64
        } else {
            0.0
        };
    }
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    let bleu = if ref_len == 0 || precisions.iter().any(|&p| p == 0.0) {
        0.0
    } else {
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
        100.0 * brevity_penalty * log_mean.exp()
    };
    Ok(BleuReport {
        bleu,
        precisions,
        brevity_penalty,
        hyp_len,
        ref_len,
    })
}

/// Single-reference corpus BLEU.
pub fn bleu(hypotheses: &[Vec<String>], references: &[Vec<String>]) -> Result<BleuReport> {
    let refs: Vec<Vec<Vec<String>>> = references.iter().map(|r| vec![r.clone()]).collect();
    bleu_multi(hypotheses, &refs)
}

pub fn tokenize(line: &str) -> Vec<String> {
    line.split_whitespace().map(str::to_owned).collect()
}

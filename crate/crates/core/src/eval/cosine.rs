//! Per-layer similarity of max-pooled encoder states of parallel sentences.

use crate::corpus::Lang;
use crate::error::{data_err, Result};
use crate::model::SeqModel;
use crate::subword::IdSequence;

/// One sentence as fed to the encoder.
#[derive(Clone, Debug)]
pub struct EncoderInput {
    pub ids: IdSequence,
    pub lang: Lang,
}

fn max_pool(states: &[f32], rows: usize, d: usize) -> Vec<f64> {
    let mut out = vec![f64::NEG_INFINITY; d];
    for row in states.chunks(d).take(rows) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o = o.max(f64::from(v));
        }
    }
    out
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// For each encoder layer: max-pool each sentence's states over its word
/// positions (the appended end-of-sentence position is excluded unless the
/// sentence is empty), take the cosine within each pair, and average over pairs.
pub fn layer_cosine(model: &SeqModel, pairs: &[(EncoderInput, EncoderInput)]) -> Result<Vec<f64>> {
    if pairs.is_empty() {
        return data_err("layer cosine needs at least one sentence pair");
    }
    let d = model.config.model_dim;
    let mut sums = vec![0.0; model.config.num_layers];
    let pooled = |x: &EncoderInput| {
        let e = model.encode(&x.ids.ids, x.lang);
        let rows = (e.len - 1).max(1);
        e.layers.iter().map(|l| max_pool(l, rows, d)).collect::<Vec<_>>()
    };
    for (a, b) in pairs {
        let (pa, pb) = (pooled(a), pooled(b));
        for (s, (x, y)) in sums.iter_mut().zip(pa.iter().zip(&pb)) {
            *s += cosine(x, y);
        }
    }
    Ok(sums.into_iter().map(|s| s / pairs.len() as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, ShareSpec};

    fn model() -> SeqModel {
        SeqModel::new(
            ModelConfig {
                num_layers: 3,
                model_dim: 16,
                ff_dim: 32,
                num_heads: 2,
                max_len: 16,
                vocab_size: 40,
                share: ShareSpec::default(),
                dropout: 0.0,
                length_penalty: 1.0,
            },
            1,
        )
        .unwrap()
    }

    fn input(ids: &[usize], lang: Lang) -> EncoderInput {
        EncoderInput {
            ids: IdSequence::plain(ids.to_vec()),
            lang,
        }
    }

    #[test]
    fn self_pairs_have_unit_cosine() {
        let m = model();
        let s = input(&[6, 7, 8, 9], Lang::Src);
        let c = layer_cosine(&m, &[(s.clone(), s)]).unwrap();
        assert_eq!(c.len(), 3);
        assert!(c.iter().all(|v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn unrelated_pairs_score_below_self_pairs_and_order_is_irrelevant() {
        let m = model();
        let pairs = vec![
            (input(&[6, 7, 8], Lang::Src), input(&[30, 31, 32, 33], Lang::Tgt)),
            (input(&[10, 11], Lang::Src), input(&[20, 25, 21], Lang::Tgt)),
        ];
        let c = layer_cosine(&m, &pairs).unwrap();
        assert!(c.iter().all(|v| *v < 1.0 - 1e-6));
        let rev: Vec<_> = pairs.iter().rev().cloned().collect();
        let c2 = layer_cosine(&m, &rev).unwrap();
        for (a, b) in c.iter().zip(&c2) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(layer_cosine(&m, &[]).is_err());
    }
}

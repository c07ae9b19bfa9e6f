//! Supervised orthogonal alignment of two embedding spaces, and its use as an
//! embedding-table initializer.

use nalgebra::DMatrix;

use super::embeddings::EmbeddingSpace;
use crate::corpus::Lang;
use crate::dictionary::BilingualDictionary;
use crate::error::{data_err, Result};
use crate::model::SeqModel;
use crate::subword::BpeCodec;

/// `d × d` map applied to row vectors as `x · W`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearMap {
    pub dim: usize,
    pub w: Vec<f64>,
    pub orthogonal: bool,
}

impl LinearMap {
    pub fn apply_row(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut y = vec![0.0; d];
        for (i, &xi) in x.iter().enumerate() {
            for j in 0..d {
                y[j] += xi * self.w[i * d + j];
            }
        }
        y
    }

    pub fn apply(&self, space: &EmbeddingSpace) -> EmbeddingSpace {
        let matrix = space.matrix.chunks(space.dim).flat_map(|r| self.apply_row(r)).collect();
        let mut out = EmbeddingSpace::new(space.words.clone(), self.dim, matrix).expect("same shape");
        out.unit_normalized = space.unit_normalized && self.orthogonal;
        out
    }

    /// `max |WᵀW − I|`
    pub fn orthogonality_error(&self) -> f64 {
        let d = self.dim;
        let mut worst: f64 = 0.0;
        for a in 0..d {
            for b in 0..d {
                let dot: f64 = (0..d).map(|k| self.w[k * d + a] * self.w[k * d + b]).sum();
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }
}

/// Orthogonal `W` minimizing `Σ ‖x·W − y‖²` over dictionary pairs present in
/// both spaces: `W = U Vᵀ` for the SVD `U Σ Vᵀ` of `XᵀY`. Inputs are used as
/// given; callers normalize beforehand.
pub fn fit_swet(src: &EmbeddingSpace, tgt: &EmbeddingSpace, dict: &BilingualDictionary) -> Result<LinearMap> {
    if src.dim != tgt.dim {
        return data_err(format!("dimension mismatch: {} vs {}", src.dim, tgt.dim));
    }
    let d = src.dim;
    let pairs: Vec<(&[f64], &[f64])> = dict
        .map
        .iter()
        .filter_map(|(s, t)| Some((src.get(s)?, tgt.get(t)?)))
        .collect();
    if pairs.len() < d {
        return data_err(format!(
            "{} dictionary pairs present in both spaces; at least {d} are needed",
            pairs.len()
        ));
    }
    let mut m = DMatrix::<f64>::zeros(d, d);
    for (x, y) in &pairs {
        for i in 0..d {
            for j in 0..d {
                m[(i, j)] += x[i] * y[j];
            }
        }
    }
    let svd = m.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin <= smax * 1e-12 {
        return data_err(format!("cross-covariance is rank deficient (σ_min {smin:e}, σ_max {smax:e})"));
    }
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    let w = u * v_t;
    let mut flat = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in 0..d {
            flat.push(w[(i, j)]);
        }
    }
    Ok(LinearMap {
        dim: d,
        w: flat,
        orthogonal: true,
    })
}

/// Overwrites the embedding rows of single-unit words with their vectors,
/// rescaled to the table's mean row norm. Returns the number of rows written.
pub fn init_embedding_table(model: &mut SeqModel, codec: &BpeCodec, spaces: &[(&EmbeddingSpace, Lang)]) -> Result<usize> {
    let d = model.config.model_dim;
    if let Some((s, _)) = spaces.iter().find(|(s, _)| s.dim != d) {
        return data_err(format!("embedding dimension {} differs from model dimension {d}", s.dim));
    }
    let id = model.layout.embed;
    let table = model.store.get_mut(id).data_mut();
    let rows = table.len() / d;
    let mean_norm = table
        .chunks(d)
        .map(|r| r.iter().map(|v| f64::from(*v).powi(2)).sum::<f64>().sqrt())
        .sum::<f64>()
        / rows as f64;
    let mut written = 0;
    for (space, _) in spaces {
        for (i, w) in space.words.iter().enumerate() {
            let units = codec.encode_word(w);
            let [u] = units[..] else { continue };
            if codec.is_special(u) {
                continue;
            }
            let v = space.row(i);
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n == 0.0 {
                continue;
            }
            for (dst, x) in table[u * d..(u + 1) * d].iter_mut().zip(v) {
                *dst = (x / n * mean_norm) as f32;
            }
            written += 1;
        }
    }
    Ok(written)
}

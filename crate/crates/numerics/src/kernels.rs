//! Slice-level kernels shared by the autodiff graph and the tape-free inference path.
//!
//! All matrices are row-major. Reductions run in a fixed order so results are
//! bit-reproducible for identical inputs.

use crate::scalar::Scalar;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[inline]
pub fn axpy<S: Scalar>(alpha: S, x: &[S], y: &mut [S]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Dot product with eight independent accumulators (vectorizes without reassociation).
#[inline]
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [S::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let pa = &a[c * 8..c * 8 + 8];
        let pb = &b[c * 8..c * 8 + 8];
        for l in 0..8 {
            acc[l] += pa[l] * pb[l];
        }
    }
    let mut tail = S::zero();
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// `out (n×m) += a (n×k) · b (k×m)`
pub fn matmul_acc<S: Scalar>(a: &[S], b: &[S], out: &mut [S], n: usize, k: usize, m: usize) {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), k * m);
    debug_assert_eq!(out.len(), n * m);
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &aip) in arow.iter().enumerate() {
            if aip != S::zero() {
                axpy(aip, &b[p * m..(p + 1) * m], orow);
            }
        }
    }
}

pub fn matmul<S: Scalar>(a: &[S], b: &[S], n: usize, k: usize, m: usize) -> Vec<S> {
    let mut out = vec![S::zero(); n * m];
    matmul_acc(a, b, &mut out, n, k, m);
    out
}

/// `out (n×m) += a (n×k) · bᵀ` where `b` is `m×k`.
pub fn matmul_nt_acc<S: Scalar>(a: &[S], b: &[S], out: &mut [S], n: usize, k: usize, m: usize) {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), m * k);
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * m..(i + 1) * m];
        for (j, o) in orow.iter_mut().enumerate() {
            *o += dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

pub fn matmul_nt<S: Scalar>(a: &[S], b: &[S], n: usize, k: usize, m: usize) -> Vec<S> {
    let mut out = vec![S::zero(); n * m];
    matmul_nt_acc(a, b, &mut out, n, k, m);
    out
}

/// `out (n×m) += aᵀ · b` where `a` is `k×n` and `b` is `k×m`.
pub fn matmul_tn_acc<S: Scalar>(a: &[S], b: &[S], out: &mut [S], k: usize, n: usize, m: usize) {
    debug_assert_eq!(a.len(), k * n);
    debug_assert_eq!(b.len(), k * m);
    debug_assert_eq!(out.len(), n * m);
    for p in 0..k {
        let arow = &a[p * n..(p + 1) * n];
        let brow = &b[p * m..(p + 1) * m];
        for (i, &api) in arow.iter().enumerate() {
            if api != S::zero() {
                axpy(api, brow, &mut out[i * m..(i + 1) * m]);
            }
        }
    }
}

pub fn add_bias_in_place<S: Scalar>(x: &mut [S], bias: &[S]) {
    for row in x.chunks_mut(bias.len()) {
        for (v, &b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

pub fn softmax_in_place<S: Scalar>(row: &mut [S]) {
    let max = row.iter().fold(S::neg_infinity(), |m, &v| m.max(v));
    let mut sum = S::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = S::one() / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

/// Normalizes each row of `x` (`rows×cols`) in place to zero mean / unit variance and
/// returns the per-row reciprocal standard deviations.
pub fn normalize_rows<S: Scalar>(x: &mut [S], cols: usize) -> Vec<S> {
    let eps = S::from_f64(LAYER_NORM_EPS);
    let inv_n = S::one() / S::from_f64(cols as f64);
    x.chunks_mut(cols)
        .map(|row| {
            let mean = row.iter().copied().sum::<S>() * inv_n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() * inv_n;
            let rstd = S::one() / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * rstd;
            }
            rstd
        })
        .collect()
}

pub fn layer_norm<S: Scalar>(x: &[S], gamma: &[S], beta: &[S]) -> Vec<S> {
    let cols = gamma.len();
    let mut out = x.to_vec();
    normalize_rows(&mut out, cols);
    for row in out.chunks_mut(cols) {
        for ((v, &g), &b) in row.iter_mut().zip(gamma).zip(beta) {
            *v = *v * g + b;
        }
    }
    out
}

/// Multi-head scaled dot-product attention.
///
/// `q` is `n×d`, `k` and `v` are `m×d`. With `causal`, query `i` sees keys
/// `j <= i + (m - n)`, which also covers incremental decoding against a cache.
/// Returns the `n×d` output and the `heads×n×m` attention probabilities.
pub fn attention<S: Scalar>(
    q: &[S],
    k: &[S],
    v: &[S],
    n: usize,
    m: usize,
    d: usize,
    heads: usize,
    causal: bool,
) -> (Vec<S>, Vec<S>) {
    let dh = d / heads;
    let scale = S::one() / S::from_f64(dh as f64).sqrt();
    let mut out = vec![S::zero(); n * d];
    let mut probs = vec![S::zero(); heads * n * m];
    let offset = m.saturating_sub(n);
    for h in 0..heads {
        let c0 = h * dh;
        for i in 0..n {
            let qi = &q[i * d + c0..i * d + c0 + dh];
            let visible = if causal { (i + offset + 1).min(m) } else { m };
            let prow = &mut probs[(h * n + i) * m..(h * n + i + 1) * m];
            for j in 0..visible {
                prow[j] = dot(qi, &k[j * d + c0..j * d + c0 + dh]) * scale;
            }
            softmax_in_place(&mut prow[..visible]);
            let orow = &mut out[i * d + c0..i * d + c0 + dh];
            for j in 0..visible {
                axpy(prow[j], &v[j * d + c0..j * d + c0 + dh], orow);
            }
        }
    }
    (out, probs)
}

pub fn all_finite<S: Scalar>(x: &[S]) -> bool {
    x.iter().all(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_matches_hand_computation() {
        // [1 2 3; 4 5 6] · [7 8; 9 10; 11 12] = [58 64; 139 154]
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [7.0f64, 8.0, 9.0, 10.0, 11.0, 12.0];
        assert_eq!(matmul(&a, &b, 2, 3, 2), vec![58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn transposed_variants_agree_with_plain_matmul() {
        let a: Vec<f64> = (0..6).map(|i| i as f64 * 0.5 - 1.0).collect(); // 2×3
        let b: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect(); // 3×4
        let plain = matmul(&a, &b, 2, 3, 4);
        let bt: Vec<f64> = (0..4)
            .flat_map(|j| (0..3).map(move |p| (p, j)))
            .map(|(p, j)| b[p * 4 + j])
            .collect();
        let nt = matmul_nt(&a, &bt, 2, 3, 4);
        let at: Vec<f64> = (0..3)
            .flat_map(|p| (0..2).map(move |i| (i, p)))
            .map(|(i, p)| a[i * 3 + p])
            .collect();
        let mut tn = vec![0.0; 8];
        matmul_tn_acc(&at, &b, &mut tn, 3, 2, 4);
        for ((x, y), z) in plain.iter().zip(&nt).zip(&tn) {
            assert!((x - y).abs() < 1e-12 && (x - z).abs() < 1e-12);
        }
    }

    #[test]
    fn dot_handles_tails() {
        let a: Vec<f64> = (0..19).map(|i| i as f64).collect();
        let want: f64 = a.iter().map(|x| x * x).sum();
        assert_eq!(dot(&a, &a), want);
    }

    #[test]
    fn causal_attention_first_query_sees_one_key() {
        let q = vec![1.0f64; 3 * 4];
        let k: Vec<f64> = (0..12).map(|i| i as f64 * 0.1).collect();
        let v: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let (out, probs) = attention(&q, &k, &v, 3, 3, 4, 2, true);
        assert_eq!(probs[0], 1.0);
        assert_eq!(&out[0..4], &v[0..4]);
    }
}

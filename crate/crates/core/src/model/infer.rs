//! Tape-free inference: encoder states and incremental greedy decoding with
//! cached keys and values.

use anchormt_numerics::kernels::{add_bias_in_place, attention, layer_norm, matmul, matmul_nt};
use anchormt_numerics::ParamId;

use super::forward::encoder_input;
use super::{AttnIds, FfIds, NormIds, SeqModel};
use crate::corpus::Lang;
use crate::subword::{BOS, EOS, MASK, PAD};

/// Encoder outputs for one sentence. `layers[l]` is the `len × d` output of
/// layer `l`; `memory` is the normalized top layer the decoder attends to.
#[derive(Clone, Debug)]
pub struct EncoderStates {
    pub layers: Vec<Vec<f32>>,
    pub memory: Vec<f32>,
    pub len: usize,
}

fn p(model: &SeqModel, id: ParamId) -> &[f32] {
    model.store.get(id).data()
}

fn linear(model: &SeqModel, x: &[f32], rows: usize, w: ParamId, b: ParamId) -> Vec<f32> {
    let wt = model.store.get(w);
    let (din, dout) = (wt.shape()[0], wt.shape()[1]);
    let mut y = matmul(x, wt.data(), rows, din, dout);
    add_bias_in_place(&mut y, p(model, b));
    y
}

fn norm(model: &SeqModel, x: &[f32], n: NormIds) -> Vec<f32> {
    layer_norm(x, p(model, n.gamma), p(model, n.beta))
}

fn feed_forward(model: &SeqModel, x: &[f32], rows: usize, f: FfIds) -> Vec<f32> {
    let mut h = linear(model, x, rows, f.w1, f.b1);
    h.iter_mut().for_each(|v| *v = v.max(0.0));
    linear(model, &h, rows, f.w2, f.b2)
}

fn add_into(x: &mut [f32], y: &[f32]) {
    for (a, b) in x.iter_mut().zip(y) {
        *a += b;
    }
}

fn embed(model: &SeqModel, ids: &[usize], first_pos: usize, lang: Lang) -> Vec<f32> {
    let d = model.config.model_dim;
    let table = p(model, model.layout.embed);
    let lang_row = &p(model, model.layout.lang_embed)[lang.index() * d..(lang.index() + 1) * d];
    let scale = (d as f64).sqrt() as f32;
    let pos = model.positions();
    let mut x = vec![0f32; ids.len() * d];
    for (i, &id) in ids.iter().enumerate() {
        let row = &mut x[i * d..(i + 1) * d];
        let e = &table[id * d..(id + 1) * d];
        let pe = &pos[(first_pos + i) * d..(first_pos + i + 1) * d];
        for j in 0..d {
            // Same association order as the graph: ((e·s) + pos) + lang.
            row[j] = (e[j] * scale + pe[j]) + lang_row[j];
        }
    }
    x
}

fn self_attention(model: &SeqModel, h: &[f32], n: usize, a: AttnIds, causal: bool) -> Vec<f32> {
    let q = linear(model, h, n, a.wq, a.bq);
    let k = linear(model, h, n, a.wk, a.bk);
    let v = linear(model, h, n, a.wv, a.bv);
    let d = model.config.model_dim;
    let (o, _) = attention(&q, &k, &v, n, n, d, model.config.num_heads, causal);
    linear(model, &o, n, a.wo, a.bo)
}

impl SeqModel {
    /// Encoder forward without dropout on `ids + EOS`.
    pub fn encode(&self, ids: &[usize], lang: Lang) -> EncoderStates {
        let input = encoder_input(ids, self.max_tokens());
        let n = input.len();
        let mut x = embed(self, &input, 0, lang);
        let mut layers = Vec::with_capacity(self.config.num_layers);
        for layer in &self.layout.encoder[lang.index()] {
            let h = norm(self, &x, layer.ln_attn);
            let a = self_attention(self, &h, n, layer.attn, false);
            add_into(&mut x, &a);
            let h = norm(self, &x, layer.ln_ff);
            let f = feed_forward(self, &h, n, layer.ff);
            add_into(&mut x, &f);
            layers.push(x.clone());
        }
        let memory = norm(self, &x, self.layout.encoder_norm[lang.index()]);
        EncoderStates { layers, memory, len: n }
    }

    /// Greedy argmax decoding until EOS or `max_out` tokens. PAD, BOS and MASK
    /// are never emitted.
    pub fn decode_greedy(&self, src: &[usize], src_lang: Lang, tgt_lang: Lang, max_out: usize) -> Vec<usize> {
        let enc = self.encode(src, src_lang);
        let mut dec = GreedyDecoder::new(self, &enc, tgt_lang);
        let limit = max_out.min(self.max_tokens());
        let mut out = Vec::new();
        let mut tok = BOS;
        while out.len() < limit {
            let logits = dec.step(tok);
            let next = argmax_allowed(&logits);
            if next == EOS {
                break;
            }
            out.push(next);
            tok = next;
        }
        out
    }
}

fn argmax_allowed(logits: &[f32]) -> usize {
    let mut best = EOS;
    let mut best_v = f32::NEG_INFINITY;
    for (i, &v) in logits.iter().enumerate() {
        if i == PAD || i == BOS || i == MASK {
            continue;
        }
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

struct LayerCache {
    self_k: Vec<f32>,
    self_v: Vec<f32>,
    cross_k: Vec<f32>,
    cross_v: Vec<f32>,
}

/// Incremental decoder state for one source sentence.
pub struct GreedyDecoder<'m> {
    model: &'m SeqModel,
    lang: Lang,
    caches: Vec<LayerCache>,
    memory_len: usize,
    pos: usize,
}

impl<'m> GreedyDecoder<'m> {
    pub fn new(model: &'m SeqModel, enc: &EncoderStates, lang: Lang) -> Self {
        let caches = model.layout.decoder[lang.index()]
            .iter()
            .map(|layer| LayerCache {
                self_k: Vec::new(),
                self_v: Vec::new(),
                cross_k: linear(model, &enc.memory, enc.len, layer.cross_attn.wk, layer.cross_attn.bk),
                cross_v: linear(model, &enc.memory, enc.len, layer.cross_attn.wv, layer.cross_attn.bv),
            })
            .collect();
        Self {
            model,
            lang,
            caches,
            memory_len: enc.len,
            pos: 0,
        }
    }

    /// Feeds one token and returns next-token logits.
    pub fn step(&mut self, token: usize) -> Vec<f32> {
        let m = self.model;
        let d = m.config.model_dim;
        let heads = m.config.num_heads;
        let mut x = embed(m, &[token], self.pos, self.lang);
        self.pos += 1;
        for (layer, cache) in m.layout.decoder[self.lang.index()].iter().zip(self.caches.iter_mut()) {
            let h = norm(m, &x, layer.ln_self);
            let a = layer.self_attn;
            let q = linear(m, &h, 1, a.wq, a.bq);
            cache.self_k.extend(linear(m, &h, 1, a.wk, a.bk));
            cache.self_v.extend(linear(m, &h, 1, a.wv, a.bv));
            let t = cache.self_k.len() / d;
            let (o, _) = attention(&q, &cache.self_k, &cache.self_v, 1, t, d, heads, true);
            add_into(&mut x, &linear(m, &o, 1, a.wo, a.bo));

            let h = norm(m, &x, layer.ln_cross);
            let c = layer.cross_attn;
            let q = linear(m, &h, 1, c.wq, c.bq);
            let (o, _) = attention(&q, &cache.cross_k, &cache.cross_v, 1, self.memory_len, d, heads, false);
            add_into(&mut x, &linear(m, &o, 1, c.wo, c.bo));

            let h = norm(m, &x, layer.ln_ff);
            add_into(&mut x, &feed_forward(m, &h, 1, layer.ff));
        }
        let h = norm(m, &x, m.layout.decoder_norm[self.lang.index()]);
        let mut logits = matmul_nt(&h, p(m, m.layout.embed), 1, d, m.config.vocab_size);
        add_bias_in_place(&mut logits, p(m, m.layout.out_bias));
        logits
    }
}

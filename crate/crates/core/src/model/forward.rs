//! Differentiable forward passes used for training.

use anchormt_numerics::{Gradients, Graph, ParamId, Scalar, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{AttnIds, FfIds, NormIds, SeqModel};
use crate::corpus::Lang;
use crate::error::Result;
use crate::rng;
use crate::subword::{BOS, EOS};

/// One training example.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Example {
    /// Teacher-forced translation of `input` into `output`.
    Translation {
        input: Vec<usize>,
        input_lang: Lang,
        output: Vec<usize>,
        output_lang: Lang,
    },
    /// Encoder-only cloze prediction; `targets[i]` is the original id at a
    /// selected position of `input`.
    Masked {
        input: Vec<usize>,
        lang: Lang,
        targets: Vec<Option<usize>>,
    },
}

pub(crate) struct Ctx<'a, 'p, S: Scalar> {
    pub model: &'a SeqModel<S>,
    pub g: &'a mut Graph<'p, S>,
    pub rng: Option<ChaCha8Rng>,
}

impl<S: Scalar> Ctx<'_, '_, S> {
    fn dropout(&mut self, x: Var) -> Result<Var> {
        let p = self.model.config.dropout;
        match self.rng.as_mut() {
            Some(r) if p > 0.0 => Ok(self.g.dropout(x, p, r)?),
            _ => Ok(x),
        }
    }

    fn linear(&mut self, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
        let w = self.g.param(w)?;
        let b = self.g.param(b)?;
        let y = self.g.matmul(x, w)?;
        Ok(self.g.add_bias(y, b)?)
    }

    fn norm(&mut self, x: Var, n: NormIds) -> Result<Var> {
        let gamma = self.g.param(n.gamma)?;
        let beta = self.g.param(n.beta)?;
        Ok(self.g.layer_norm(x, gamma, beta)?)
    }

    fn attention(&mut self, query: Var, memory: Var, a: AttnIds, causal: bool) -> Result<Var> {
        let q = self.linear(query, a.wq, a.bq)?;
        let k = self.linear(memory, a.wk, a.bk)?;
        let v = self.linear(memory, a.wv, a.bv)?;
        let o = self.g.attention(q, k, v, self.model.config.num_heads, causal)?;
        self.linear(o, a.wo, a.bo)
    }

    fn feed_forward(&mut self, x: Var, f: FfIds) -> Result<Var> {
        let h = self.linear(x, f.w1, f.b1)?;
        let h = self.g.relu(h)?;
        self.linear(h, f.w2, f.b2)
    }

    /// `x + dropout(sub(x))`
    fn residual(&mut self, x: Var, sub: Var) -> Result<Var> {
        let s = self.dropout(sub)?;
        Ok(self.g.add(x, s)?)
    }

    /// Scaled token embeddings plus positions plus the language embedding.
    fn embed(&mut self, ids: &[usize], lang: Lang) -> Result<Var> {
        let m = self.model;
        let d = m.config.model_dim;
        let table = self.g.param(m.layout.embed)?;
        let x = self.g.embedding(table, ids)?;
        let x = self.g.scale(x, S::from_f64((d as f64).sqrt()))?;
        let pos = Tensor::new(
            vec![ids.len(), d],
            m.positions()[..ids.len() * d].iter().map(|&v| S::from_f64(f64::from(v))).collect(),
        )?;
        let pos = self.g.constant(&pos)?;
        let x = self.g.add(x, pos)?;
        let langs = self.g.param(m.layout.lang_embed)?;
        let l = self.g.embedding(langs, &[lang.index()])?;
        let x = self.g.add_bias(x, l)?;
        self.dropout(x)
    }

    /// Runs the encoder on `ids + EOS`. Returns each layer's output and the
    /// normalized final memory.
    pub fn encode(&mut self, ids: &[usize], lang: Lang) -> Result<(Vec<Var>, Var)> {
        let m = self.model;
        let input = encoder_input(ids, m.max_tokens());
        let mut x = self.embed(&input, lang)?;
        let mut states = Vec::with_capacity(m.config.num_layers);
        for layer in &m.layout.encoder[lang.index()] {
            let h = self.norm(x, layer.ln_attn)?;
            let a = self.attention(h, h, layer.attn, false)?;
            x = self.residual(x, a)?;
            let h = self.norm(x, layer.ln_ff)?;
            let f = self.feed_forward(h, layer.ff)?;
            x = self.residual(x, f)?;
            states.push(x);
        }
        let memory = self.norm(x, m.layout.encoder_norm[lang.index()])?;
        Ok((states, memory))
    }

    /// Output logits for `BOS + prefix` attending to `memory`.
    pub fn decode(&mut self, memory: Var, prefix: &[usize], lang: Lang) -> Result<Var> {
        let m = self.model;
        let mut input = Vec::with_capacity(prefix.len() + 1);
        input.push(BOS);
        input.extend_from_slice(prefix);
        let mut y = self.embed(&input, lang)?;
        for layer in &m.layout.decoder[lang.index()] {
            let h = self.norm(y, layer.ln_self)?;
            let a = self.attention(h, h, layer.self_attn, true)?;
            y = self.residual(y, a)?;
            let h = self.norm(y, layer.ln_cross)?;
            let c = self.attention(h, memory, layer.cross_attn, false)?;
            y = self.residual(y, c)?;
            let h = self.norm(y, layer.ln_ff)?;
            let f = self.feed_forward(h, layer.ff)?;
            y = self.residual(y, f)?;
        }
        let h = self.norm(y, m.layout.decoder_norm[lang.index()])?;
        self.project(h)
    }

    /// Tied output projection: `h · Eᵀ + b`.
    pub fn project(&mut self, h: Var) -> Result<Var> {
        let table = self.g.param(self.model.layout.embed)?;
        let bias = self.g.param(self.model.layout.out_bias)?;
        let logits = self.g.matmul_nt(h, table)?;
        Ok(self.g.add_bias(logits, bias)?)
    }

    pub fn loss(&mut self, ex: &Example) -> Result<Var> {
        match ex {
            Example::Translation {
                input,
                input_lang,
                output,
                output_lang,
            } => {
                let (_, memory) = self.encode(input, *input_lang)?;
                let out = &output[..output.len().min(self.model.max_tokens())];
                let logits = self.decode(memory, out, *output_lang)?;
                let targets: Vec<Option<usize>> = out.iter().copied().chain([EOS]).map(Some).collect();
                Ok(self.g.cross_entropy(logits, &targets)?)
            }
            Example::Masked { input, lang, targets } => {
                let (_, memory) = self.encode(input, *lang)?;
                let logits = self.project(memory)?;
                let n = self.g.shape(logits).0;
                let t: Vec<Option<usize>> = (0..n).map(|i| targets.get(i).copied().flatten()).collect();
                Ok(self.g.cross_entropy(logits, &t)?)
            }
        }
    }
}

pub(crate) fn encoder_input(ids: &[usize], max_tokens: usize) -> Vec<usize> {
    let n = ids.len().min(max_tokens);
    let mut v = Vec::with_capacity(n + 1);
    v.extend_from_slice(&ids[..n]);
    v.push(EOS);
    v
}

/// Mean-over-batch gradients and per-example losses.
pub struct BatchGradients<S> {
    pub grads: Gradients<S>,
    pub losses: Vec<f64>,
}

impl<S> BatchGradients<S> {
    pub fn mean_loss(&self) -> f64 {
        if self.losses.is_empty() {
            0.0
        } else {
            self.losses.iter().sum::<f64>() / self.losses.len() as f64
        }
    }
}

fn example_gradients<S: Scalar>(
    model: &SeqModel<S>,
    ex: &Example,
    dropout_seed: Option<u64>,
    out: &mut Gradients<S>,
) -> Result<f64> {
    let mut g = Graph::new(&model.store);
    let mut ctx = Ctx {
        model,
        g: &mut g,
        rng: dropout_seed.map(ChaCha8Rng::seed_from_u64),
    };
    let loss = ctx.loss(ex)?;
    let value = g.value(loss)[0].as_f64();
    g.backward(loss, out)?;
    Ok(value)
}

/// Gradients of the mean loss over `batch`. Dropout is active when `seed` is
/// given; example `i` draws its mask from a sub-stream of `seed` indexed by `i`.
/// Per-example gradients are summed in batch order, so the result does not
/// depend on `parallel`.
pub fn batch_gradients<S: Scalar>(
    model: &SeqModel<S>,
    batch: &[Example],
    seed: Option<u64>,
    parallel: bool,
) -> Result<BatchGradients<S>> {
    let mut total = Gradients::zeros_like(&model.store);
    let mut losses = Vec::with_capacity(batch.len());
    let seed_of = |i: usize| seed.map(|s| rng::sub_seed(s, "dropout", i as u64));
    if parallel && batch.len() > 1 {
        let parts: Vec<Result<(Gradients<S>, f64)>> = batch
            .par_iter()
            .enumerate()
            .map(|(i, ex)| {
                let mut gr = Gradients::zeros_like(&model.store);
                let l = example_gradients(model, ex, seed_of(i), &mut gr)?;
                Ok((gr, l))
            })
            .collect();
        for part in parts {
            let (gr, l) = part?;
            total.add_assign(&gr);
            losses.push(l);
        }
    } else {
        let mut scratch = Gradients::zeros_like(&model.store);
        for (i, ex) in batch.iter().enumerate() {
            scratch.zero();
            losses.push(example_gradients(model, ex, seed_of(i), &mut scratch)?);
            total.add_assign(&scratch);
        }
    }
    if !batch.is_empty() {
        total.scale(S::from_f64(1.0 / batch.len() as f64));
    }
    Ok(BatchGradients { grads: total, losses })
}

/// Loss of one example without dropout or backpropagation.
pub fn example_loss<S: Scalar>(model: &SeqModel<S>, ex: &Example) -> Result<f64> {
    let mut g = Graph::new(&model.store);
    let mut ctx = Ctx {
        model,
        g: &mut g,
        rng: None,
    };
    let loss = ctx.loss(ex)?;
    Ok(g.value(loss)[0].as_f64())
}

/// Teacher-forced decoder logits for `BOS + prefix`, one row per position.
pub fn forward_logits<S: Scalar>(
    model: &SeqModel<S>,
    src: &[usize],
    src_lang: Lang,
    prefix: &[usize],
    tgt_lang: Lang,
) -> Result<Tensor<S>> {
    let mut g = Graph::new(&model.store);
    let mut ctx = Ctx {
        model,
        g: &mut g,
        rng: None,
    };
    let (_, memory) = ctx.encode(src, src_lang)?;
    let logits = ctx.decode(memory, prefix, tgt_lang)?;
    Ok(g.tensor(logits))
}

/// Per-layer encoder outputs computed through the graph.
pub fn forward_encoder_states<S: Scalar>(model: &SeqModel<S>, src: &[usize], lang: Lang) -> Result<Vec<Tensor<S>>> {
    let mut g = Graph::new(&model.store);
    let mut ctx = Ctx {
        model,
        g: &mut g,
        rng: None,
    };
    let (states, _) = ctx.encode(src, lang)?;
    Ok(states.into_iter().map(|v| g.tensor(v)).collect())
}

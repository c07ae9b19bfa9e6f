//! Encoder-decoder transformer with language-private boundary layers.
//!
//! Both languages read and write through one embedding table, which also serves
//! as the output projection. Encoder layers below `encoder_private_bottom` and
//! decoder layers at or above `num_layers - decoder_private_top` exist once per
//! language; every other layer is a single set of parameters referenced by both
//! language paths.

mod forward;
mod gradcheck;
mod infer;

use std::fs;
use std::path::{Path, PathBuf};

use anchormt_numerics::{load_checkpoint, save_checkpoint, ParamId, ParamStore, Scalar, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Lang;
use crate::error::{data_err, io_err, Result};
use crate::rng;

pub use forward::{batch_gradients, example_loss, forward_encoder_states, forward_logits, BatchGradients, Example};
pub use gradcheck::model_gradient_check;
pub use infer::{EncoderStates, GreedyDecoder};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShareSpec {
    /// Encoder layers, counted from the bottom, that are private per language.
    pub encoder_private_bottom: usize,
    /// Decoder layers, counted from the top, that are private per language.
    pub decoder_private_top: usize,
}

impl Default for ShareSpec {
    fn default() -> Self {
        Self {
            encoder_private_bottom: 1,
            decoder_private_top: 1,
        }
    }
}

impl ShareSpec {
    pub fn all_private(num_layers: usize) -> Self {
        Self {
            encoder_private_bottom: num_layers,
            decoder_private_top: num_layers,
        }
    }

    pub fn all_shared() -> Self {
        Self {
            encoder_private_bottom: 0,
            decoder_private_top: 0,
        }
    }

    pub fn encoder_layer_shared(&self, layer: usize) -> bool {
        layer >= self.encoder_private_bottom
    }

    pub fn decoder_layer_shared(&self, layer: usize, num_layers: usize) -> bool {
        layer + self.decoder_private_top < num_layers
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub model_dim: usize,
    pub ff_dim: usize,
    pub num_heads: usize,
    /// Longest sequence either stack accepts, including BOS/EOS.
    pub max_len: usize,
    pub vocab_size: usize,
    pub share: ShareSpec,
    pub dropout: f64,
    /// Recorded for completeness; greedy argmax decoding is unaffected by it.
    pub length_penalty: f64,
}

impl ModelConfig {
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            num_layers: 4,
            model_dim: 64,
            ff_dim: 256,
            num_heads: 4,
            max_len: 64,
            vocab_size,
            share: ShareSpec::default(),
            dropout: 0.1,
            length_penalty: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(crate::Error::Config(m));
        if self.num_layers == 0 || self.model_dim == 0 || self.ff_dim == 0 || self.num_heads == 0 {
            return bad("model dimensions must be positive".into());
        }
        if self.model_dim % self.num_heads != 0 {
            return bad(format!(
                "model_dim {} not divisible by num_heads {}",
                self.model_dim, self.num_heads
            ));
        }
        if self.share.encoder_private_bottom > self.num_layers || self.share.decoder_private_top > self.num_layers {
            return bad("layer sharing exceeds the number of layers".into());
        }
        if self.max_len < 2 {
            return bad("max_len must be at least 2".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NormIds {
    pub gamma: ParamId,
    pub beta: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttnIds {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FfIds {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncLayerIds {
    pub ln_attn: NormIds,
    pub attn: AttnIds,
    pub ln_ff: NormIds,
    pub ff: FfIds,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecLayerIds {
    pub ln_self: NormIds,
    pub self_attn: AttnIds,
    pub ln_cross: NormIds,
    pub cross_attn: AttnIds,
    pub ln_ff: NormIds,
    pub ff: FfIds,
}

/// Parameter handles for each language path. Shared layers hold the same ids
/// in both paths.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub embed: ParamId,
    pub out_bias: ParamId,
    pub lang_embed: ParamId,
    pub encoder: [Vec<EncLayerIds>; 2],
    pub encoder_norm: [NormIds; 2],
    pub decoder: [Vec<DecLayerIds>; 2],
    pub decoder_norm: [NormIds; 2],
}

struct Builder<'a> {
    store: &'a mut ParamStore<f32>,
    rng: &'a mut ChaCha8Rng,
}

impl Builder<'_> {
    fn xavier(&mut self, name: String, rows: usize, cols: usize) -> ParamId {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let t = Tensor::from_fn(vec![rows, cols], |_| self.rng.random_range(-limit..limit) as f32);
        self.store.add(name, t)
    }

    fn filled(&mut self, name: String, rows: usize, cols: usize, v: f32) -> ParamId {
        self.store.add(name, Tensor::from_fn(vec![rows, cols], |_| v))
    }

    fn norm(&mut self, prefix: &str, d: usize) -> NormIds {
        NormIds {
            gamma: self.filled(format!("{prefix}.gamma"), 1, d, 1.0),
            beta: self.filled(format!("{prefix}.beta"), 1, d, 0.0),
        }
    }

    fn attn(&mut self, prefix: &str, d: usize) -> AttnIds {
        AttnIds {
            wq: self.xavier(format!("{prefix}.wq"), d, d),
            bq: self.filled(format!("{prefix}.bq"), 1, d, 0.0),
            wk: self.xavier(format!("{prefix}.wk"), d, d),
            bk: self.filled(format!("{prefix}.bk"), 1, d, 0.0),
            wv: self.xavier(format!("{prefix}.wv"), d, d),
            bv: self.filled(format!("{prefix}.bv"), 1, d, 0.0),
            wo: self.xavier(format!("{prefix}.wo"), d, d),
            bo: self.filled(format!("{prefix}.bo"), 1, d, 0.0),
        }
    }

    fn ff(&mut self, prefix: &str, d: usize, f: usize) -> FfIds {
        FfIds {
            w1: self.xavier(format!("{prefix}.w1"), d, f),
            b1: self.filled(format!("{prefix}.b1"), 1, f, 0.0),
            w2: self.xavier(format!("{prefix}.w2"), f, d),
            b2: self.filled(format!("{prefix}.b2"), 1, d, 0.0),
        }
    }
}

fn owner(shared: bool, lang: Lang) -> &'static str {
    if shared {
        "shared"
    } else {
        lang.as_str()
    }
}

impl Layout {
    fn build(cfg: &ModelConfig, store: &mut ParamStore<f32>, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.model_dim;
        let mut b = Builder { store, rng };
        let std = (d as f64).powf(-0.5);
        let embed = {
            let t = Tensor::from_fn(vec![cfg.vocab_size, d], |_| {
                (b.rng.random_range(-1.0..1.0) * std * 3f64.sqrt()) as f32
            });
            b.store.add("embed", t)
        };
        let out_bias = b.filled("out_bias".into(), 1, cfg.vocab_size, 0.0);
        let lang_embed = {
            let t = Tensor::from_fn(vec![2, d], |_| (b.rng.random_range(-1.0..1.0) * std) as f32);
            b.store.add("lang_embed", t)
        };

        let mut encoder: [Vec<EncLayerIds>; 2] = [Vec::new(), Vec::new()];
        let mut decoder: [Vec<DecLayerIds>; 2] = [Vec::new(), Vec::new()];
        for l in 0..cfg.num_layers {
            let shared = cfg.share.encoder_layer_shared(l);
            for lang in Lang::BOTH {
                if shared && lang == Lang::Tgt {
                    let ids = encoder[0][l];
                    encoder[1].push(ids);
                    continue;
                }
                let p = format!("enc.{l}.{}", owner(shared, lang));
                let ids = EncLayerIds {
                    ln_attn: b.norm(&format!("{p}.ln_attn"), d),
                    attn: b.attn(&format!("{p}.attn"), d),
                    ln_ff: b.norm(&format!("{p}.ln_ff"), d),
                    ff: b.ff(&format!("{p}.ff"), d, cfg.ff_dim),
                };
                encoder[lang.index()].push(ids);
            }
        }
        let top_enc_shared = cfg.share.encoder_layer_shared(cfg.num_layers - 1);
        let encoder_norm = norms_for(&mut b, "enc.norm", top_enc_shared, d);
        for l in 0..cfg.num_layers {
            let shared = cfg.share.decoder_layer_shared(l, cfg.num_layers);
            for lang in Lang::BOTH {
                if shared && lang == Lang::Tgt {
                    let ids = decoder[0][l];
                    decoder[1].push(ids);
                    continue;
                }
                let p = format!("dec.{l}.{}", owner(shared, lang));
                let ids = DecLayerIds {
                    ln_self: b.norm(&format!("{p}.ln_self"), d),
                    self_attn: b.attn(&format!("{p}.self_attn"), d),
                    ln_cross: b.norm(&format!("{p}.ln_cross"), d),
                    cross_attn: b.attn(&format!("{p}.cross_attn"), d),
                    ln_ff: b.norm(&format!("{p}.ln_ff"), d),
                    ff: b.ff(&format!("{p}.ff"), d, cfg.ff_dim),
                };
                decoder[lang.index()].push(ids);
            }
        }
        let top_dec_shared = cfg.share.decoder_layer_shared(cfg.num_layers - 1, cfg.num_layers);
        let decoder_norm = norms_for(&mut b, "dec.norm", top_dec_shared, d);
        Layout {
            embed,
            out_bias,
            lang_embed,
            encoder,
            encoder_norm,
            decoder,
            decoder_norm,
        }
    }
}

fn norms_for(b: &mut Builder<'_>, prefix: &str, shared: bool, d: usize) -> [NormIds; 2] {
    if shared {
        let n = b.norm(&format!("{prefix}.shared"), d);
        [n, n]
    } else {
        [b.norm(&format!("{prefix}.src"), d), b.norm(&format!("{prefix}.tgt"), d)]
    }
}

/// Sinusoidal position table, `max_len × d`.
pub fn positional_table(max_len: usize, d: usize) -> Vec<f32> {
    let mut t = vec![0f32; max_len * d];
    for pos in 0..max_len {
        for i in 0..d / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d as f64);
            t[pos * d + 2 * i] = angle.sin() as f32;
            t[pos * d + 2 * i + 1] = angle.cos() as f32;
        }
        if d % 2 == 1 {
            t[pos * d + d - 1] = (pos as f64 / 10000f64.powf((d - 1) as f64 / d as f64)).sin() as f32;
        }
    }
    t
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    SeqModel,
    AcpEncoder,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    kind: CheckpointKind,
    config: ModelConfig,
}

#[derive(Clone, Debug)]
pub struct SeqModel<S: Scalar = f32> {
    pub config: ModelConfig,
    pub store: ParamStore<S>,
    pub layout: Layout,
    positions: Vec<f32>,
}

impl<S: Scalar> SeqModel<S> {
    pub fn num_parameters(&self) -> usize {
        self.store.num_elements()
    }

    pub fn positions(&self) -> &[f32] {
        &self.positions
    }

    /// Longest id sequence (without BOS/EOS) the model accepts.
    pub fn max_tokens(&self) -> usize {
        self.config.max_len - 1
    }

    pub fn cast<T: Scalar>(&self) -> SeqModel<T> {
        SeqModel {
            config: self.config.clone(),
            store: self.store.cast(),
            layout: self.layout.clone(),
            positions: self.positions.clone(),
        }
    }
}

impl SeqModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut r = rng::stream(seed, "model.init");
        let layout = Layout::build(&config, &mut store, &mut r);
        let positions = positional_table(config.max_len, config.model_dim);
        Ok(Self {
            config,
            store,
            layout,
            positions,
        })
    }

    pub fn save(&self, path: &Path, kind: CheckpointKind) -> Result<()> {
        save_checkpoint(&self.store, path)?;
        let side = Sidecar {
            kind,
            config: self.config.clone(),
        };
        let p = sidecar_path(path);
        fs::write(&p, serde_json::to_string_pretty(&side).expect("sidecar serializes")).map_err(io_err(p))
    }

    pub fn load(path: &Path) -> Result<(Self, CheckpointKind)> {
        let p = sidecar_path(path);
        let text = fs::read_to_string(&p).map_err(io_err(&p))?;
        let side: Sidecar = serde_json::from_str(&text)
            .map_err(|e| crate::Error::Data(format!("{}: {e}", p.display())))?;
        let mut model = SeqModel::new(side.config, 0)?;
        let loaded: ParamStore<f32> = load_checkpoint(path)?;
        model.copy_from(&loaded, |_| true)?;
        Ok((model, side.kind))
    }

    /// Copies every parameter accepted by `filter` from `source` by name.
    /// Missing names and shape mismatches are reported together.
    pub fn copy_from(&mut self, source: &ParamStore<f32>, filter: impl Fn(&str) -> bool) -> Result<usize> {
        let mut problems = Vec::new();
        let mut copies = Vec::new();
        for (id, p) in self.store.iter() {
            if !filter(&p.name) {
                continue;
            }
            match source.find(&p.name) {
                None => problems.push(format!("{}: missing", p.name)),
                Some(sid) => {
                    let t = source.get(sid);
                    if t.shape() != p.tensor.shape() {
                        problems.push(format!("{}: {:?} vs {:?}", p.name, p.tensor.shape(), t.shape()));
                    } else {
                        copies.push((id, sid));
                    }
                }
            }
        }
        if !problems.is_empty() {
            return data_err(format!("incompatible parameters: {}", problems.join(", ")));
        }
        for &(id, sid) in &copies {
            self.store.assign(id, source.get(sid))?;
        }
        Ok(copies.len())
    }
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

#[cfg(test)]
mod tests;

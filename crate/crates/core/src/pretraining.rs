//! Masked-language-model pretraining on anchored corpora, and encoder
//! initialization of translation models from a pretrained checkpoint.

use std::time::Instant;

use anchormt_numerics::AdamConfig;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Lang, SentenceTokens};
use crate::dictionary::{anchor_sentence, BilingualDictionary};
use crate::error::{data_err, Error, Result};
use crate::model::{Example, SeqModel};
use crate::rng;
use crate::subword::{BpeCodec, IdSequence, MASK, NUM_SPECIALS};
use crate::training::{Sampler, TrainState, ViewSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct AcpConfig {
    pub mask_prob: f64,
    /// Fractions of selected positions replaced by MASK, by a random token, and kept.
    pub mask_split: [f64; 3],
    pub steps: usize,
    pub batch_size: usize,
    pub log_every: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub parallel: bool,
}

impl Default for AcpConfig {
    fn default() -> Self {
        Self {
            mask_prob: 0.15,
            mask_split: [0.8, 0.1, 0.1],
            steps: 2000,
            batch_size: 32,
            log_every: 100,
            adam: AdamConfig::default(),
            seed: 1,
            parallel: false,
        }
    }
}

impl AcpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mask_prob > 0.0 && self.mask_prob < 1.0) {
            return Err(Error::Config(format!("mask_prob {} outside (0, 1)", self.mask_prob)));
        }
        if self.mask_split.iter().any(|&p| p < 0.0) || (self.mask_split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("mask split must be non-negative and sum to 1".into()));
        }
        if self.batch_size == 0 || self.log_every == 0 {
            return Err(Error::Config("batch_size and log_every must be positive".into()));
        }
        Ok(())
    }
}

/// One pretraining sentence tagged with the language embedding it is fed with.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlmSentence {
    pub ids: IdSequence,
    pub lang: Lang,
}

/// Anchored non-pivot sentences plus raw pivot sentences, shuffled with `seed`.
/// An empty dictionary gives the plain bilingual concatenation.
pub fn build_acp_corpus(
    view: ViewSpec,
    non_pivot: &[SentenceTokens],
    pivot: &[SentenceTokens],
    dict: &BilingualDictionary,
    codec: &BpeCodec,
    max_tokens: usize,
    seed: u64,
) -> Result<Vec<MlmSentence>> {
    if non_pivot.is_empty() || pivot.is_empty() {
        return data_err("pretraining needs non-empty corpora on both sides");
    }
    if !dict.is_empty() && dict.direction != (view.anchored_lang(), view.pivot) {
        return Err(Error::Config(format!(
            "dictionary direction {:?} does not anchor {} into {}",
            dict.direction,
            view.anchored_lang(),
            view.pivot
        )));
    }
    let enc = |s: &SentenceTokens| {
        let mut ids = codec.apply(s);
        ids.truncate(max_tokens);
        ids
    };
    let mut out: Vec<MlmSentence> = non_pivot
        .iter()
        .map(|s| MlmSentence {
            ids: enc(&anchor_sentence(s, dict)),
            lang: view.anchored_lang(),
        })
        .chain(pivot.iter().map(|s| MlmSentence {
            ids: enc(s),
            lang: view.pivot,
        }))
        .collect();
    out.shuffle(&mut rng::stream(seed, "acp.corpus"));
    Ok(out)
}

/// Selects about `mask_prob` of the non-special positions (at least one when
/// any exists) and corrupts them per the split. Returns the corrupted input and
/// the original ids at the selected positions.
pub fn mask_sentence<R: Rng + ?Sized>(
    ids: &[usize],
    cfg: &AcpConfig,
    vocab_size: usize,
    r: &mut R,
) -> (Vec<usize>, Vec<Option<usize>>) {
    let eligible: Vec<usize> = (0..ids.len()).filter(|&i| ids[i] >= NUM_SPECIALS).collect();
    let mut selected: Vec<usize> = eligible.iter().copied().filter(|_| r.random_bool(cfg.mask_prob)).collect();
    if selected.is_empty() && !eligible.is_empty() {
        selected.push(eligible[r.random_range(0..eligible.len())]);
    }
    let mut input = ids.to_vec();
    let mut targets = vec![None; ids.len()];
    for &i in &selected {
        targets[i] = Some(ids[i]);
        let u: f64 = r.random();
        if u < cfg.mask_split[0] {
            input[i] = MASK;
        } else if u < cfg.mask_split[0] + cfg.mask_split[1] {
            input[i] = r.random_range(NUM_SPECIALS..vocab_size);
        }
    }
    (input, targets)
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct MlmLog {
    /// (step, mean loss over the preceding `log_every` steps)
    pub losses: Vec<(usize, f64)>,
    pub skipped_updates: usize,
    pub seconds: f64,
}

/// Cloze training of the encoder and tied output projection.
pub fn pretrain_mlm(model: &mut SeqModel, corpus: &[MlmSentence], cfg: &AcpConfig) -> Result<MlmLog> {
    cfg.validate()?;
    if corpus.is_empty() {
        return data_err("empty pretraining corpus");
    }
    let vocab = model.config.vocab_size;
    let mut state = TrainState::new(model, cfg.adam.clone(), rng::sub_seed(cfg.seed, "acp", 0), cfg.parallel);
    let mut sampler = Sampler::new(corpus.len(), rng::stream(cfg.seed, "acp.order"));
    let mut mask_rng = rng::stream(cfg.seed, "acp.mask");
    let mut log = MlmLog::default();
    let mut window = Vec::new();
    let start = Instant::now();
    for step in 1..=cfg.steps {
        let batch: Vec<Example> = sampler
            .take(cfg.batch_size)
            .into_iter()
            .map(|i| &corpus[i])
            .filter(|s| !s.ids.is_empty())
            .map(|s| {
                let (input, targets) = mask_sentence(&s.ids.ids, cfg, vocab, &mut mask_rng);
                Example::Masked {
                    input,
                    lang: s.lang,
                    targets,
                }
            })
            .collect();
        if let Some(l) = state.update(model, &batch, 1.0)? {
            window.push(l);
        }
        if step % cfg.log_every == 0 && !window.is_empty() {
            let mean = window.iter().sum::<f64>() / window.len() as f64;
            log::info!("mlm step {step}: loss {mean:.3} ({:.0}s)", start.elapsed().as_secs_f64());
            log.losses.push((step, mean));
            window.clear();
        }
    }
    log.skipped_updates = state.skipped;
    log.seconds = start.elapsed().as_secs_f64();
    Ok(log)
}

fn is_encoder_param(name: &str) -> bool {
    name.starts_with("enc.") || name == "embed" || name == "lang_embed"
}

/// Copies the encoder stack, the shared embedding table and the language
/// embeddings from a pretrained model; the decoder and output bias stay as
/// initialized. Returns the number of copied tensors.
pub fn init_at_from_acp(model: &mut SeqModel, pretrained: &SeqModel) -> Result<usize> {
    model.copy_from(&pretrained.store, is_encoder_param)
}

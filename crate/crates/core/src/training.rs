//! Anchored training: mutual back-translation plus denoising with the anchored
//! side always on the encoder input, and the bi-view combination of two views.

use std::io::Write;
use std::time::Instant;

use anchormt_numerics::{AdamConfig, AdamState, NumericsError, Scalar, StepOutcome};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Lang, SentenceTokens};
use crate::dictionary::{anchor_sentence, BilingualDictionary};
use crate::error::{data_err, Error, Result};
use crate::eval::bleu::bleu;
use crate::model::{batch_gradients, Example, SeqModel};
use crate::noise::{corrupt, NoiseConfig};
use crate::rng;
use crate::subword::{BpeCodec, IdSequence};

#[derive(Clone, Debug, PartialEq)]
pub struct AtConfig {
    pub batch_size: usize,
    /// Weight of the denoising updates; `0` disables them.
    pub denoise_weight: f64,
    /// Upper bound on rounds.
    pub max_steps: usize,
    /// Rounds between validation evaluations.
    pub eval_every: usize,
    /// Evaluations without an improvement above `min_delta` before stopping.
    pub patience: usize,
    pub min_delta: f64,
    /// Generation batch size in the bi-view combination, as a multiple of `batch_size`.
    pub biview_gen_batch_multiplier: usize,
    /// Upper bound on bi-view combination rounds.
    pub biview_max_steps: usize,
    pub biview_denoise: bool,
    pub noise: NoiseConfig,
    pub adam: AdamConfig,
    /// Validation sentences used per evaluation.
    pub val_sentences: usize,
    pub seed: u64,
    /// Data-parallel gradient and generation work through rayon.
    pub parallel: bool,
}

impl Default for AtConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            denoise_weight: 1.0,
            max_steps: 100_000,
            eval_every: 500,
            patience: 5,
            min_delta: 0.2,
            biview_gen_batch_multiplier: 4,
            biview_max_steps: 100_000,
            biview_denoise: true,
            noise: NoiseConfig::default(),
            adam: AdamConfig::default(),
            val_sentences: 500,
            seed: 1,
            parallel: false,
        }
    }
}

impl AtConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.eval_every == 0 || self.patience == 0 || self.biview_gen_batch_multiplier == 0 {
            return Err(Error::Config(
                "batch_size, eval_every, patience and biview_gen_batch_multiplier must be positive".into(),
            ));
        }
        if self.denoise_weight < 0.0 || !(0.0..1.0).contains(&self.noise.drop_prob) {
            return Err(Error::Config("invalid denoise weight or drop probability".into()));
        }
        Ok(())
    }
}

/// Which language anchors are written in. The other language's sentences are
/// the ones that get anchored.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewSpec {
    pub pivot: Lang,
}

impl ViewSpec {
    pub fn anchored_lang(self) -> Lang {
        self.pivot.other()
    }
}

/// Training pair whose input was produced by a model and whose output comes
/// from a corpus.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PseudoPair {
    pub input: IdSequence,
    pub output: IdSequence,
    pub direction: (Lang, Lang),
}

impl PseudoPair {
    fn example(&self) -> Example {
        Example::Translation {
            input: self.input.ids.clone(),
            input_lang: self.direction.0,
            output: self.output.ids.clone(),
            output_lang: self.direction.1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ValidationPair {
    /// Encoded model input, already anchored where the view requires it.
    pub input: IdSequence,
    pub reference: Vec<String>,
}

/// Encoded corpora for one view.
#[derive(Clone, Debug)]
pub struct ViewData {
    pub view: ViewSpec,
    /// Sentences of the non-pivot language, anchored into the pivot.
    pub anchored: Vec<IdSequence>,
    /// Raw sentences of the pivot language.
    pub raw: Vec<IdSequence>,
    /// Anchored non-pivot inputs with pivot-language references.
    pub validation: Vec<ValidationPair>,
}

impl ViewData {
    /// Anchors and encodes corpora for `view`. `dict` maps the non-pivot
    /// language into the pivot; `validation` holds (non-pivot, pivot) sentence pairs.
    pub fn build(
        view: ViewSpec,
        non_pivot: &[SentenceTokens],
        pivot: &[SentenceTokens],
        dict: &BilingualDictionary,
        codec: &BpeCodec,
        validation: &[(SentenceTokens, SentenceTokens)],
        max_tokens: usize,
    ) -> Result<Self> {
        if dict.direction != (view.anchored_lang(), view.pivot) {
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
        let anchored: Vec<IdSequence> = non_pivot
            .iter()
            .map(|s| enc(&anchor_sentence(s, dict)))
            .filter(|s| !s.is_empty())
            .collect();
        let raw: Vec<IdSequence> = pivot.iter().map(enc).filter(|s| !s.is_empty()).collect();
        let validation = validation
            .iter()
            .map(|(i, r)| ValidationPair {
                input: enc(&anchor_sentence(i, dict)),
                reference: r.tokens.clone(),
            })
            .collect();
        Ok(Self {
            view,
            anchored,
            raw,
            validation,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub step: usize,
    /// Back-translation loss of anchored → pivot.
    pub bt_fwd: Option<f64>,
    /// Back-translation loss of pivot → anchored.
    pub bt_bwd: Option<f64>,
    pub denoise: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_bleu: Option<f64>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub rounds: Vec<RoundLog>,
    pub best_val_bleu: Option<f64>,
    pub best_step: usize,
    pub skipped_updates: usize,
    pub seconds: f64,
}

impl TrainLog {
    pub fn write_jsonl(&self, out: &mut impl Write) -> std::io::Result<()> {
        for r in &self.rounds {
            writeln!(out, "{}", serde_json::to_string(r).expect("log serializes"))?;
        }
        Ok(())
    }
}

/// Optimizer plus the counters that make runs reproducible.
pub struct TrainState {
    pub adam: AdamState<f32>,
    pub updates: u64,
    pub skipped: usize,
    seed: u64,
    parallel: bool,
}

impl TrainState {
    pub fn new(model: &SeqModel, adam: AdamConfig, seed: u64, parallel: bool) -> Self {
        Self {
            adam: AdamState::new(&model.store, adam),
            updates: 0,
            skipped: 0,
            seed,
            parallel,
        }
    }

    /// One optimizer update on the mean loss of `batch`, scaled by `weight`.
    /// Returns the pre-update loss, or `None` when the update was skipped
    /// because of a non-finite value.
    pub fn update(&mut self, model: &mut SeqModel, batch: &[Example], weight: f64) -> Result<Option<f64>> {
        if batch.is_empty() || weight == 0.0 {
            return Ok(None);
        }
        let seed = rng::sub_seed(self.seed, "train.dropout", self.updates);
        self.updates += 1;
        let mut bg = match batch_gradients(model, batch, Some(seed), self.parallel) {
            Ok(bg) => bg,
            Err(Error::Numeric(NumericsError::NonFinite { op })) => {
                log::warn!("update {} skipped: non-finite value in {op}", self.updates);
                self.skipped += 1;
                return Ok(None);
            }
            Err(e) => return Err(e),
        };
        if weight != 1.0 {
            bg.grads.scale(f32::from_f64(weight));
        }
        match self.adam.step(&mut model.store, &bg.grads) {
            StepOutcome::Applied { .. } => Ok(Some(bg.mean_loss())),
            StepOutcome::SkippedNonFinite => {
                log::warn!("update {} skipped: non-finite gradient", self.updates);
                self.skipped += 1;
                Ok(None)
            }
        }
    }
}

/// Cycles through a corpus in freshly shuffled epochs.
pub struct Sampler {
    order: Vec<usize>,
    next: usize,
    rng: ChaCha8Rng,
}

impl Sampler {
    pub fn new(len: usize, rng: ChaCha8Rng) -> Self {
        Self {
            order: (0..len).collect(),
            next: len,
            rng,
        }
    }

    pub fn take(&mut self, n: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(n);
        if self.order.is_empty() {
            return out;
        }
        while out.len() < n {
            if self.next == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.next = 0;
            }
            out.push(self.order[self.next]);
            self.next += 1;
        }
        out
    }
}

pub fn max_decode_len(input_len: usize, max_tokens: usize) -> usize {
    (input_len * 3 / 2 + 4).min(max_tokens)
}

/// Greedy translations of each input, computed on the model as it is now.
pub fn generate(model: &SeqModel, inputs: &[&IdSequence], from: Lang, to: Lang, parallel: bool) -> Vec<IdSequence> {
    let run = |s: &&IdSequence| {
        let out = model.decode_greedy(&s.ids, from, to, max_decode_len(s.len(), model.max_tokens()));
        IdSequence::plain(out)
    };
    if parallel {
        inputs.par_iter().map(run).collect()
    } else {
        inputs.iter().map(run).collect()
    }
}

fn denoise_examples(batch: &[&IdSequence], lang: Lang, noise: &NoiseConfig, r: &mut ChaCha8Rng) -> Vec<Example> {
    batch
        .iter()
        .map(|s| Example::Translation {
            input: corrupt(s, noise, r).ids,
            input_lang: lang,
            output: s.ids.clone(),
            output_lang: lang,
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RoundLosses {
    pub bt_fwd: Option<f64>,
    pub bt_bwd: Option<f64>,
    pub denoise: Option<f64>,
    /// Pairs trained this round, in update order.
    pub pairs: Vec<PseudoPair>,
}

fn mean_some(values: &[Option<f64>]) -> Option<f64> {
    let v: Vec<f64> = values.iter().flatten().copied().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// One round: all pseudo sentences are generated from the parameters at round
/// start, then the model is trained on pivot → anchored pairs, anchored → pivot
/// pairs, and one denoising batch per language.
pub fn at_round(
    model: &mut SeqModel,
    view: ViewSpec,
    anchored: &[&IdSequence],
    raw: &[&IdSequence],
    cfg: &AtConfig,
    state: &mut TrainState,
    noise_rng: &mut ChaCha8Rng,
) -> Result<RoundLosses> {
    let a = view.anchored_lang();
    let p = view.pivot;
    let pseudo_pivot = generate(model, anchored, a, p, cfg.parallel);
    let pseudo_anchored = generate(model, raw, p, a, cfg.parallel);

    let bwd: Vec<PseudoPair> = pseudo_pivot
        .into_iter()
        .zip(anchored)
        .map(|(input, out)| PseudoPair {
            input,
            output: (*out).clone(),
            direction: (p, a),
        })
        .collect();
    let fwd: Vec<PseudoPair> = pseudo_anchored
        .into_iter()
        .zip(raw)
        .map(|(input, out)| PseudoPair {
            input,
            output: (*out).clone(),
            direction: (a, p),
        })
        .collect();

    let bt_bwd = state.update(model, &bwd.iter().map(PseudoPair::example).collect::<Vec<_>>(), 1.0)?;
    let bt_fwd = state.update(model, &fwd.iter().map(PseudoPair::example).collect::<Vec<_>>(), 1.0)?;
    let denoise = if cfg.denoise_weight > 0.0 {
        let da = denoise_examples(anchored, a, &cfg.noise, noise_rng);
        let dp = denoise_examples(raw, p, &cfg.noise, noise_rng);
        let la = state.update(model, &da, cfg.denoise_weight)?;
        let lp = state.update(model, &dp, cfg.denoise_weight)?;
        mean_some(&[la, lp])
    } else {
        None
    };
    let mut pairs = bwd;
    pairs.extend(fwd);
    Ok(RoundLosses {
        bt_fwd,
        bt_bwd,
        denoise,
        pairs,
    })
}

/// Corpus BLEU of greedy translations of the validation inputs.
pub fn validation_bleu(
    model: &SeqModel,
    codec: &BpeCodec,
    pairs: &[ValidationPair],
    from: Lang,
    to: Lang,
    parallel: bool,
) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let inputs: Vec<&IdSequence> = pairs.iter().map(|p| &p.input).collect();
    let outs = generate(model, &inputs, from, to, parallel);
    let hyps = outs
        .iter()
        .map(|o| codec.detokenize(o, to).map(|s| s.tokens))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<Vec<String>> = pairs.iter().map(|p| p.reference.clone()).collect();
    Ok(bleu(&hyps, &refs)?.bleu)
}

/// Tracks validation scores and keeps the best parameters seen.
struct Convergence {
    best: Option<f64>,
    best_step: usize,
    best_params: Option<anchormt_numerics::ParamStore<f32>>,
    stale: usize,
    patience: usize,
    min_delta: f64,
}

impl Convergence {
    fn new(patience: usize, min_delta: f64) -> Self {
        Self {
            best: None,
            best_step: 0,
            best_params: None,
            stale: 0,
            patience,
            min_delta,
        }
    }

    /// Records a score; returns true when training should stop.
    fn observe(&mut self, score: f64, step: usize, params: &anchormt_numerics::ParamStore<f32>) -> bool {
        let improved_enough = self.best.is_none_or(|b| score > b + self.min_delta);
        if self.best.is_none_or(|b| score > b) {
            self.best = Some(score);
            self.best_step = step;
            self.best_params = Some(params.clone());
        }
        if improved_enough {
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.stale >= self.patience
    }
}

/// Trains one view until the validation metric plateaus or `max_steps` rounds
/// have run, then restores the best validated parameters.
pub fn train_at(
    model: &mut SeqModel,
    data: &ViewData,
    codec: &BpeCodec,
    cfg: &AtConfig,
) -> Result<TrainLog> {
    cfg.validate()?;
    if data.anchored.is_empty() || data.raw.is_empty() {
        return data_err("anchored training needs non-empty corpora on both sides");
    }
    let n_anchors: usize = data.anchored.iter().map(|s| s.anchor_mask.iter().filter(|&&f| f).count()).sum();
    if n_anchors == 0 {
        log::warn!("dictionary covers no tokens; training proceeds without anchors");
    }
    let view = data.view;
    let tag = format!("at.{}", view.pivot);
    let mut state = TrainState::new(model, cfg.adam.clone(), rng::sub_seed(cfg.seed, &tag, 0), cfg.parallel);
    let mut a_sampler = Sampler::new(data.anchored.len(), rng::stream(cfg.seed, &format!("{tag}.anchored")));
    let mut p_sampler = Sampler::new(data.raw.len(), rng::stream(cfg.seed, &format!("{tag}.raw")));
    let mut noise_rng = rng::stream(cfg.seed, &format!("{tag}.noise"));
    let val = &data.validation[..data.validation.len().min(cfg.val_sentences)];
    let mut conv = Convergence::new(cfg.patience, cfg.min_delta);
    let mut log = TrainLog::default();
    let start = Instant::now();

    for step in 1..=cfg.max_steps {
        let a_batch: Vec<&IdSequence> = a_sampler.take(cfg.batch_size).into_iter().map(|i| &data.anchored[i]).collect();
        let p_batch: Vec<&IdSequence> = p_sampler.take(cfg.batch_size).into_iter().map(|i| &data.raw[i]).collect();
        let losses = at_round(model, view, &a_batch, &p_batch, cfg, &mut state, &mut noise_rng)?;
        let mut entry = RoundLog {
            step,
            bt_fwd: losses.bt_fwd,
            bt_bwd: losses.bt_bwd,
            denoise: losses.denoise,
            val_bleu: None,
        };
        let mut stop = false;
        if step % cfg.eval_every == 0 && !val.is_empty() {
            let b = validation_bleu(model, codec, val, view.anchored_lang(), view.pivot, cfg.parallel)?;
            entry.val_bleu = Some(b);
            log::info!(
                "{tag} step {step}: bt_fwd {:.3} bt_bwd {:.3} denoise {:.3} val BLEU {b:.2} ({:.0}s)",
                entry.bt_fwd.unwrap_or(f64::NAN),
                entry.bt_bwd.unwrap_or(f64::NAN),
                entry.denoise.unwrap_or(f64::NAN),
                start.elapsed().as_secs_f64()
            );
            stop = conv.observe(b, step, &model.store);
        }
        log.rounds.push(entry);
        if stop {
            break;
        }
    }
    if let Some(best) = conv.best_params.take() {
        model.store = best;
    }
    log.best_val_bleu = conv.best;
    log.best_step = conv.best_step;
    log.skipped_updates = state.skipped;
    log.seconds = start.elapsed().as_secs_f64();
    Ok(log)
}

/// Decoded ids → words → dictionary anchoring → ids.
fn reanchor(codec: &BpeCodec, seq: &IdSequence, from: Lang, dict: &BilingualDictionary, max_tokens: usize) -> Result<IdSequence> {
    let words = codec.detokenize(seq, from)?;
    let mut ids = codec.apply(&anchor_sentence(&words, dict));
    ids.truncate(max_tokens);
    Ok(ids)
}

/// Everything the bi-view combination needs besides the two trained views.
pub struct BiviewData<'a> {
    /// Target-language view: source sentences anchored into target words.
    pub target_view: &'a ViewData,
    /// Source-language view: target sentences anchored into source words.
    pub source_view: &'a ViewData,
    pub src_raw: &'a [IdSequence],
    pub tgt_raw: &'a [IdSequence],
    pub dict_src_tgt: &'a BilingualDictionary,
    pub dict_tgt_src: &'a BilingualDictionary,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct BiviewLog {
    pub target_view: TrainLog,
    pub source_view: TrainLog,
    pub combination: TrainLog,
}

/// Trains both views, then iterates the combination: the source→target model
/// learns from pairs with genuine target outputs produced by both views, and
/// the target→source model from pairs with genuine source outputs. Returns
/// (source→target model, target→source model).
pub fn train_biview(
    init_target_view: SeqModel,
    init_source_view: SeqModel,
    data: &BiviewData<'_>,
    codec: &BpeCodec,
    cfg: &AtConfig,
) -> Result<(SeqModel, SeqModel, BiviewLog)> {
    let mut m1 = init_target_view;
    let mut m2 = init_source_view;
    let target_view = train_at(&mut m1, data.target_view, codec, cfg)?;
    let source_view = train_at(&mut m2, data.source_view, codec, cfg)?;
    let combination = combine_views(&mut m1, &mut m2, data, codec, cfg)?;
    Ok((
        m1,
        m2,
        BiviewLog {
            target_view,
            source_view,
            combination,
        },
    ))
}

/// The combination phase of bi-view training on two already trained views.
pub fn combine_views(
    m1: &mut SeqModel,
    m2: &mut SeqModel,
    data: &BiviewData<'_>,
    codec: &BpeCodec,
    cfg: &AtConfig,
) -> Result<TrainLog> {
    cfg.validate()?;
    let (s, t) = (Lang::Src, Lang::Tgt);
    let mut log = TrainLog::default();
    if cfg.biview_max_steps == 0 {
        return Ok(log);
    }
    if data.src_raw.is_empty() || data.tgt_raw.is_empty() {
        return data_err("bi-view training needs non-empty corpora on both sides");
    }
    let max1 = m1.max_tokens();
    let max2 = m2.max_tokens();
    let g = cfg.batch_size * cfg.biview_gen_batch_multiplier;
    let mut st1 = TrainState::new(m1, cfg.adam.clone(), rng::sub_seed(cfg.seed, "biview.m1", 0), cfg.parallel);
    let mut st2 = TrainState::new(m2, cfg.adam.clone(), rng::sub_seed(cfg.seed, "biview.m2", 0), cfg.parallel);
    let mut s_sampler = Sampler::new(data.src_raw.len(), rng::stream(cfg.seed, "biview.src"));
    let mut t_sampler = Sampler::new(data.tgt_raw.len(), rng::stream(cfg.seed, "biview.tgt"));
    let mut noise_rng = rng::stream(cfg.seed, "biview.noise");
    let val = &data.target_view.validation[..data.target_view.validation.len().min(cfg.val_sentences)];
    let mut conv = Convergence::new(cfg.patience, cfg.min_delta);
    // The mono-view models are the starting point the combination has to beat.
    if !val.is_empty() {
        let b0 = validation_bleu(m1, codec, val, s, t, cfg.parallel)?;
        conv.observe(b0, 0, &m1.store);
    }
    let mut best_m2 = m2.store.clone();
    let start = Instant::now();

    for step in 1..=cfg.biview_max_steps {
        let si = s_sampler.take(g);
        let ti = t_sampler.take(g);
        let s_raw: Vec<&IdSequence> = si.iter().map(|&i| &data.src_raw[i]).collect();
        let t_raw: Vec<&IdSequence> = ti.iter().map(|&i| &data.tgt_raw[i]).collect();
        // Same sentences in anchored form; ViewData keeps corpus order.
        let s_anch: Vec<&IdSequence> = si.iter().map(|&i| &data.target_view.anchored[i]).collect();
        let t_anch: Vec<&IdSequence> = ti.iter().map(|&i| &data.source_view.anchored[i]).collect();

        // Generation from both frozen models.
        let a1 = generate(m1, &t_raw, t, s, cfg.parallel);
        let a2 = generate(m2, &t_anch, t, s, cfg.parallel)
            .iter()
            .map(|x| reanchor(codec, x, s, data.dict_src_tgt, max1))
            .collect::<Result<Vec<_>>>()?;
        let b1 = generate(m2, &s_raw, s, t, cfg.parallel);
        let b2 = generate(m1, &s_anch, s, t, cfg.parallel)
            .iter()
            .map(|x| reanchor(codec, x, t, data.dict_tgt_src, max2))
            .collect::<Result<Vec<_>>>()?;

        let pairs = |inputs: Vec<IdSequence>, outputs: &[&IdSequence], dir: (Lang, Lang)| -> Vec<PseudoPair> {
            inputs
                .into_iter()
                .zip(outputs)
                .filter(|(i, _)| !i.is_empty())
                .map(|(input, o)| PseudoPair {
                    input,
                    output: (*o).clone(),
                    direction: dir,
                })
                .collect()
        };
        let mut solid = pairs(a1, &t_raw, (s, t));
        solid.extend(pairs(a2, &t_raw, (s, t)));
        let mut dashed = pairs(b1, &s_raw, (t, s));
        dashed.extend(pairs(b2, &s_raw, (t, s)));

        let mut l1 = Vec::new();
        let mut l2 = Vec::new();
        for chunk in solid.chunks(cfg.batch_size) {
            l1.push(st1.update(m1, &chunk.iter().map(PseudoPair::example).collect::<Vec<_>>(), 1.0)?);
        }
        for chunk in dashed.chunks(cfg.batch_size) {
            l2.push(st2.update(m2, &chunk.iter().map(PseudoPair::example).collect::<Vec<_>>(), 1.0)?);
        }
        let mut dn = Vec::new();
        if cfg.biview_denoise && cfg.denoise_weight > 0.0 {
            let b = cfg.batch_size;
            let w = cfg.denoise_weight;
            let d1a = denoise_examples(&s_anch[..b.min(s_anch.len())], s, &cfg.noise, &mut noise_rng);
            let d1b = denoise_examples(&t_raw[..b.min(t_raw.len())], t, &cfg.noise, &mut noise_rng);
            let d2a = denoise_examples(&t_anch[..b.min(t_anch.len())], t, &cfg.noise, &mut noise_rng);
            let d2b = denoise_examples(&s_raw[..b.min(s_raw.len())], s, &cfg.noise, &mut noise_rng);
            dn.push(st1.update(m1, &d1a, w)?);
            dn.push(st1.update(m1, &d1b, w)?);
            dn.push(st2.update(m2, &d2a, w)?);
            dn.push(st2.update(m2, &d2b, w)?);
        }
        let mut entry = RoundLog {
            step,
            bt_fwd: mean_some(&l1),
            bt_bwd: mean_some(&l2),
            denoise: mean_some(&dn),
            val_bleu: None,
        };
        let mut stop = false;
        if step % cfg.eval_every == 0 && !val.is_empty() {
            let b = validation_bleu(m1, codec, val, s, t, cfg.parallel)?;
            entry.val_bleu = Some(b);
            log::info!(
                "biview step {step}: src2tgt {:.3} tgt2src {:.3} val BLEU {b:.2} ({:.0}s)",
                entry.bt_fwd.unwrap_or(f64::NAN),
                entry.bt_bwd.unwrap_or(f64::NAN),
                start.elapsed().as_secs_f64()
            );
            let prev_best = conv.best;
            stop = conv.observe(b, step, &m1.store);
            if conv.best != prev_best {
                best_m2 = m2.store.clone();
            }
        }
        log.rounds.push(entry);
        if stop {
            break;
        }
    }
    if let Some(best) = conv.best_params.take() {
        m1.store = best;
        m2.store = best_m2;
    }
    log.best_val_bleu = conv.best;
    log.best_step = conv.best_step;
    log.skipped_updates = st1.skipped + st2.skipped;
    log.seconds = start.elapsed().as_secs_f64();
    Ok(log)
}

/// Anchors (when a dictionary is given), segments, decodes and detokenizes one
/// sentence with the model direction `s.lang → s.lang.other()`.
pub fn translate(
    model: &SeqModel,
    s: &SentenceTokens,
    dict: Option<&BilingualDictionary>,
    codec: &BpeCodec,
) -> Result<SentenceTokens> {
    let input = match dict {
        Some(d) => anchor_sentence(s, d),
        None => s.clone(),
    };
    let mut ids = codec.apply(&input);
    ids.truncate(model.max_tokens());
    let to = s.lang.other();
    let out = model.decode_greedy(&ids.ids, s.lang, to, max_decode_len(ids.len(), model.max_tokens()));
    codec.detokenize(&IdSequence::plain(out), to)
}

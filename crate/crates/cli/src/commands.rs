//! One function per subcommand; each returns its JSON result.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use anchormt::baselines::embeddings::{train_embeddings, EmbeddingSpace};
use anchormt::baselines::swet::{fit_swet, init_embedding_table};
use anchormt::baselines::word_by_word;
use anchormt::corpus::{build_freq_table, load_corpus, write_corpus, FreqTable, Lang, SentenceTokens};
use anchormt::dictionary::{
    anchor_corpus, anchor_sentence, coverage_stats, load_raw_dictionary, resolve_senses, write_dictionary,
    BilingualDictionary,
};
use anchormt::eval::bleu::{bleu_multi, tokenize};
use anchormt::eval::bli::{bli_precision, model_space};
use anchormt::eval::cosine::{layer_cosine, EncoderInput};
use anchormt::eval::export::export_embeddings;
use anchormt::model::{CheckpointKind, SeqModel};
use anchormt::pretraining::{build_acp_corpus, init_at_from_acp, pretrain_mlm};
use anchormt::subword::{learn_bpe, BpeCodec};
use anchormt::synth::generate_pair;
use anchormt::training::{train_at, train_biview, translate, BiviewData, TrainLog, ViewData, ViewSpec};
use anchormt::{Error, Result};
use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::{CliError, Command, TrainData};

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_owned(),
        source,
    }
}

fn corpus(path: &Path, lang: Lang, cfg: &ExperimentConfig) -> Result<Vec<SentenceTokens>> {
    load_corpus(path, lang, cfg.corpus_max_sentences)
}

/// Source → target dictionary; several senses collapse to the one most frequent
/// in `target`, if given.
fn dictionary(path: &Path, target: Option<&[SentenceTokens]>, cfg: &ExperimentConfig) -> Result<BilingualDictionary> {
    let raw = load_raw_dictionary(path, (Lang::Src, Lang::Tgt))?;
    let freq = target.map(build_freq_table).unwrap_or_else(FreqTable::default);
    let d = resolve_senses(&raw, &freq);
    Ok(if cfg.corpus_lowercase { d.case_folded() } else { d })
}

/// The dictionary oriented to translate out of `lang`.
fn oriented(dict: BilingualDictionary, lang: Lang) -> BilingualDictionary {
    if lang == Lang::Src {
        dict
    } else {
        dict.inverted()
    }
}

fn write_lines(path: &Path, lines: impl IntoIterator<Item = String>) -> Result<()> {
    let mut text = String::new();
    for l in lines {
        text.push_str(&l);
        text.push('\n');
    }
    fs::write(path, text).map_err(io(path))
}

fn word_types(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    let set: BTreeSet<&str> = text.split_whitespace().collect();
    Ok(set.into_iter().map(str::to_owned).collect())
}

fn load_model(path: &Path) -> Result<SeqModel> {
    let (m, kind) = SeqModel::load(path)?;
    if kind != CheckpointKind::SeqModel {
        return Err(Error::Config(format!("{} is a pretraining checkpoint, not a translation model", path.display())));
    }
    Ok(m)
}

fn summary(log: &TrainLog) -> Value {
    json!({
        "rounds": log.rounds.len(),
        "best_val_bleu": log.best_val_bleu,
        "best_step": log.best_step,
        "skipped_updates": log.skipped_updates,
        "seconds": log.seconds,
    })
}

fn write_log(path: Option<&Path>, logs: &[&TrainLog]) -> Result<()> {
    let Some(p) = path else { return Ok(()) };
    let mut f = fs::File::create(p).map_err(io(p))?;
    for l in logs {
        l.write_jsonl(&mut f).map_err(io(p))?;
    }
    Ok(())
}

struct Loaded {
    src: Vec<SentenceTokens>,
    tgt: Vec<SentenceTokens>,
    dict: BilingualDictionary,
    codec: BpeCodec,
    valid: Vec<(SentenceTokens, SentenceTokens)>,
}

fn load_training(d: &TrainData, cfg: &ExperimentConfig) -> Result<Loaded> {
    let src = corpus(&d.src, Lang::Src, cfg)?;
    let tgt = corpus(&d.tgt, Lang::Tgt, cfg)?;
    let dict = match (&d.dict, d.no_anchor) {
        (Some(p), false) => dictionary(p, Some(&tgt), cfg)?,
        (None, false) => return Err(Error::Config("--dict is required unless --no-anchor is given".into())),
        (_, true) => BilingualDictionary::new((Lang::Src, Lang::Tgt)),
    };
    let codec = BpeCodec::load(&d.codes)?;
    let valid = match (&d.valid_src, &d.valid_tgt) {
        (Some(vs), Some(vt)) => {
            let a = load_corpus(vs, Lang::Src, None)?;
            let b = load_corpus(vt, Lang::Tgt, None)?;
            if a.len() != b.len() {
                return Err(Error::Data(format!("validation sides differ in length: {} vs {}", a.len(), b.len())));
            }
            a.into_iter().zip(b).collect()
        }
        _ => Vec::new(),
    };
    Ok(Loaded {
        src,
        tgt,
        dict,
        codec,
        valid,
    })
}

impl Loaded {
    /// View data for `pivot`: the other side is anchored into it.
    fn view(&self, pivot: Lang, max_tokens: usize) -> Result<ViewData> {
        let view = ViewSpec { pivot };
        if pivot == Lang::Tgt {
            ViewData::build(view, &self.src, &self.tgt, &self.dict, &self.codec, &self.valid, max_tokens)
        } else {
            let swapped: Vec<_> = self.valid.iter().map(|(s, t)| (t.clone(), s.clone())).collect();
            ViewData::build(view, &self.tgt, &self.src, &self.dict.inverted(), &self.codec, &swapped, max_tokens)
        }
    }

    fn fresh_model(&self, cfg: &ExperimentConfig, salt: u64) -> Result<SeqModel> {
        SeqModel::new(cfg.model_config(self.codec.vocab_size()), cfg.seed.wrapping_add(salt))
    }

    /// A new model, initialized from a checkpoint when given.
    fn initial_model(&self, cfg: &ExperimentConfig, init: Option<&Path>, salt: u64) -> Result<SeqModel> {
        let mut m = self.fresh_model(cfg, salt)?;
        if let Some(p) = init {
            let (pre, kind) = SeqModel::load(p)?;
            let n = match kind {
                CheckpointKind::AcpEncoder => init_at_from_acp(&mut m, &pre)?,
                CheckpointKind::SeqModel => m.copy_from(&pre.store, |_| true)?,
            };
            log::info!("initialized {n} tensors from {}", p.display());
        }
        Ok(m)
    }
}

pub fn dispatch(cmd: &Command, cfg: &ExperimentConfig) -> std::result::Result<Value, CliError> {
    Ok(match cmd {
        Command::SynthGen { out_dir } => synth_gen(out_dir, cfg)?,
        Command::LearnBpe {
            src,
            tgt,
            dict,
            codes,
            vocab,
        } => {
            let s = corpus(src, Lang::Src, cfg)?;
            let t = corpus(tgt, Lang::Tgt, cfg)?;
            let words: Vec<String> = match dict {
                Some(p) => dictionary(p, Some(&t), cfg)?.map.into_iter().flat_map(|(a, b)| [a, b]).collect(),
                None => Vec::new(),
            };
            let extra: Vec<&str> = words.iter().map(String::as_str).collect();
            let codec = learn_bpe(&[&s, &t], &extra, cfg.bpe_merges)?;
            codec.save(codes)?;
            if let Some(v) = vocab {
                codec.write_vocab_tsv(v)?;
            }
            json!({ "merges": codec.merges().len(), "vocab_size": codec.vocab_size() })
        }
        Command::ApplyBpe { codes, input, output } => {
            let codec = BpeCodec::load(codes)?;
            let c = corpus(input, Lang::Src, cfg)?;
            let mut units = 0;
            let lines: Vec<String> = c
                .iter()
                .map(|s| {
                    let seg: Vec<String> = s.tokens.iter().flat_map(|w| codec.segment_word(w)).collect();
                    units += seg.len();
                    seg.join(" ")
                })
                .collect();
            write_lines(output, lines)?;
            json!({ "sentences": c.len(), "units": units })
        }
        Command::DictStats { dict, corpus: c, lang } => {
            let text = corpus(c, *lang, cfg)?;
            let d = oriented(dictionary(dict, None, cfg)?, *lang);
            serde_json::to_value(coverage_stats(&text, &d)?).expect("report serializes")
        }
        Command::Anchor {
            dict,
            input,
            output,
            lang,
        } => {
            let c = corpus(input, *lang, cfg)?;
            let d = oriented(dictionary(dict, None, cfg)?, *lang);
            let a = anchor_corpus(&c, &d);
            write_corpus(output, &a)?;
            let tokens: usize = a.iter().map(SentenceTokens::len).sum();
            let anchored: usize = a.iter().map(|s| s.anchor_mask.iter().filter(|&&f| f).count()).sum();
            json!({ "sentences": a.len(), "tokens": tokens, "anchored_tokens": anchored })
        }
        Command::PretrainAcp { data, model_out } => {
            let l = load_training(data, cfg)?;
            let mut m = l.fresh_model(cfg, 0)?;
            let view = ViewSpec { pivot: data.pivot };
            let (non_pivot, pivot, dict) = if data.pivot == Lang::Tgt {
                (&l.src, &l.tgt, l.dict.clone())
            } else {
                (&l.tgt, &l.src, l.dict.inverted())
            };
            let c = build_acp_corpus(view, non_pivot, pivot, &dict, &l.codec, m.max_tokens(), cfg.seed)?;
            let log = pretrain_mlm(&mut m, &c, &cfg.acp)?;
            m.save(model_out, CheckpointKind::AcpEncoder)?;
            json!({
                "sentences": c.len(),
                "final_loss": log.losses.last().map(|l| l.1),
                "losses": log.losses,
                "skipped_updates": log.skipped_updates,
                "seconds": log.seconds,
            })
        }
        Command::TrainAt {
            data,
            model_out,
            init,
            log,
        } => {
            let l = load_training(data, cfg)?;
            let mut m = l.initial_model(cfg, init.as_deref(), 0)?;
            let v = l.view(data.pivot, m.max_tokens())?;
            let tl = train_at(&mut m, &v, &l.codec, &cfg.at)?;
            m.save(model_out, CheckpointKind::SeqModel)?;
            write_log(log.as_deref(), &[&tl])?;
            summary(&tl)
        }
        Command::TrainBiview {
            data,
            model_out,
            reverse_model_out,
            init_target_view,
            init_source_view,
            log,
        } => {
            if data.no_anchor {
                return Err(CliError::Usage("bi-view training needs a dictionary".into()));
            }
            let l = load_training(data, cfg)?;
            let m1 = l.initial_model(cfg, init_target_view.as_deref(), 0)?;
            let m2 = l.initial_model(cfg, init_source_view.as_deref(), 1)?;
            let tv = l.view(Lang::Tgt, m1.max_tokens())?;
            let sv = l.view(Lang::Src, m2.max_tokens())?;
            let inverted = l.dict.inverted();
            let bd = BiviewData {
                target_view: &tv,
                source_view: &sv,
                src_raw: &sv.raw,
                tgt_raw: &tv.raw,
                dict_src_tgt: &l.dict,
                dict_tgt_src: &inverted,
            };
            let (m1, m2, bl) = train_biview(m1, m2, &bd, &l.codec, &cfg.at)?;
            m1.save(model_out, CheckpointKind::SeqModel)?;
            m2.save(reverse_model_out, CheckpointKind::SeqModel)?;
            write_log(log.as_deref(), &[&bl.target_view, &bl.source_view, &bl.combination])?;
            json!({
                "target_view": summary(&bl.target_view),
                "source_view": summary(&bl.source_view),
                "combination": summary(&bl.combination),
            })
        }
        Command::Translate {
            model,
            codes,
            input,
            output,
            lang,
            dict,
            no_anchor,
        } => {
            let m = load_model(model)?;
            let codec = BpeCodec::load(codes)?;
            let c = corpus(input, *lang, cfg)?;
            let d = match (dict, no_anchor) {
                (Some(p), false) => Some(oriented(dictionary(p, None, cfg)?, *lang)),
                _ => None,
            };
            let out = c
                .iter()
                .map(|s| translate(&m, s, d.as_ref(), &codec).map(|t| t.line()))
                .collect::<Result<Vec<_>>>()?;
            write_lines(output, out)?;
            json!({ "sentences": c.len(), "anchored": d.is_some() })
        }
        Command::BaselineWbw {
            dict,
            input,
            output,
            lang,
        } => {
            let c = corpus(input, *lang, cfg)?;
            let d = oriented(dictionary(dict, None, cfg)?, *lang);
            write_lines(output, c.iter().map(|s| word_by_word(s, &d).line()))?;
            json!({ "sentences": c.len() })
        }
        Command::BaselineSwet {
            dict,
            src_corpus,
            tgt_corpus,
            src_emb,
            tgt_emb,
            mapped_out,
            tgt_out,
            test_dict,
            init_model_out,
            codes,
        } => {
            let space = |emb: &Option<std::path::PathBuf>, text: &Option<std::path::PathBuf>, lang: Lang| -> Result<EmbeddingSpace> {
                match (emb, text) {
                    (Some(p), _) => EmbeddingSpace::load(p),
                    (None, Some(p)) => train_embeddings(&corpus(p, lang, cfg)?, &cfg.sgns),
                    (None, None) => Err(Error::Config("an embedding file or a corpus is required per side".into())),
                }
            };
            let s = space(src_emb, src_corpus, Lang::Src)?.normalized();
            let t = space(tgt_emb, tgt_corpus, Lang::Tgt)?.normalized();
            let d = dictionary(dict, None, cfg)?;
            let w = fit_swet(&s, &t, &d)?;
            let mapped = w.apply(&s);
            mapped.save(mapped_out)?;
            t.save(tgt_out)?;
            let pairs = d.map.iter().filter(|(a, b)| s.get(a).is_some() && t.get(b).is_some()).count();
            let precision = match test_dict {
                Some(p) => Some(bli_precision(&dictionary(p, None, cfg)?, &mapped, &t, &cfg.eval_ks)?),
                None => None,
            };
            if let (Some(out), Some(c)) = (init_model_out, codes) {
                let codec = BpeCodec::load(c)?;
                let mut m = SeqModel::new(cfg.model_config(codec.vocab_size()), cfg.seed)?;
                let rows = init_embedding_table(&mut m, &codec, &[(&mapped, Lang::Src), (&t, Lang::Tgt)])?;
                m.save(out, CheckpointKind::SeqModel)?;
                log::info!("initialized {rows} embedding rows");
            }
            json!({
                "pairs_used": pairs,
                "orthogonality_error": w.orthogonality_error(),
                "precision": precision,
            })
        }
        Command::EvalBleu { hyp, refs } => {
            let read = |p: &Path| -> Result<Vec<Vec<String>>> {
                Ok(fs::read_to_string(p).map_err(io(p))?.lines().map(tokenize).collect())
            };
            let h = read(hyp)?;
            let rs = refs.iter().map(|p| read(p)).collect::<Result<Vec<_>>>()?;
            if let Some((p, r)) = refs.iter().zip(&rs).find(|(_, r)| r.len() != h.len()) {
                return Err(Error::Data(format!("{} has {} lines, hypotheses have {}", p.display(), r.len(), h.len())).into());
            }
            let per_sentence: Vec<Vec<Vec<String>>> = (0..h.len()).map(|i| rs.iter().map(|r| r[i].clone()).collect()).collect();
            serde_json::to_value(bleu_multi(&h, &per_sentence)?).expect("report serializes")
        }
        Command::EvalBli {
            dict,
            src_emb,
            tgt_emb,
            model,
            codes,
            tgt_words,
        } => {
            let d = dictionary(dict, None, cfg)?;
            let (s, t) = match (model, codes) {
                (Some(mp), Some(cp)) => {
                    let m = load_model(mp)?;
                    let codec = BpeCodec::load(cp)?;
                    let mut candidates: BTreeSet<String> = d.map.values().cloned().collect();
                    if let Some(p) = tgt_words {
                        candidates.extend(word_types(p)?);
                    }
                    (
                        model_space(&m, &codec, d.map.keys().map(String::as_str))?,
                        model_space(&m, &codec, candidates.iter().map(String::as_str))?,
                    )
                }
                _ => {
                    let (Some(se), Some(te)) = (src_emb, tgt_emb) else {
                        return Err(CliError::Usage("give --src-emb and --tgt-emb, or --model and --codes".into()));
                    };
                    (EmbeddingSpace::load(se)?, EmbeddingSpace::load(te)?)
                }
            };
            serde_json::to_value(bli_precision(&d, &s, &t, &cfg.eval_ks)?).expect("report serializes")
        }
        Command::EvalCosine {
            model,
            codes,
            src,
            tgt,
            dict,
        } => {
            let m = load_model(model)?;
            let codec = BpeCodec::load(codes)?;
            let a = load_corpus(src, Lang::Src, cfg.corpus_max_sentences)?;
            let b = load_corpus(tgt, Lang::Tgt, cfg.corpus_max_sentences)?;
            if a.len() != b.len() {
                return Err(Error::Data(format!("sides differ in length: {} vs {}", a.len(), b.len())).into());
            }
            let d = match dict {
                Some(p) => Some(dictionary(p, None, cfg)?),
                None => None,
            };
            let enc = |s: &SentenceTokens| {
                let mut ids = codec.apply(s);
                ids.truncate(m.max_tokens());
                ids
            };
            let pairs: Vec<(EncoderInput, EncoderInput)> = a
                .iter()
                .zip(&b)
                .map(|(x, y)| {
                    let x = match &d {
                        Some(d) => anchor_sentence(x, d),
                        None => x.clone(),
                    };
                    (
                        EncoderInput {
                            ids: enc(&x),
                            lang: Lang::Src,
                        },
                        EncoderInput {
                            ids: enc(y),
                            lang: Lang::Tgt,
                        },
                    )
                })
                .collect();
            let layers = layer_cosine(&m, &pairs)?;
            let mean = layers.iter().sum::<f64>() / layers.len() as f64;
            json!({ "sentences": pairs.len(), "layers": layers, "mean": mean })
        }
        Command::ExportEmb {
            model,
            codes,
            src_words,
            tgt_words,
            output,
        } => {
            let m = load_model(model)?;
            let codec = BpeCodec::load(codes)?;
            let mut words = Vec::new();
            for (p, lang) in [(src_words, Lang::Src), (tgt_words, Lang::Tgt)] {
                if let Some(p) = p {
                    words.extend(word_types(p)?.into_iter().map(|w| (w, lang)));
                }
            }
            if words.is_empty() {
                return Err(CliError::Usage("give --src-words and/or --tgt-words".into()));
            }
            let n = export_embeddings(&m, &codec, &words, output)?;
            json!({ "rows": n })
        }
    })
}

fn synth_gen(dir: &Path, cfg: &ExperimentConfig) -> Result<Value> {
    let p = generate_pair(&cfg.synth)?;
    fs::create_dir_all(dir).map_err(io(dir))?;
    let path = |name: &str| dir.join(name);
    write_corpus(&path("train.src"), &p.src)?;
    write_corpus(&path("train.tgt"), &p.tgt)?;
    write_dictionary(&path("dict.txt"), &p.dict)?;
    write_dictionary(&path("dict.full.txt"), &p.full_dict)?;
    let heldout = BilingualDictionary::from_pairs(
        (Lang::Src, Lang::Tgt),
        p.full_dict.map.iter().filter(|(s, _)| p.dict.lookup(s).is_none()),
    );
    write_dictionary(&path("dict.heldout.txt"), &heldout)?;
    for (name, set) in [("valid", &p.valid), ("test", &p.test)] {
        let (s, t): (Vec<_>, Vec<_>) = set.iter().cloned().unzip();
        write_corpus(&path(&format!("{name}.src")), &s)?;
        write_corpus(&path(&format!("{name}.tgt")), &t)?;
    }
    let cov = coverage_stats(&p.src, &p.dict)?;
    Ok(json!({
        "dir": dir,
        "train_sentences": [p.src.len(), p.tgt.len()],
        "heldout_sentences": [p.valid.len(), p.test.len()],
        "dict_entries": cov.entries,
        "full_dict_entries": p.full_dict.entry_count(),
        "token_coverage": cov.coverage,
    }))
}

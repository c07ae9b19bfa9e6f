#![allow(dead_code)]

use std::collections::HashMap;
use std::path::PathBuf;

use anchormt::baselines::embeddings::EmbeddingSpace;
use anchormt::corpus::{Lang, SentenceTokens};
use anchormt::dictionary::{anchor_sentence, BilingualDictionary};
use anchormt::eval::bli::bli_precision;
use anchormt::model::{Example, ModelConfig, SeqModel, ShareSpec};
use anchormt::noise::{corrupt, NoiseConfig};
use anchormt::subword::{learn_bpe, BpeCodec, IdSequence, MASK, NUM_SPECIALS};
use anchormt::synth::{generate_pair, SynthPair, SynthSpec};
use anchormt::training::{
    at_round, generate, train_at, AtConfig, TrainState, ViewData, ViewSpec,
};
use anchormt_numerics::AdamConfig;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct BleuVector {
    pub name: String,
    pub hyps: Vec<Vec<String>>,
    pub refs: Vec<Vec<Vec<String>>>,
    pub expected: f64,
}

fn lines(path: &PathBuf) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split_whitespace().map(str::to_owned).collect())
        .collect()
}

/// Reference scores computed by an independent multi-bleu.perl-convention script.
pub fn bleu_vectors() -> Vec<BleuVector> {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/bleu");
    let mut out = Vec::new();
    for v in 1..=5 {
        let dir = root.join(format!("v{v}"));
        let hyps = lines(&dir.join("hyp"));
        let mut refsets = Vec::new();
        for r in 0.. {
            let p = dir.join(format!("ref{r}"));
            if !p.exists() {
                break;
            }
            refsets.push(lines(&p));
        }
        let refs = (0..hyps.len()).map(|i| refsets.iter().map(|r| r[i].clone()).collect()).collect();
        let expected = std::fs::read_to_string(dir.join("expected")).unwrap().trim().parse().unwrap();
        out.push(BleuVector {
            name: format!("v{v}"),
            hyps,
            refs,
            expected,
        });
    }
    out
}

/// Straightforward BPE learner: recount every pair from scratch at each step.
pub fn reference_bpe(words: &[(&str, u64)], num_merges: usize) -> Vec<(String, String)> {
    let mut segs: Vec<(Vec<String>, u64)> = words
        .iter()
        .map(|&(w, c)| {
            let chars: Vec<char> = w.chars().collect();
            let syms = chars
                .iter()
                .enumerate()
                .map(|(i, ch)| if i + 1 < chars.len() { format!("{ch}@@") } else { ch.to_string() })
                .collect();
            (syms, c)
        })
        .collect();
    let mut merges = Vec::new();
    while merges.len() < num_merges {
        let mut counts: HashMap<(String, String), u64> = HashMap::new();
        for (s, c) in &segs {
            for p in s.windows(2) {
                *counts.entry((p[0].clone(), p[1].clone())).or_insert(0) += c;
            }
        }
        let Some((best, n)) = counts.into_iter().max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0))) else {
            break;
        };
        if n < 2 {
            break;
        }
        let joined = format!("{}{}", best.0.strip_suffix("@@").unwrap_or(&best.0), best.1);
        for (s, _) in segs.iter_mut() {
            let mut out = Vec::with_capacity(s.len());
            let mut i = 0;
            while i < s.len() {
                if i + 1 < s.len() && s[i] == best.0 && s[i + 1] == best.1 {
                    out.push(joined.clone());
                    i += 2;
                } else {
                    out.push(s[i].clone());
                    i += 1;
                }
            }
            *s = out;
        }
        merges.push(best);
    }
    merges
}

pub fn toy_bpe_corpus() -> Vec<SentenceTokens> {
    [
        "low lower lowest newer newest wider widest",
        "low low lower newer newer newest",
        "the lowest and the widest rivers flow slower",
        "banana bandana cabana ananas",
        "aaaa aaa aa a",
    ]
    .iter()
    .map(|l| SentenceTokens::from_line(l, Lang::Src))
    .collect()
}

/// Learner output versus the reference on the toy corpus, for several merge budgets.
pub fn bpe_matches_reference() -> bool {
    let corpus = toy_bpe_corpus();
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for s in &corpus {
        for w in &s.tokens {
            *counts.entry(w.as_str()).or_insert(0) += 1;
        }
    }
    let words: Vec<(&str, u64)> = counts.into_iter().collect();
    [0, 1, 5, 20, 200].iter().all(|&n| {
        let codec = learn_bpe(&[&corpus], &[], n).unwrap();
        codec.merges() == reference_bpe(&words, n).as_slice()
    })
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    })
}

fn word_strategy() -> impl Strategy<Value = String> {
    "[a-f]{1,3}"
}

pub fn prop_anchoring_preserves_length() -> Result<(), String> {
    let strat = (
        prop::collection::vec(word_strategy(), 0..12),
        prop::collection::vec((word_strategy(), "[x-z]{1,3}"), 0..10),
    );
    runner(256)
        .run(&strat, |(words, pairs)| {
            let dict = BilingualDictionary::from_pairs((Lang::Src, Lang::Tgt), pairs);
            let s = SentenceTokens::raw(words, Lang::Src);
            let a = anchor_sentence(&s, &dict);
            prop_assert_eq!(a.len(), s.len());
            prop_assert_eq!(a.anchor_mask.len(), s.len());
            for ((orig, out), &flag) in s.tokens.iter().zip(&a.tokens).zip(&a.anchor_mask) {
                prop_assert_eq!(flag, dict.lookup(orig).is_some());
                prop_assert_eq!(out.as_str(), dict.lookup(orig).unwrap_or(orig));
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn prop_noise_displacement_bound() -> Result<(), String> {
    let strat = (1usize..30, 0usize..5, 0.0f64..0.9, any::<u64>());
    runner(256)
        .run(&strat, |(len, window, drop, seed)| {
            // Distinct ids make every output unit traceable to its source position.
            let seq = IdSequence::plain((NUM_SPECIALS..NUM_SPECIALS + len).collect());
            let cfg = NoiseConfig {
                drop_prob: drop,
                shuffle_window: window,
            };
            let out = corrupt(&seq, &cfg, &mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert!(!out.is_empty() && out.len() <= len);
            let mut kept: Vec<usize> = out.ids.clone();
            kept.sort_unstable();
            kept.dedup();
            prop_assert_eq!(kept.len(), out.len());
            for (j, id) in out.ids.iter().enumerate() {
                let rank = kept.binary_search(id).unwrap();
                prop_assert!(rank.abs_diff(j) <= window, "unit moved {} > {}", rank.abs_diff(j), window);
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn prop_precision_nesting() -> Result<(), String> {
    let strat = (12usize..60, 2usize..8, any::<u64>());
    runner(48)
        .run(&strat, |(n, d, seed)| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let mk = |prefix: &str, r: &mut ChaCha8Rng| {
                EmbeddingSpace::new(
                    (0..n).map(|i| format!("{prefix}{i}")).collect(),
                    d,
                    (0..n * d).map(|_| r.random::<f64>() - 0.5).collect(),
                )
                .unwrap()
            };
            let s = mk("s", &mut r);
            let t = mk("t", &mut r);
            let dict = BilingualDictionary::from_pairs(
                (Lang::Src, Lang::Tgt),
                (0..n).map(|i| (format!("s{i}"), format!("t{}", (i * 7 + 3) % n))),
            );
            let rep = bli_precision(&dict, &s, &t, &[1, 5, 10]).unwrap();
            prop_assert!(rep.p_at[&1] <= rep.p_at[&5] && rep.p_at[&5] <= rep.p_at[&10]);
            Ok(())
        })
        .map_err(|e| e.to_string())
}

fn model_with(share: ShareSpec, layers: usize, seed: u64) -> SeqModel {
    SeqModel::new(
        ModelConfig {
            num_layers: layers,
            model_dim: 8,
            ff_dim: 8,
            num_heads: 2,
            max_len: 12,
            vocab_size: 20,
            share,
            dropout: 0.0,
            length_penalty: 1.0,
        },
        seed,
    )
    .unwrap()
}

pub fn prop_shared_parameter_identity() -> Result<(), String> {
    let strat = (1usize..5).prop_flat_map(|layers| (Just(layers), 0..=layers, 0..=layers, any::<u64>()));
    runner(48)
        .run(&strat, |(layers, enc_private, dec_private, seed)| {
            let share = ShareSpec {
                encoder_private_bottom: enc_private,
                decoder_private_top: dec_private,
            };
            let mut m = model_with(share.clone(), layers, seed);
            let [es, et] = m.layout.encoder.clone();
            let [ds, dt] = m.layout.decoder.clone();
            for l in 0..layers {
                prop_assert_eq!(es[l] == et[l], share.encoder_layer_shared(l));
                prop_assert_eq!(ds[l] == dt[l], share.decoder_layer_shared(l, layers));
            }
            // A write through the source path is seen by the target path exactly when shared.
            let ids = [6, 7, 8];
            let before = m.encode(&ids, Lang::Tgt).layers;
            let w = es[layers - 1].ff.w1;
            m.store.get_mut(w).data_mut().iter_mut().for_each(|v| *v += 0.25);
            let after = m.encode(&ids, Lang::Tgt).layers;
            prop_assert_eq!(after[layers - 1] != before[layers - 1], share.encoder_layer_shared(layers - 1));
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn tiny_pair(seed: u64) -> (SynthPair, BpeCodec) {
    let p = generate_pair(&SynthSpec {
        vocab_size: 40,
        sentence_count: 60,
        min_len: 3,
        max_len: 6,
        heldout_count: 8,
        seed,
        ..SynthSpec::default()
    })
    .unwrap();
    let codec = learn_bpe(&[&p.src, &p.tgt], &[], 60).unwrap();
    (p, codec)
}

fn tiny_model(vocab: usize, seed: u64) -> SeqModel {
    SeqModel::new(
        ModelConfig {
            num_layers: 2,
            model_dim: 16,
            ff_dim: 32,
            num_heads: 2,
            max_len: 24,
            vocab_size: vocab,
            share: ShareSpec::default(),
            dropout: 0.1,
            length_penalty: 1.0,
        },
        seed,
    )
    .unwrap()
}

fn tiny_at(steps: usize, seed: u64, parallel: bool) -> AtConfig {
    AtConfig {
        batch_size: 4,
        max_steps: steps,
        eval_every: 2,
        val_sentences: 4,
        seed,
        parallel,
        adam: AdamConfig {
            lr: 1e-3,
            warmup_steps: 0,
            ..AdamConfig::default()
        },
        ..AtConfig::default()
    }
}

pub fn prop_pseudo_pair_direction() -> Result<(), String> {
    let strat = (any::<u64>(), any::<bool>());
    runner(16)
        .run(&strat, |(seed, tgt_pivot)| {
            let (p, codec) = tiny_pair(seed % 5);
            let m0 = tiny_model(codec.vocab_size(), seed);
            let pivot = if tgt_pivot { Lang::Tgt } else { Lang::Src };
            let (np, pv, dict) = if tgt_pivot {
                (&p.src, &p.tgt, p.dict.clone())
            } else {
                (&p.tgt, &p.src, p.dict.inverted())
            };
            let data = ViewData::build(ViewSpec { pivot }, np, pv, &dict, &codec, &[], m0.max_tokens()).unwrap();
            let a: Vec<&IdSequence> = data.anchored.iter().take(3).collect();
            let r: Vec<&IdSequence> = data.raw.iter().take(3).collect();
            let mut m = m0.clone();
            let cfg = tiny_at(1, seed, false);
            let mut st = TrainState::new(&m, cfg.adam.clone(), seed, false);
            let out = at_round(&mut m, data.view, &a, &r, &cfg, &mut st, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let al = data.view.anchored_lang();
            // Inputs come from the round-start parameters, outputs from the corpus.
            let from_anchored = generate(&m0, &a, al, pivot, false);
            let from_raw = generate(&m0, &r, pivot, al, false);
            prop_assert_eq!(out.pairs.len(), a.len() + r.len());
            for (i, pp) in out.pairs.iter().enumerate() {
                if i < a.len() {
                    prop_assert_eq!(pp.direction, (pivot, al));
                    prop_assert_eq!(&pp.output, a[i]);
                    prop_assert_eq!(&pp.input, &from_anchored[i]);
                } else {
                    let j = i - a.len();
                    prop_assert_eq!(pp.direction, (al, pivot));
                    prop_assert_eq!(&pp.output, r[j]);
                    prop_assert_eq!(&pp.input, &from_raw[j]);
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn prop_seed_reproducibility() -> Result<(), String> {
    let strat = (0u64..1000, any::<bool>());
    runner(6)
        .run(&strat, |(seed, parallel)| {
            let (p, codec) = tiny_pair(seed);
            let m0 = tiny_model(codec.vocab_size(), seed);
            let data = ViewData::build(ViewSpec { pivot: Lang::Tgt }, &p.src, &p.tgt, &p.dict, &codec, &p.valid, m0.max_tokens()).unwrap();
            let run = |par: bool| {
                let mut m = m0.clone();
                let log = train_at(&mut m, &data, &codec, &tiny_at(4, seed, par)).unwrap();
                (m, log)
            };
            let (ma, la) = run(parallel);
            let (mb, lb) = run(false);
            prop_assert_eq!(&la.rounds, &lb.rounds);
            for (id, t) in ma.store.iter() {
                prop_assert_eq!(t.tensor.data(), mb.store.get(id).data());
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn all_properties() -> Vec<(&'static str, fn() -> Result<(), String>)> {
    vec![
        ("anchoring length preservation", prop_anchoring_preserves_length),
        ("pseudo-pair direction bookkeeping", prop_pseudo_pair_direction),
        ("precision nesting p@1<=p@5<=p@10", prop_precision_nesting),
        ("shared-parameter identity", prop_shared_parameter_identity),
        ("noise displacement bound", prop_noise_displacement_bound),
        ("seed reproducibility of full runs", prop_seed_reproducibility),
    ]
}

pub fn random_space(n: usize, d: usize, seed: u64, prefix: &str) -> EmbeddingSpace {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    EmbeddingSpace::new(
        (0..n).map(|i| format!("{prefix}{i:03}")).collect(),
        d,
        (0..n * d).map(|_| r.random::<f64>() - 0.5).collect(),
    )
    .unwrap()
}

/// CSLS top-`k` by recomputing every cosine and fully sorting, `K = 10`.
pub fn brute_force_csls(src: &EmbeddingSpace, tgt: &EmbeddingSpace, k: usize) -> Vec<Vec<String>> {
    let cos = |a: &[f64], b: &[f64]| {
        let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (n(a) * n(b))
    };
    let r = |x: &[f64], other: &EmbeddingSpace| {
        let mut c: Vec<f64> = (0..other.len()).map(|j| cos(x, other.row(j))).collect();
        c.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let kk = 10.min(c.len());
        c[..kk].iter().sum::<f64>() / kk as f64
    };
    let r_tgt: Vec<f64> = (0..tgt.len()).map(|j| r(tgt.row(j), src)).collect();
    (0..src.len())
        .map(|i| {
            let x = src.row(i);
            let rx = r(x, tgt);
            let mut all: Vec<(String, f64)> = (0..tgt.len())
                .map(|j| (tgt.words[j].clone(), 2.0 * cos(x, tgt.row(j)) - rx - r_tgt[j]))
                .collect();
            all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            all.into_iter().take(k).map(|(w, _)| w).collect()
        })
        .collect()
}

pub fn micro_model() -> SeqModel<f64> {
    SeqModel::new(
        ModelConfig {
            num_layers: 2,
            model_dim: 4,
            ff_dim: 6,
            num_heads: 2,
            max_len: 8,
            vocab_size: 12,
            share: ShareSpec::default(),
            dropout: 0.0,
            length_penalty: 1.0,
        },
        7,
    )
    .unwrap()
    .cast()
}

pub fn micro_batch() -> Vec<Example> {
    vec![
        Example::Translation {
            input: vec![5, 6, 7],
            input_lang: Lang::Src,
            output: vec![8, 9],
            output_lang: Lang::Tgt,
        },
        Example::Translation {
            input: vec![9, 10],
            input_lang: Lang::Tgt,
            output: vec![11, 5, 6],
            output_lang: Lang::Src,
        },
        Example::Masked {
            input: vec![6, MASK, 8],
            lang: Lang::Src,
            targets: vec![None, Some(7), Some(8)],
        },
    ]
}

use anchormt_numerics::{AdamConfig, AdamState};

use super::*;
use crate::subword::{BOS, NUM_SPECIALS, PAD};

fn tiny(vocab: usize, share: ShareSpec) -> ModelConfig {
    ModelConfig {
        num_layers: 4,
        model_dim: 16,
        ff_dim: 32,
        num_heads: 2,
        max_len: 16,
        vocab_size: vocab,
        share,
        dropout: 0.0,
        length_penalty: 1.0,
    }
}

fn perturb(model: &mut SeqModel, id: ParamId) {
    for v in model.store.get_mut(id).data_mut() {
        *v += 0.5;
    }
}

#[test]
fn shared_layers_reference_one_storage() {
    let m = SeqModel::new(tiny(20, ShareSpec::default()), 1).unwrap();
    let [src, tgt] = &m.layout.encoder;
    assert_ne!(src[0], tgt[0]);
    for l in 1..4 {
        assert_eq!(src[l], tgt[l]);
    }
    let [src, tgt] = &m.layout.decoder;
    for l in 0..3 {
        assert_eq!(src[l], tgt[l]);
    }
    assert_ne!(src[3], tgt[3]);
    assert_eq!(m.layout.encoder_norm[0], m.layout.encoder_norm[1]);
    assert_ne!(m.layout.decoder_norm[0], m.layout.decoder_norm[1]);
}

#[test]
fn mutating_shared_layer_through_one_path_changes_the_other() {
    let mut m = SeqModel::new(tiny(20, ShareSpec::default()), 2).unwrap();
    let ids = [5, 6, 7];
    let before = m.encode(&ids, Lang::Tgt).memory;
    let shared = m.layout.encoder[Lang::Src.index()][2].ff.w1;
    perturb(&mut m, shared);
    assert_ne!(m.encode(&ids, Lang::Tgt).memory, before);
}

#[test]
fn all_private_paths_are_independent() {
    let mut m = SeqModel::new(tiny(20, ShareSpec::all_private(4)), 3).unwrap();
    let ids = [5, 9, 7, 8];
    let enc_before = m.encode(&ids, Lang::Tgt);
    let dec_before = m.decode_greedy(&ids, Lang::Tgt, Lang::Tgt, 6);
    for l in 0..4 {
        let e = m.layout.encoder[Lang::Src.index()][l];
        perturb(&mut m, e.attn.wq);
        perturb(&mut m, e.ff.w2);
        let d = m.layout.decoder[Lang::Src.index()][l];
        perturb(&mut m, d.cross_attn.wv);
        perturb(&mut m, d.ff.b1);
    }
    let beta = m.layout.encoder_norm[0].beta;
    perturb(&mut m, beta);
    let enc_after = m.encode(&ids, Lang::Tgt);
    assert_eq!(enc_after.memory, enc_before.memory);
    assert_eq!(enc_after.layers, enc_before.layers);
    assert_eq!(m.decode_greedy(&ids, Lang::Tgt, Lang::Tgt, 6), dec_before);
}

#[test]
fn encoder_state_shapes() {
    let m = SeqModel::new(tiny(30, ShareSpec::default()), 4).unwrap();
    let s = m.encode(&[10, 11, 12, 13, 14], Lang::Src);
    assert_eq!(s.len, 6);
    assert_eq!(s.layers.len(), 4);
    assert!(s.layers.iter().all(|l| l.len() == 6 * 16));
}

#[test]
fn tape_free_inference_matches_graph() {
    let m = SeqModel::new(tiny(25, ShareSpec::default()), 5).unwrap();
    let src = [7, 8, 9, 10];
    let prefix = [11, 12, 13];
    let graph = forward_logits(&m, &src, Lang::Src, &prefix, Lang::Tgt).unwrap();
    let enc = m.encode(&src, Lang::Src);
    let mut dec = GreedyDecoder::new(&m, &enc, Lang::Tgt);
    for (pos, tok) in [BOS].iter().chain(&prefix).enumerate() {
        let inc = dec.step(*tok);
        for (a, b) in inc.iter().zip(graph.row(pos)) {
            assert!((a - b).abs() < 1e-4, "position {pos}: {a} vs {b}");
        }
    }
    let states = forward_encoder_states(&m, &src, Lang::Src).unwrap();
    for (g, e) in states.iter().zip(&enc.layers) {
        for (a, b) in g.data().iter().zip(e) {
            assert!((a - b).abs() < 1e-4);
        }
    }
}

#[test]
fn initial_loss_is_near_uniform() {
    let vocab = 200;
    let m = SeqModel::new(tiny(vocab, ShareSpec::default()), 6).unwrap();
    let ex = Example::Translation {
        input: (10..20).collect(),
        input_lang: Lang::Src,
        output: (30..42).collect(),
        output_lang: Lang::Tgt,
    };
    let loss = example_loss(&m, &ex).unwrap();
    let uniform = (vocab as f64).ln();
    assert!((loss - uniform).abs() < 0.1 * uniform, "{loss} vs {uniform}");
}

#[test]
fn random_model_terminates_without_specials() {
    let m = SeqModel::new(tiny(20, ShareSpec::default()), 7).unwrap();
    let out = m.decode_greedy(&[5, 6], Lang::Src, Lang::Tgt, 9);
    assert!(out.len() <= 9);
    assert!(!out.contains(&PAD) && !out.contains(&BOS));
    assert_eq!(m.decode_greedy(&[5, 6], Lang::Src, Lang::Tgt, 9), out);
}

#[test]
fn single_pair_overfits_and_decodes() {
    let mut m = SeqModel::new(tiny(24, ShareSpec::default()), 8).unwrap();
    let src: Vec<usize> = vec![NUM_SPECIALS + 1, NUM_SPECIALS + 4, NUM_SPECIALS + 2];
    let tgt: Vec<usize> = vec![NUM_SPECIALS + 10, NUM_SPECIALS + 12, NUM_SPECIALS + 11, NUM_SPECIALS + 15];
    let ex = Example::Translation {
        input: src.clone(),
        input_lang: Lang::Src,
        output: tgt.clone(),
        output_lang: Lang::Tgt,
    };
    let mut adam = AdamState::new(
        &m.store,
        AdamConfig {
            lr: 3e-3,
            warmup_steps: 0,
            ..AdamConfig::default()
        },
    );
    let mut last = f64::INFINITY;
    for _ in 0..100 {
        let bg = batch_gradients(&m, std::slice::from_ref(&ex), None, false).unwrap();
        last = bg.mean_loss();
        adam.step(&mut m.store, &bg.grads);
    }
    let final_loss = example_loss(&m, &ex).unwrap();
    assert!(final_loss < 0.05, "loss {final_loss} (last step {last})");
    assert_eq!(m.decode_greedy(&src, Lang::Src, Lang::Tgt, 10), tgt);
}

#[test]
fn parallel_and_serial_gradients_are_identical() {
    let m = SeqModel::new(
        ModelConfig {
            dropout: 0.1,
            ..tiny(30, ShareSpec::default())
        },
        9,
    )
    .unwrap();
    let batch: Vec<Example> = (0..5)
        .map(|i| Example::Translation {
            input: vec![6 + i, 7, 8],
            input_lang: Lang::Src,
            output: vec![9, 10 + i],
            output_lang: Lang::Tgt,
        })
        .collect();
    let a = batch_gradients(&m, &batch, Some(3), false).unwrap();
    let b = batch_gradients(&m, &batch, Some(3), true).unwrap();
    assert_eq!(a.losses, b.losses);
    for (id, _) in m.store.iter() {
        assert_eq!(a.grads.get(id), b.grads.get(id));
    }
}

#[test]
fn checkpoint_round_trip_and_copy_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    let m = SeqModel::new(tiny(20, ShareSpec::default()), 10).unwrap();
    m.save(&path, CheckpointKind::SeqModel).unwrap();
    let (back, kind) = SeqModel::load(&path).unwrap();
    assert_eq!(kind, CheckpointKind::SeqModel);
    assert_eq!(back.config, m.config);
    assert_eq!(back.encode(&[5, 6], Lang::Src).memory, m.encode(&[5, 6], Lang::Src).memory);

    let mut wider = SeqModel::new(tiny(21, ShareSpec::default()), 10).unwrap();
    let err = wider.copy_from(&m.store, |_| true).unwrap_err().to_string();
    assert!(err.contains("embed") && err.contains("out_bias"), "{err}");
}

#[test]
fn invalid_configs_are_rejected() {
    let mut c = tiny(20, ShareSpec::default());
    c.num_heads = 3;
    assert!(SeqModel::new(c, 0).is_err());
    let mut c = tiny(20, ShareSpec::default());
    c.share.encoder_private_bottom = 5;
    assert!(SeqModel::new(c, 0).is_err());
}

pub(crate) fn micro_batch() -> Vec<Example> {
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
            input: vec![6, crate::subword::MASK, 8],
            lang: Lang::Src,
            targets: vec![None, Some(7), Some(8)],
        },
    ]
}

#[test]
fn micro_model_gradients_match_finite_differences() {
    let cfg = ModelConfig {
        num_layers: 2,
        model_dim: 4,
        ff_dim: 6,
        num_heads: 2,
        max_len: 8,
        vocab_size: 12,
        share: ShareSpec::default(),
        dropout: 0.0,
        length_penalty: 1.0,
    };
    let m = SeqModel::new(cfg, 11).unwrap().cast::<f64>();
    let err = model_gradient_check(&m, &micro_batch()).unwrap();
    assert!(err < 1e-3, "relative error {err}");
}

mod common;

use common::{toy_config, toy_model, toy_sentence, toy_vocab};
use mav_core::corpus::{apply_plain, apply_template, gen_synthetic, Example, SyntheticSpec, Vocabulary};
use mav_core::error::Error;
use mav_core::model::{
    encoder_forward, mask_for_mlm, mlm_forward, pretrain_mlm, recovery_rate, set_freeze, Checkpoint,
    FreezePolicy, ModelParams, PretrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Mat = Vec<Vec<f64>>;

fn mat(model: &ModelParams, name: &str) -> Mat {
    let p = model.store.by_name(name).unwrap();
    p.value.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn row(model: &ModelParams, name: &str) -> Vec<f64> {
    mat(model, name).remove(0)
}

fn linear(x: &Mat, model: &ModelParams, name: &str) -> Mat {
    let w = mat(model, &format!("{name}.weight"));
    let b = row(model, &format!("{name}.bias"));
    x.iter()
        .map(|xi| {
            (0..b.len())
                .map(|j| b[j] + xi.iter().zip(&w).map(|(a, wr)| a * wr[j]).sum::<f64>())
                .collect()
        })
        .collect()
}

fn layer_norm(x: &Mat, model: &ModelParams, name: &str) -> Mat {
    let g = row(model, &format!("{name}.gamma"));
    let b = row(model, &format!("{name}.beta"));
    x.iter()
        .map(|r| {
            let n = r.len() as f64;
            let mean = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let s = (var + 1e-5).sqrt();
            r.iter().enumerate().map(|(j, v)| (v - mean) / s * g[j] + b[j]).collect()
        })
        .collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / 2f64.sqrt()))
}

fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
}

/// Loop-level reference of the post-LN encoder without dropout.
fn reference_encoder(model: &ModelParams, ids: &[usize]) -> Mat {
    let cfg = &model.config;
    let tok = mat(model, "embed.token");
    let pos = mat(model, "embed.position");
    let x: Mat = ids
        .iter()
        .enumerate()
        .map(|(t, &id)| tok[id].iter().zip(&pos[t]).map(|(a, b)| a + b).collect())
        .collect();
    let mut x = layer_norm(&x, model, "embed.ln");
    let dh = cfg.d_model / cfg.n_heads;
    for l in 0..cfg.n_layers {
        let q = linear(&x, model, &format!("layer{l}.attn.q"));
        let k = linear(&x, model, &format!("layer{l}.attn.k"));
        let v = linear(&x, model, &format!("layer{l}.attn.v"));
        let n = ids.len();
        let mut a = vec![vec![0.0; cfg.d_model]; n];
        for h in 0..cfg.n_heads {
            let cols = h * dh..(h + 1) * dh;
            for i in 0..n {
                let scores: Vec<f64> = (0..n)
                    .map(|j| {
                        cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt()
                    })
                    .collect();
                let m = scores.iter().cloned().fold(f64::MIN, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                let z: f64 = e.iter().sum();
                for c in cols.clone() {
                    a[i][c] = (0..n).map(|j| e[j] / z * v[j][c]).sum();
                }
            }
        }
        let o = linear(&a, model, &format!("layer{l}.attn.o"));
        let h = layer_norm(&add(&x, &o), model, &format!("layer{l}.attn.ln"));
        let f: Mat = linear(&h, model, &format!("layer{l}.ffn.in"))
            .into_iter()
            .map(|r| r.into_iter().map(gelu).collect())
            .collect();
        let f = linear(&f, model, &format!("layer{l}.ffn.out"));
        x = layer_norm(&add(&h, &f), model, &format!("layer{l}.ffn.ln"));
    }
    x
}

fn reference_mlm(model: &ModelParams, hidden: &[f64]) -> Vec<f64> {
    let h = linear(&vec![hidden.to_vec()], model, "head.dense");
    let h: Mat = vec![h[0].iter().map(|&v| gelu(v)).collect()];
    let h = layer_norm(&h, model, "head.ln");
    let tok = mat(model, "embed.token");
    let bias = row(model, "head.bias");
    tok.iter()
        .zip(&bias)
        .map(|(e, b)| b + e.iter().zip(&h[0]).map(|(p, q)| p * q).sum::<f64>())
        .collect()
}

fn perturb(model: &mut ModelParams, seed: u64) {
    // Non-trivial gains and biases so every parameter shows up in the output.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in model.store.iter_mut() {
        p.value.mapv_inplace(|v| v + rng.gen_range(-0.3..0.3));
    }
}

#[test]
fn single_token_single_head_matches_hand_computation() {
    let vocab = toy_vocab();
    let mut cfg = toy_config(&vocab, 1);
    cfg.d_model = 4;
    cfg.n_heads = 1;
    cfg.d_ff = 4;
    let mut model = ModelParams::init(cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    perturb(&mut model, 4);
    // One token attends only to itself, so attention reduces to the value projection.
    let seq = mav_core::corpus::EncodedSequence {
        ids: vec![7],
        mask_pos: None,
        attention_len: 1,
        body_start: 1,
    };
    let got = encoder_forward(&seq, &model, false, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let tok = mat(&model, "embed.token");
    let pos = mat(&model, "embed.position");
    let x0 = vec![tok[7].iter().zip(&pos[0]).map(|(a, b)| a + b).collect::<Vec<_>>()];
    let x = layer_norm(&x0, &model, "embed.ln");
    let v = linear(&x, &model, "layer0.attn.v");
    let o = linear(&v, &model, "layer0.attn.o");
    let h = layer_norm(&add(&x, &o), &model, "layer0.attn.ln");
    let f: Mat = vec![linear(&h, &model, "layer0.ffn.in")[0].iter().map(|&z| gelu(z)).collect()];
    let f = linear(&f, &model, "layer0.ffn.out");
    let want = layer_norm(&add(&h, &f), &model, "layer0.ffn.ln");
    for j in 0..4 {
        assert!((got[[0, j]] - want[0][j]).abs() < 1e-12, "dim {j}: {} vs {}", got[[0, j]], want[0][j]);
    }
}

#[test]
fn encoder_matches_reference_on_random_inputs() {
    let vocab = toy_vocab();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for layers in 1..=2 {
        let mut model = toy_model(&vocab, layers, 20 + layers as u64);
        perturb(&mut model, 30 + layers as u64);
        for _ in 0..10 {
            let len = rng.gen_range(1..10);
            let seq = apply_template(&Example::unlabeled(toy_sentence(len, &mut rng)), &vocab, 16).unwrap();
            let got = encoder_forward(&seq, &model, false, &mut rng).unwrap();
            let want = reference_encoder(&model, seq.active());
            assert_eq!(got.dim(), (seq.attention_len, model.config.d_model));
            for (i, r) in want.iter().enumerate() {
                for (j, w) in r.iter().enumerate() {
                    assert!((got[[i, j]] - w).abs() < 1e-10);
                }
            }
            for p in [0, seq.mask_pos.unwrap(), seq.attention_len - 1] {
                let logits = mlm_forward(&got, p, &model).unwrap();
                let want = reference_mlm(&model, &want[p]);
                assert_eq!(logits.len(), vocab.len());
                for (a, b) in logits.iter().zip(&want) {
                    assert!((a - b).abs() < 1e-10);
                }
            }
        }
    }
}

#[test]
fn padding_does_not_change_active_rows() {
    let vocab = toy_vocab();
    let model = toy_model(&vocab, 2, 5);
    let x = Example::unlabeled("w1 w2 w3");
    let short = apply_template(&x, &vocab, 8).unwrap();
    let long = apply_template(&x, &vocab, 16).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = encoder_forward(&short, &model, false, &mut rng).unwrap();
    let b = encoder_forward(&long, &model, false, &mut rng).unwrap();
    assert_eq!(a, b);
}

#[test]
fn dropout_only_in_train_mode() {
    let vocab = toy_vocab();
    let model = toy_model(&vocab, 2, 6);
    let seq = apply_template(&Example::unlabeled("w4 w5 w6 w7"), &vocab, 16).unwrap();
    let eval_a = encoder_forward(&seq, &model, false, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let eval_b = encoder_forward(&seq, &model, false, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    assert_eq!(eval_a, eval_b);
    let train_a = encoder_forward(&seq, &model, true, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let train_b = encoder_forward(&seq, &model, true, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let train_c = encoder_forward(&seq, &model, true, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    assert_eq!(train_a, train_b);
    assert_ne!(train_a, train_c);
    assert_ne!(train_a, eval_a);
}

#[test]
fn mlm_forward_rejects_bad_position() {
    let vocab = toy_vocab();
    let model = toy_model(&vocab, 1, 0);
    let seq = apply_template(&Example::unlabeled("w1"), &vocab, 16).unwrap();
    let h = encoder_forward(&seq, &model, false, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(matches!(mlm_forward(&h, h.nrows(), &model), Err(Error::OutOfRange { .. })));
}

#[test]
fn decoder_is_tied_to_token_embedding() {
    let vocab = toy_vocab();
    let mut model = toy_model(&vocab, 1, 8);
    assert!(model.store.iter().all(|p| !p.name.contains("decoder")));
    assert_eq!(model.decoder_weight(), model.token_embedding().t().to_owned());
    let seq = apply_template(&Example::unlabeled("w1 w2"), &vocab, 16).unwrap();
    let h = encoder_forward(&seq, &model, false, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let before = mlm_forward(&h, 1, &model).unwrap();
    let idx = model.store.index_of("embed.token").unwrap();
    model.store.get_mut(idx).value[[9, 0]] += 1.0;
    // Hidden states held fixed: only the logit of token 9 moves.
    let after = mlm_forward(&h, 1, &model).unwrap();
    for (id, (a, b)) in before.iter().zip(&after).enumerate() {
        assert_eq!(a == b, id != 9, "token {id}");
    }
}

#[test]
fn freeze_policies_partition_parameters() {
    let vocab = toy_vocab();
    let mut model = toy_model(&vocab, 2, 0);
    set_freeze(&mut model, FreezePolicy::MlmHead);
    let frozen: Vec<_> = model.store.iter().filter(|p| p.frozen).map(|p| p.name.clone()).collect();
    assert_eq!(frozen, ["head.dense.weight", "head.dense.bias", "head.ln.gamma", "head.ln.beta", "head.bias"]);
    set_freeze(&mut model, FreezePolicy::Encoder);
    assert!(model.store.iter().all(|p| p.frozen != p.name.starts_with("head.")));
    set_freeze(&mut model, FreezePolicy::None);
    assert!(model.store.iter().all(|p| !p.frozen));
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let vocab = toy_vocab();
    let mut model = toy_model(&vocab, 2, 9);
    set_freeze(&mut model, FreezePolicy::Encoder);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    Checkpoint::new(&model, vocab.hash()).save(&path).unwrap();
    let back = Checkpoint::load(&path, Some(&vocab.hash())).unwrap().model().unwrap();
    assert_eq!(back.config, model.config);
    assert_eq!(back.store.checksum(|_| true), model.store.checksum(|_| true));
    for (a, b) in back.store.iter().zip(model.store.iter()) {
        assert_eq!((a.name.as_str(), a.frozen), (b.name.as_str(), b.frozen));
        assert_eq!(a.value, b.value);
    }
    assert!(matches!(
        Checkpoint::load(&path, Some("not-the-hash")),
        Err(Error::VocabMismatch { .. })
    ));
}

#[test]
fn masking_keeps_template_and_mixes_replacements() {
    let vocab = toy_vocab();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (mut mask, mut random, mut kept, mut selected, mut body) = (0, 0, 0, 0, 0);
    for _ in 0..4000 {
        let seq = apply_template(&Example::unlabeled(toy_sentence(12, &mut rng)), &vocab, 16).unwrap();
        let m = mask_for_mlm(&seq, 0.3, true, vocab.len(), &mut rng);
        assert_eq!(m.input.ids[..seq.body_start], seq.ids[..seq.body_start]);
        assert_eq!(m.input.ids[seq.attention_len - 1..], seq.ids[seq.attention_len - 1..]);
        body += seq.body_range().len();
        for &(pos, orig) in &m.targets {
            assert!(seq.body_range().contains(&pos));
            assert_eq!(seq.ids[pos], orig);
            selected += 1;
            match m.input.ids[pos] {
                Vocabulary::MASK_ID => mask += 1,
                id if id == orig => kept += 1,
                id => {
                    assert!(!vocab.is_special(id));
                    random += 1
                }
            }
        }
    }
    let rate = selected as f64 / body as f64;
    assert!((rate - 0.3).abs() < 0.01, "selection rate {rate}");
    let n = selected as f64;
    // A random replacement equal to the original counts as kept.
    let p_same = 1.0 / (vocab.len() - Vocabulary::NUM_SPECIAL) as f64;
    assert!((mask as f64 / n - 0.8).abs() < 0.01);
    assert!((random as f64 / n - 0.1 * (1.0 - p_same)).abs() < 0.01);
    assert!((kept as f64 / n - (0.1 + 0.1 * p_same)).abs() < 0.01);

    let seq = apply_plain(&Example::unlabeled("w1 w2 w3"), &vocab, 16).unwrap();
    let m = mask_for_mlm(&seq, 0.999, false, vocab.len(), &mut rng);
    assert!(m.targets.iter().all(|&(p, _)| m.input.ids[p] == Vocabulary::MASK_ID));
}

#[test]
fn pretraining_rejects_degenerate_mask_rate() {
    let vocab = toy_vocab();
    let corpus = vec![Example::unlabeled("w1 w2 w3")];
    for rate in [0.0, 1.0] {
        let cfg = PretrainConfig { mask_rate: rate, ..PretrainConfig::default() };
        assert!(matches!(
            pretrain_mlm(&corpus, &vocab, toy_config(&vocab, 1), &cfg),
            Err(Error::Config(_))
        ));
    }
}

#[test]
fn pretraining_is_deterministic() {
    let vocab = toy_vocab();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let corpus: Vec<_> = (0..40).map(|_| Example::unlabeled(toy_sentence(6, &mut rng))).collect();
    let cfg = PretrainConfig { epochs: 2, batch_size: 8, ..PretrainConfig::default() };
    let a = pretrain_mlm(&corpus, &vocab, toy_config(&vocab, 1), &cfg).unwrap();
    let b = pretrain_mlm(&corpus, &vocab, toy_config(&vocab, 1), &cfg).unwrap();
    assert_eq!(a.store.checksum(|_| true), b.store.checksum(|_| true));
    assert!(a.store.all_finite());
}

/// 10 keywords per class, 40 background words, sentences of 4 to 10 tokens.
/// The Bayes ceiling for top-1 recovery on this generator is about 5%, so the
/// bar is four times chance.
#[test]
fn pretraining_recovers_masked_tokens_well_above_chance() {
    let spec = SyntheticSpec {
        length_range: (4, 10),
        ..SyntheticSpec::with_sizes(6, 10, 40)
    };
    let (corpus, _) = gen_synthetic(&spec, 1).unwrap();
    let (held_out, _) = gen_synthetic(&SyntheticSpec { corpus_size: 3000, ..spec.clone() }, 2).unwrap();
    let vocab = mav_core::corpus::build_vocab(&corpus).unwrap();
    let cfg = PretrainConfig { epochs: 30, ..PretrainConfig::default() };
    let model = pretrain_mlm(&corpus, &vocab, mav_core::model::ModelConfig::toy(vocab.len()), &cfg).unwrap();
    let (hit, total) = recovery_rate(&model, &held_out, &vocab, 0.15, 7).unwrap();
    let rate = hit as f64 / total as f64;
    let chance = 1.0 / vocab.len() as f64;
    assert!(total > 2000);
    assert!(rate >= 4.0 * chance, "recovery {rate:.4} vs chance {chance:.4}");
}

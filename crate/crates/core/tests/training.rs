mod common;

use common::{toy_mav, toy_model, toy_templated, toy_vocab};
use mav_core::corpus::{build_vocab, gen_synthetic, sample_few_shot, SyntheticSpec, UndersizedPolicy};
use mav_core::model::{FreezePolicy, ModelConfig, ModelParams};
use mav_core::selftrain::{train_loop, TrainConfig, TrainMode, Trainer};
use mav_core::verbalizers::{HeadKind, HeadVariant};
use mav_core::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn config(freeze: FreezePolicy, lambda1: f64, lambda2: f64) -> TrainConfig {
    TrainConfig {
        batch_size: 4,
        mu: 2,
        tau: 0.0,
        lambda1,
        lambda2,
        lr: 1e-2,
        freeze,
        seed: 5,
        ..TrainConfig::default()
    }
}

fn values(model: &ModelParams) -> Vec<ndarray::Array2<f64>> {
    model.store.iter().map(|p| p.value.clone()).collect()
}

fn head_values(head: &HeadVariant) -> Vec<ndarray::Array2<f64>> {
    head.store().unwrap().iter().map(|p| p.value.clone()).collect()
}

struct Toy {
    trainer: Trainer,
    labeled: Vec<mav_core::corpus::EncodedSequence>,
    unlabeled: Vec<mav_core::corpus::EncodedSequence>,
}

fn toy(cfg: TrainConfig) -> Toy {
    let vocab = toy_vocab();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let labeled = toy_templated(4, &vocab, &mut rng);
    let unlabeled = toy_templated(8, &vocab, &mut rng);
    let trainer = Trainer::new(toy_model(&vocab, 2, 2), toy_mav(&vocab, 3, 3), cfg).unwrap();
    Toy { trainer, labeled, unlabeled }
}

impl Toy {
    fn step(&mut self, with_unlabeled: bool) -> mav_core::selftrain::LossBreakdown {
        let lb: Vec<_> = self.labeled.iter().enumerate().map(|(i, s)| (s, i % 3)).collect();
        let ub: Vec<_> = if with_unlabeled { self.unlabeled.iter().collect() } else { Vec::new() };
        self.trainer.step(&lb, &ub).unwrap()
    }
}

#[test]
fn zero_lambdas_reproduce_the_supervised_update() {
    for freeze in [FreezePolicy::None, FreezePolicy::MlmHead, FreezePolicy::Encoder] {
        let mut semi = toy(config(freeze, 0.0, 0.0));
        let mut sup = toy(config(freeze, 0.0, 0.0));
        for _ in 0..3 {
            let a = semi.step(true);
            let b = sup.step(false);
            assert_eq!(a.l_sup, b.l_sup);
            assert!(a.l_st > 0.0 && a.l_mlm > 0.0);
            assert_eq!(a.l_total, a.l_sup);
            // Sequential dropout draws differ after the first step, so realign.
            sup.trainer.rng = semi.trainer.rng.clone();
        }
        assert_eq!(values(&semi.trainer.model), values(&sup.trainer.model), "{freeze:?}");
        assert_eq!(head_values(&semi.trainer.head), head_values(&sup.trainer.head));
    }
}

#[test]
fn unfrozen_step_moves_every_parameter() {
    let mut t = toy(config(FreezePolicy::None, 1.0, 1.0));
    let before = values(&t.trainer.model);
    let head_before = head_values(&t.trainer.head);
    t.step(true);
    for (p, b) in t.trainer.model.store.iter().zip(&before) {
        assert_ne!(&p.value, b, "{} did not move", p.name);
    }
    for (a, b) in head_values(&t.trainer.head).iter().zip(&head_before) {
        assert_ne!(a, b);
    }
}

#[test]
fn freeze_policies_hold_their_groups_fixed() {
    for freeze in [FreezePolicy::MlmHead, FreezePolicy::Encoder] {
        let mut t = toy(config(freeze, 1.0, 1.0));
        let before = values(&t.trainer.model);
        for _ in 0..2 {
            t.step(true);
        }
        for (p, b) in t.trainer.model.store.iter().zip(&before) {
            let fixed = match freeze {
                FreezePolicy::MlmHead => p.name.starts_with("head."),
                _ => !p.name.starts_with("head."),
            };
            assert_eq!(p.value == b, fixed, "{freeze:?} {}", p.name);
        }
    }
}

#[test]
fn unreachable_threshold_silences_self_training() {
    let mut t = toy(TrainConfig { tau: 1.01, ..config(FreezePolicy::MlmHead, 1.0, 0.1) });
    let l = t.step(true);
    assert_eq!(l.l_st, 0.0);
    assert_eq!(l.passed_count, 0);
    assert!(t.trainer.sigma.iter().all(|&s| s == 0));
}

#[test]
fn zero_threshold_passes_everything_and_feeds_flexmatch() {
    let mut t = toy(TrainConfig { flexmatch: true, ..config(FreezePolicy::MlmHead, 1.0, 0.1) });
    assert_eq!(t.trainer.thresholds(), vec![0.0; 3]);
    let l = t.step(true);
    t.trainer.config.tau = 0.9;
    assert_eq!(l.passed_count, 8);
    assert_eq!(t.trainer.sigma.iter().sum::<usize>(), 8);
    assert_eq!(l.class_pass_counts, t.trainer.sigma);
    let max = *t.trainer.sigma.iter().max().unwrap() as f64;
    for (th, &s) in t.trainer.thresholds().iter().zip(&t.trainer.sigma) {
        assert!((th - 0.9 * s as f64 / max).abs() < 1e-15);
    }
}

#[test]
fn trainer_rejects_bad_configs() {
    let vocab = toy_vocab();
    let model = toy_model(&vocab, 1, 0);
    let head = toy_mav(&vocab, 2, 0);
    for bad in [
        TrainConfig { batch_size: 0, ..TrainConfig::default() },
        TrainConfig { lambda1: -1.0, ..TrainConfig::default() },
        TrainConfig { lr: 0.0, ..TrainConfig::default() },
        TrainConfig { tau: f64::NAN, ..TrainConfig::default() },
    ] {
        assert!(matches!(Trainer::new(model.clone(), head.clone(), bad), Err(Error::Config(_))));
    }
}

fn tiny_split() -> (mav_core::corpus::FewShotSplit, mav_core::corpus::Vocabulary) {
    let spec = SyntheticSpec {
        corpus_size: 50,
        train_per_class: 30,
        test_per_class: 5,
        ..SyntheticSpec::with_sizes(3, 4, 10)
    };
    let (corpus, pool) = gen_synthetic(&spec, 0).unwrap();
    let vocab = build_vocab(&corpus).unwrap();
    let split = sample_few_shot(&pool, 4, 2, 1, UndersizedPolicy::Drop).unwrap();
    (split, vocab)
}

fn tiny_model(vocab: &mav_core::corpus::Vocabulary) -> ModelParams {
    let cfg = ModelConfig { d_model: 8, n_heads: 2, d_ff: 16, max_len: 16, ..ModelConfig::toy(vocab.len()) };
    ModelParams::init(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
}

#[test]
fn train_loop_is_deterministic_and_keeps_the_best_checkpoint() {
    let (split, vocab) = tiny_split();
    let cfg = TrainConfig { epochs: 6, eval_every: 2, lr: 1e-2, ..TrainConfig::default() };
    for mode in TrainMode::ALL {
        let run = || {
            let model = tiny_model(&vocab);
            let head = toy_mav(&vocab, 3, 1);
            train_loop(&split, &vocab, model, head, mode, &cfg).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.model.store.checksum(|_| true), b.model.store.checksum(|_| true));
        assert_eq!(head_values(&a.head), head_values(&b.head));
        assert_eq!(a.history, b.history);

        let epochs: Vec<_> = a.history.iter().map(|h| h.epoch).collect();
        assert_eq!(epochs, [0, 2, 4, 6]);
        let best = a.history.iter().map(|h| h.dev_acc).fold(f64::MIN, f64::max);
        assert_eq!(a.best_dev_acc, best);
        let last_best = a.history.iter().rev().find(|h| h.dev_acc == best).unwrap();
        assert_eq!(a.best_epoch, last_best.epoch);
        let per_epoch = match mode {
            TrainMode::Full => (split.labeled.len() + split.unlabeled.len()).div_ceil(8),
            _ => split.labeled.len().div_ceil(8),
        };
        assert_eq!(a.steps, 6 * per_epoch as u64);
        if mode != TrainMode::Semi {
            assert!(a.history.iter().all(|h| h.l_st == 0.0 && h.l_mlm == 0.0));
        }
    }
}

#[test]
fn train_loop_rejects_semi_without_unlabeled_data() {
    let (mut split, vocab) = tiny_split();
    split.unlabeled.clear();
    let r = train_loop(
        &split,
        &vocab,
        tiny_model(&vocab),
        toy_mav(&vocab, 3, 1),
        TrainMode::Semi,
        &TrainConfig::default(),
    );
    assert!(matches!(r, Err(Error::Empty(_))));
}

#[test]
fn every_head_kind_trains() {
    let (split, vocab) = tiny_split();
    let cfg = TrainConfig { epochs: 2, eval_every: 1, ..TrainConfig::default() };
    for kind in [HeadKind::Cls, HeadKind::Mav, HeadKind::MaskRep] {
        let model = tiny_model(&vocab);
        let head = mav_core::verbalizers::init_head(kind, &model, 3, Some(4), None, None, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        let out = train_loop(&split, &vocab, model, head, TrainMode::Semi, &cfg).unwrap();
        assert_eq!(out.head.kind(), kind);
        assert!(out.model.store.all_finite());
    }
}

#![allow(dead_code)]

use std::path::PathBuf;

use mav_core::corpus::{apply_template, build_vocab, EncodedSequence, Example, Vocabulary};
use mav_core::model::{ModelConfig, ModelParams};
use mav_core::verbalizers::{HeadVariant, MavParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Where benchmark checkpoints are cached between test runs.
pub fn bench_cache() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("bench")
}

/// Twenty plain words plus the template colon.
pub fn toy_vocab() -> Vocabulary {
    let mut words: Vec<String> = (0..20).map(|i| format!("w{i}")).collect();
    words.push(":".into());
    build_vocab(&[Example::unlabeled(words.join(" "))]).unwrap()
}

pub fn toy_config(vocab: &Vocabulary, n_layers: usize) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_layers,
        n_heads: 2,
        d_ff: 16,
        max_len: 16,
        dropout_p: 0.1,
        vocab_size: vocab.len(),
    }
}

pub fn toy_model(vocab: &Vocabulary, n_layers: usize, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ModelParams::init(toy_config(vocab, n_layers), &mut rng).unwrap()
}

pub fn toy_mav(vocab: &Vocabulary, classes: usize, seed: u64) -> HeadVariant {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    HeadVariant::Mav(MavParams::init(vocab.len(), 4, classes, &mut rng).unwrap())
}

/// Random sentence of `len` toy words.
pub fn toy_sentence<R: Rng>(len: usize, rng: &mut R) -> String {
    (0..len)
        .map(|_| format!("w{}", rng.gen_range(0..20)))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn toy_templated<R: Rng>(n: usize, vocab: &Vocabulary, rng: &mut R) -> Vec<EncodedSequence> {
    (0..n)
        .map(|_| {
            let len = rng.gen_range(1..8);
            apply_template(&Example::unlabeled(toy_sentence(len, rng)), vocab, 16).unwrap()
        })
        .collect()
}

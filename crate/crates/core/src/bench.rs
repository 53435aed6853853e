//! The synthetic benchmark: one generated task, one pre-trained encoder, and
//! helpers that train and score any head in any mode on a seeded split.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{
    build_vocab, encode_all, gen_synthetic, sample_few_shot, Example, FewShotSplit, LabeledPool,
    SyntheticSpec, UndersizedPolicy, Vocabulary,
};
use crate::error::Result;
use crate::eval::accuracy;
use crate::model::{pretrain_mlm, Checkpoint, ModelConfig, ModelParams, PretrainConfig};
use crate::selftrain::{labels_of, train_loop, TrainConfig, TrainMode, TrainOutcome};
use crate::verbalizers::{
    amulap_build, argmax, init_head, predict_probs, HeadKind, HeadVariant, LabelWordMap,
    AMULAP_TOP_K,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub spec: SyntheticSpec,
    pub data_seed: u64,
    /// `vocab_size` is filled in from the generated vocabulary.
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    pub k: usize,
    pub mu: usize,
    pub train: TrainConfig,
    pub d_ve: Option<usize>,
}

impl BenchConfig {
    /// Six classes, forty keywords each, forty background words, mix rate
    /// 0.5, sentences of two to six words.
    pub fn standard() -> Self {
        let mut spec = SyntheticSpec::with_sizes(6, 40, 40);
        spec.length_range = (2, 6);
        spec.prompt_rate = 0.25;
        BenchConfig {
            spec,
            data_seed: 0,
            model: ModelConfig::toy(0),
            pretrain: PretrainConfig::default(),
            k: 16,
            mu: 4,
            train: TrainConfig {
                lambda1: 2.0,
                lambda2: 1.0,
                lr: 1e-4,
                head_lr: Some(1e-3),
                epochs: 40,
                eval_every: 5,
                ..TrainConfig::default()
            },
            d_ve: None,
        }
    }

    /// The standard task with class keywords at 90% of positions.
    pub fn keyword_rich() -> Self {
        let mut c = Self::standard();
        c.spec.mix_rate = 0.9;
        c
    }

    /// Stable digest of everything that determines the pre-trained model.
    pub fn pretrain_key(&self) -> String {
        let text = serde_json::to_string(&(&self.spec, self.data_seed, &self.model, &self.pretrain))
            .expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))[..16].to_string()
    }
}

#[derive(Clone, Debug)]
pub struct Bench {
    pub config: BenchConfig,
    pub corpus: Vec<Example>,
    pub pool: LabeledPool,
    pub vocab: Vocabulary,
    pub pretrained: ModelParams,
}

/// Result of one trained cell.
#[derive(Clone, Debug)]
pub struct BenchRun {
    pub split: FewShotSplit,
    pub outcome: TrainOutcome,
    pub test_acc: f64,
}

impl Bench {
    fn generate(config: &BenchConfig) -> Result<(Vec<Example>, LabeledPool, Vocabulary)> {
        let (corpus, pool) = gen_synthetic(&config.spec, config.data_seed)?;
        let mut all = corpus.clone();
        all.extend(pool.train.iter().cloned());
        let vocab = build_vocab(&all)?;
        Ok((corpus, pool, vocab))
    }

    pub fn prepare(config: BenchConfig) -> Result<Self> {
        let (corpus, pool, vocab) = Self::generate(&config)?;
        let mut mc = config.model.clone();
        mc.vocab_size = vocab.len();
        let pretrained = pretrain_mlm(&corpus, &vocab, mc, &config.pretrain)?;
        Ok(Bench {
            config,
            corpus,
            pool,
            vocab,
            pretrained,
        })
    }

    /// Like [`Bench::prepare`] but reuses a pre-trained checkpoint stored in
    /// `dir` under the config's digest.
    pub fn prepare_cached(config: BenchConfig, dir: &Path) -> Result<Self> {
        let (corpus, pool, vocab) = Self::generate(&config)?;
        let path = dir.join(format!("bench-{}.json", config.pretrain_key()));
        if let Ok(ck) = Checkpoint::load(&path, Some(&vocab.hash())) {
            return Ok(Bench {
                pretrained: ck.model()?,
                config,
                corpus,
                pool,
                vocab,
            });
        }
        let bench = Self::prepare(config)?;
        std::fs::create_dir_all(dir).map_err(|e| crate::Error::io(dir, e))?;
        let tmp = path.with_extension("tmp");
        Checkpoint::new(&bench.pretrained, bench.vocab.hash()).save(&tmp)?;
        std::fs::rename(&tmp, &path).map_err(|e| crate::Error::io(&path, e))?;
        Ok(bench)
    }

    pub fn split(&self, seed: u64) -> Result<FewShotSplit> {
        let mut s = sample_few_shot(&self.pool, self.config.k, self.config.mu, seed, UndersizedPolicy::Drop)?;
        s.manifest.vocab_hash = Some(self.vocab.hash());
        Ok(s)
    }

    /// Manual label words (each retained class's first keyword).
    pub fn label_words(&self, split: &FewShotSplit) -> Result<LabelWordMap> {
        let words = self.config.spec.manual_label_words();
        let chosen: Vec<String> = split.manifest.classes.iter().map(|&c| words[c].clone()).collect();
        LabelWordMap::from_words(&chosen, &self.vocab)
    }

    /// Fresh head for `kind`, building label-word maps where needed.
    pub fn init_head(&self, kind: HeadKind, split: &FewShotSplit, seed: u64) -> Result<HeadVariant> {
        init_head_for(kind, &self.pretrained, split, &self.vocab, self.config.d_ve, || self.label_words(split), seed)
    }

    pub fn test_accuracy(&self, model: &ModelParams, head: &HeadVariant, split: &FewShotSplit) -> Result<f64> {
        test_accuracy(model, head, &split.test, &self.vocab)
    }

    /// Trains one (head, mode, seed) cell with `train` and scores it on test.
    pub fn run(&self, kind: HeadKind, mode: TrainMode, seed: u64, train: &TrainConfig) -> Result<BenchRun> {
        let split = self.split(seed)?;
        let head = self.init_head(kind, &split, seed)?;
        let mut cfg = train.clone();
        cfg.seed = seed;
        let outcome = train_loop(&split, &self.vocab, self.pretrained.clone(), head, mode, &cfg)?;
        let test_acc = self.test_accuracy(&outcome.model, &outcome.head, &split)?;
        Ok(BenchRun {
            split,
            outcome,
            test_acc,
        })
    }
}

/// Builds a head for `kind`; the multi-word map comes from the labeled split.
pub fn init_head_for(
    kind: HeadKind,
    model: &ModelParams,
    split: &FewShotSplit,
    vocab: &Vocabulary,
    d_ve: Option<usize>,
    label_words: impl FnOnce() -> Result<LabelWordMap>,
    seed: u64,
) -> Result<HeadVariant> {
    let c = split.num_classes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4d41_5648);
    let single = match kind {
        HeadKind::Single => Some(label_words()?),
        _ => None,
    };
    let multi = match kind {
        HeadKind::Multi => {
            let seqs = encode_all(&split.labeled, vocab, true, model.config.max_len)?;
            let labeled: Vec<_> = seqs.into_iter().zip(labels_of(&split.labeled)?).collect();
            Some(amulap_build(&labeled, model, c, AMULAP_TOP_K)?)
        }
        _ => None,
    };
    init_head(kind, model, c, d_ve, single, multi, &mut rng)
}

pub fn test_accuracy(model: &ModelParams, head: &HeadVariant, test: &[Example], vocab: &Vocabulary) -> Result<f64> {
    let seqs = encode_all(test, vocab, head.kind().uses_template(), model.config.max_len)?;
    let refs: Vec<_> = seqs.iter().collect();
    let probs = predict_probs(model, head, &refs)?;
    let preds: Vec<usize> = probs.outer_iter().map(|r| argmax(r.as_slice().unwrap())).collect();
    accuracy(&preds, &labels_of(test)?)
}

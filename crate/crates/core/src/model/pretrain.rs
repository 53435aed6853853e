use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{apply_plain, EncodedSequence, Example, Vocabulary};
use crate::error::{Error, Result};
use crate::model::encoder::{bind, compute_gradients, encode_batch, mlm_logits, BatchInput, DropoutCtx, ModelParams};
use crate::model::optim::{Adam, AdamConfig};
use crate::model::tape::Tape;
use crate::model::ModelConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub mask_rate: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            mask_rate: 0.15,
            epochs: 30,
            lr: 1e-3,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// A corrupted sequence and the original ids at its corrupted positions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlmMasking {
    pub input: EncodedSequence,
    /// `(position, original id)` pairs.
    pub targets: Vec<(usize, usize)>,
}

/// Selects each body position with probability `rate`.
///
/// With `bert_mix` the selected positions become `[MASK]` 80% of the time, a
/// uniform non-special token 10%, and stay unchanged 10%; otherwise every
/// selected position becomes `[MASK]`. Template positions are never selected.
pub fn mask_for_mlm<R: Rng>(
    seq: &EncodedSequence,
    rate: f64,
    bert_mix: bool,
    vocab_size: usize,
    rng: &mut R,
) -> MlmMasking {
    let mut input = seq.clone();
    let mut targets = Vec::new();
    for pos in seq.body_range() {
        if !rng.gen_bool(rate) {
            continue;
        }
        let original = seq.ids[pos];
        targets.push((pos, original));
        input.ids[pos] = if !bert_mix {
            Vocabulary::MASK_ID
        } else {
            let r: f64 = rng.gen();
            if r < 0.8 {
                Vocabulary::MASK_ID
            } else if r < 0.9 && vocab_size > Vocabulary::NUM_SPECIAL {
                rng.gen_range(Vocabulary::NUM_SPECIAL..vocab_size)
            } else {
                original
            }
        };
    }
    MlmMasking { input, targets }
}

/// Trains encoder and MLM head from scratch on the masked-token objective.
pub fn pretrain_mlm(
    corpus: &[Example],
    vocab: &Vocabulary,
    config: ModelConfig,
    cfg: &PretrainConfig,
) -> Result<ModelParams> {
    if !(cfg.mask_rate > 0.0 && cfg.mask_rate < 1.0) {
        return Err(Error::Config(format!(
            "mask_rate must lie in (0, 1), got {}",
            cfg.mask_rate
        )));
    }
    if config.vocab_size != vocab.len() {
        return Err(Error::Config(format!(
            "model vocab_size {} differs from vocabulary size {}",
            config.vocab_size,
            vocab.len()
        )));
    }
    if corpus.is_empty() {
        return Err(Error::Empty("pre-training corpus"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ModelParams::init(config, &mut rng)?;
    let seqs = corpus
        .iter()
        .map(|e| apply_plain(e, vocab, params.config.max_len))
        .collect::<Result<Vec<_>>>()?;
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr), &params.store);
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    let mut step = 0usize;
    let batch_size = cfg.batch_size.max(1);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(batch_size) {
            let masked: Vec<MlmMasking> = chunk
                .iter()
                .map(|&i| mask_for_mlm(&seqs[i], cfg.mask_rate, true, vocab.len(), &mut rng))
                .collect();
            let total: usize = masked.iter().map(|m| m.targets.len()).sum();
            if total == 0 {
                continue;
            }
            let inputs: Vec<&EncodedSequence> = masked.iter().map(|m| &m.input).collect();
            let batch = BatchInput::new(&inputs, params.config.max_len)?;
            let mut tape = Tape::new();
            let bound = bind(&mut tape, &params.store);
            let mut ctx = DropoutCtx {
                p: params.config.dropout_p,
                rng: &mut rng,
            };
            let hidden = encode_batch(&mut tape, &params, &bound, &batch, Some(&mut ctx));
            let mut rows = Vec::with_capacity(total);
            let mut picks = Vec::with_capacity(total);
            for (s, m) in masked.iter().enumerate() {
                for &(pos, target) in &m.targets {
                    picks.push((rows.len(), target, -1.0 / total as f64));
                    rows.push(batch.row(s, pos));
                }
            }
            let h = tape.rows(hidden, &rows);
            let logits = mlm_logits(&mut tape, &params, &bound, h);
            let logp = tape.log_softmax(logits);
            let loss = tape.pick(logp, picks);
            let value = tape.scalar(loss);
            if !value.is_finite() {
                return Err(Error::Diverged { step, loss: value });
            }
            let grads = compute_gradients(&tape, loss, &[(&params.store, &bound)])?;
            adam.step(&mut params.store, &grads[0]);
            epoch_loss += value;
            batches += 1;
            step += 1;
        }
        log::debug!(
            "pretrain epoch {epoch}: mean loss {:.4}",
            epoch_loss / batches.max(1) as f64
        );
    }
    Ok(params)
}

/// Top-1 recovery of `[MASK]`-replaced tokens at rate `mask_rate`, evaluated
/// without dropout. Returns `(correct, total)`.
pub fn recovery_rate(
    params: &ModelParams,
    held_out: &[Example],
    vocab: &Vocabulary,
    mask_rate: f64,
    seed: u64,
) -> Result<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut correct, mut total) = (0, 0);
    for chunk in held_out.chunks(64) {
        let masked = chunk
            .iter()
            .map(|e| {
                let seq = apply_plain(e, vocab, params.config.max_len)?;
                Ok(mask_for_mlm(&seq, mask_rate, false, vocab.len(), &mut rng))
            })
            .collect::<Result<Vec<_>>>()?;
        let inputs: Vec<&EncodedSequence> = masked.iter().map(|m| &m.input).collect();
        let batch = BatchInput::new(&inputs, params.config.max_len)?;
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &params.store);
        let hidden = encode_batch(&mut tape, params, &bound, &batch, None);
        let mut rows = Vec::new();
        let mut targets = Vec::new();
        for (s, m) in masked.iter().enumerate() {
            for &(pos, t) in &m.targets {
                rows.push(batch.row(s, pos));
                targets.push(t);
            }
        }
        if rows.is_empty() {
            continue;
        }
        let h = tape.rows(hidden, &rows);
        let logits = mlm_logits(&mut tape, params, &bound, h);
        for (row, &t) in tape.value(logits).rows().into_iter().zip(&targets) {
            let best = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
                .0;
            correct += usize::from(best == t);
            total += 1;
        }
    }
    Ok((correct, total))
}

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::EncodedSequence;
use crate::error::{Error, Result};
use crate::model::tape::Tape;
use crate::model::{bind, encode_batch, mask_for_mlm, mlm_logits, BatchInput, MlmMasking, ModelParams};
use crate::verbalizers::argmax;

/// Probability floor applied before every logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

pub(crate) fn neg_log(p: f64) -> f64 {
    -p.max(PROB_FLOOR).ln()
}

/// Mean cross-entropy of probability rows against hard labels.
pub fn supervised_loss(preds: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::shape("supervised loss labels", preds.len(), labels.len()));
    }
    if preds.is_empty() {
        return Err(Error::Empty("labeled batch"));
    }
    let mut sum = 0.0;
    for (p, &y) in preds.iter().zip(labels) {
        let py = *p.get(y).ok_or(Error::OutOfRange {
            what: "label",
            index: y,
            len: p.len(),
        })?;
        sum += neg_log(py);
    }
    Ok(sum / preds.len() as f64)
}

/// Hard pseudo-label drawn from a weak-branch distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabel {
    pub distribution: Vec<f64>,
    pub label: usize,
    pub confidence: f64,
    pub passed: bool,
}

impl PseudoLabel {
    /// `thresholds` holds one entry per class; the one for the argmax class applies.
    pub fn new(distribution: Vec<f64>, thresholds: &[f64]) -> Self {
        let label = argmax(&distribution);
        let confidence = distribution[label];
        let tau = thresholds.get(label).copied().unwrap_or(f64::INFINITY);
        PseudoLabel {
            passed: confidence >= tau,
            distribution,
            label,
            confidence,
        }
    }

    pub fn one_hot(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.distribution.len()];
        v[self.label] = 1.0;
        v
    }
}

pub fn pseudo_labels(weak: &[Vec<f64>], thresholds: &[f64]) -> Vec<PseudoLabel> {
    weak.iter().map(|w| PseudoLabel::new(w.clone(), thresholds)).collect()
}

/// Thresholded consistency loss, always normalized by the number of unlabeled
/// samples rather than the number that pass. Also returns per-sample pseudo-labels.
pub fn selftrain_loss(
    weak: &[Vec<f64>],
    strong: &[Vec<f64>],
    thresholds: &[f64],
) -> Result<(f64, Vec<PseudoLabel>)> {
    if weak.len() != strong.len() {
        return Err(Error::shape("strong branch", weak.len(), strong.len()));
    }
    if weak.is_empty() {
        return Err(Error::Empty("unlabeled batch"));
    }
    let labels = pseudo_labels(weak, thresholds);
    let mut sum = 0.0;
    for (pl, q) in labels.iter().zip(strong) {
        if pl.passed {
            sum += neg_log(q[pl.label]);
        }
    }
    Ok((sum / weak.len() as f64, labels))
}

/// `τ_c = τ · σ_c / max σ`, or `τ` everywhere before any sample has passed.
pub fn flexmatch_thresholds(sigma: &[usize], tau: f64) -> Vec<f64> {
    let max = sigma.iter().copied().max().unwrap_or(0);
    if max == 0 {
        return vec![tau; sigma.len()];
    }
    sigma.iter().map(|&s| tau * (s as f64 / max as f64)).collect()
}

pub fn total_loss(l_sup: f64, l_st: f64, l_mlm: f64, lambda1: f64, lambda2: f64) -> f64 {
    l_sup + lambda1 * l_st + lambda2 * l_mlm
}

/// Unlabeled sequences with independent random masking for the auxiliary
/// MLM objective. The template mask is never a target.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedBatch {
    pub items: Vec<MlmMasking>,
}

impl MaskedBatch {
    pub fn new<R: Rng>(seqs: &[&EncodedSequence], rate: f64, vocab_size: usize, rng: &mut R) -> Self {
        MaskedBatch {
            items: seqs
                .iter()
                .map(|s| mask_for_mlm(s, rate, false, vocab_size, rng))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// True when no auxiliary target sits on a template mask position.
    pub fn excludes_template(&self) -> bool {
        self.items.iter().all(|m| {
            m.targets
                .iter()
                .all(|&(pos, _)| Some(pos) != m.input.mask_pos && pos >= m.input.body_start)
        })
    }
}

/// Average over sequences of the mean negative log-probability of each
/// sequence's targets. Sequences with no targets add 0 but still count.
pub fn mlm_aux_value(target_probs: &[Vec<f64>]) -> f64 {
    if target_probs.is_empty() {
        return 0.0;
    }
    let sum: f64 = target_probs
        .iter()
        .filter(|p| !p.is_empty())
        .map(|p| p.iter().map(|&q| neg_log(q)).sum::<f64>() / p.len() as f64)
        .sum();
    sum / target_probs.len() as f64
}

/// Auxiliary MLM loss of `model` on a masked batch, evaluated without dropout.
pub fn mlm_aux_loss(batch: &MaskedBatch, model: &ModelParams) -> Result<f64> {
    let mut probs = Vec::with_capacity(batch.len());
    for chunk in batch.items.chunks(64) {
        let inputs: Vec<&EncodedSequence> = chunk.iter().map(|m| &m.input).collect();
        let input = BatchInput::new(&inputs, model.config.max_len)?;
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &model.store);
        let hidden = encode_batch(&mut tape, model, &bound, &input, None);
        let rows: Vec<usize> = chunk
            .iter()
            .enumerate()
            .flat_map(|(s, m)| m.targets.iter().map(move |&(pos, _)| (s, pos)))
            .map(|(s, pos)| input.row(s, pos))
            .collect();
        if rows.is_empty() {
            probs.extend(chunk.iter().map(|_| Vec::new()));
            continue;
        }
        let h = tape.rows(hidden, &rows);
        let logits = mlm_logits(&mut tape, model, &bound, h);
        let p = tape.softmax(logits);
        let p = tape.value(p);
        let mut r = 0;
        for m in chunk {
            probs.push(
                m.targets
                    .iter()
                    .map(|&(_, t)| {
                        r += 1;
                        p[[r - 1, t]]
                    })
                    .collect(),
            );
        }
    }
    Ok(mlm_aux_value(&probs))
}

/// Per-step loss components.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_sup: f64,
    pub l_st: f64,
    pub l_mlm: f64,
    pub l_total: f64,
    pub passed_count: usize,
    /// Passes per pseudo-label class in this step.
    pub class_pass_counts: Vec<usize>,
}

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{encode_all, EncodedSequence, FewShotSplit, Vocabulary};
use crate::error::{Error, Result};
use crate::model::tape::{Tape, Var};
use crate::model::{
    bind, compute_gradients, encode_batch, mlm_logits, set_freeze, Adam, AdamConfig, AdamState,
    BatchInput, Bound, DropoutCtx, FreezePolicy, ModelParams,
};
use crate::selftrain::augment::{strong_augment, weak_augment, StrongAug};
use crate::selftrain::loss::{
    flexmatch_thresholds, pseudo_labels, LossBreakdown, MaskedBatch, PseudoLabel, PROB_FLOOR,
};
use crate::verbalizers::{argmax, predict_probs, HeadVariant};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Labeled batch size `B`.
    pub batch_size: usize,
    /// Unlabeled samples per labeled sample.
    pub mu: usize,
    pub tau: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lr: f64,
    /// Learning rate for head parameters; `None` uses `lr`.
    pub head_lr: Option<f64>,
    pub epochs: usize,
    pub eval_every: usize,
    pub freeze: FreezePolicy,
    pub strong_aug: StrongAug,
    pub flexmatch: bool,
    /// Masking rate of the auxiliary MLM branch.
    pub aux_mask_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            mu: 4,
            tau: 0.95,
            lambda1: 1.0,
            lambda2: 0.1,
            lr: 1e-4,
            head_lr: None,
            epochs: 200,
            eval_every: 20,
            freeze: FreezePolicy::MlmHead,
            strong_aug: StrongAug::default(),
            flexmatch: false,
            aux_mask_rate: 0.15,
            seed: 0,
        }
    }
}

impl TrainConfig {
    // Negated comparisons also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.mu == 0 {
            return Err(Error::Config("batch_size and mu must be at least 1".into()));
        }
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(Error::Config("lambda1 and lambda2 must be non-negative".into()));
        }
        if !(self.tau >= 0.0) {
            return Err(Error::Config(format!("bad tau {}", self.tau)));
        }
        if !(self.lr > 0.0) || self.head_lr.is_some_and(|l| !(l > 0.0)) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.strong_aug.p) || !(0.0..1.0).contains(&self.aux_mask_rate) {
            return Err(Error::Config("augmentation rates must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Labeled data only.
    Small,
    /// Labeled plus unlabeled with all three losses.
    Semi,
    /// Labeled plus the unlabeled pool with its true labels restored.
    Full,
}

impl TrainMode {
    pub const ALL: [TrainMode; 3] = [TrainMode::Small, TrainMode::Semi, TrainMode::Full];

    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Small => "small",
            TrainMode::Semi => "semi",
            TrainMode::Full => "full",
        }
    }
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small" | "small_supervised" => Ok(TrainMode::Small),
            "semi" | "semi_supervised" => Ok(TrainMode::Semi),
            "full" | "full_supervised" => Ok(TrainMode::Full),
            _ => Err(Error::Config(format!(
                "unknown mode {s:?} (expected small, semi or full)"
            ))),
        }
    }
}

/// Everything random about one step, fixed up front so the loss is a
/// deterministic function of the parameters.
#[derive(Clone, Debug)]
pub struct StepInputs {
    pub labeled: Vec<EncodedSequence>,
    pub labels: Vec<usize>,
    /// Strongly augmented unlabeled views, aligned with `pseudo`.
    pub strong: Vec<EncodedSequence>,
    pub pseudo: Vec<PseudoLabel>,
    pub masked: MaskedBatch,
    /// Dropout seeds for the labeled, strong and MLM forwards.
    pub dropout_seeds: [u64; 3],
}

/// Loss nodes of one step on a tape.
pub struct StepGraph {
    pub l_sup: Var,
    pub l_st: Var,
    pub l_mlm: Var,
    pub total: Var,
}

fn branch_hidden(
    tape: &mut Tape,
    model: &ModelParams,
    bound: &Bound,
    seqs: &[&EncodedSequence],
    seed: u64,
) -> Result<(Var, BatchInput)> {
    let batch = BatchInput::new(seqs, model.config.max_len)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ctx = DropoutCtx {
        p: model.config.dropout_p,
        rng: &mut rng,
    };
    let h = encode_batch(tape, model, bound, &batch, Some(&mut ctx));
    Ok((h, batch))
}

fn cross_entropy(tape: &mut Tape, logits: Var, picks: Vec<(usize, usize, f64)>) -> Var {
    let p = tape.softmax(logits);
    let lp = tape.log_clamp(p, PROB_FLOOR);
    tape.pick(lp, picks)
}

/// Builds `L_sup + λ1·L_st + λ2·L_mlm` on `tape`. The unlabeled terms are
/// zero when `inputs` carries no unlabeled samples.
pub fn step_loss(
    tape: &mut Tape,
    model: &ModelParams,
    model_bound: &Bound,
    head: &HeadVariant,
    head_bound: Option<&Bound>,
    inputs: &StepInputs,
    config: &TrainConfig,
) -> Result<StepGraph> {
    let b = inputs.labeled.len();
    if b == 0 || b != inputs.labels.len() {
        return Err(Error::Empty("labeled batch"));
    }
    let seqs: Vec<&EncodedSequence> = inputs.labeled.iter().collect();
    let (h, batch) = branch_hidden(tape, model, model_bound, &seqs, inputs.dropout_seeds[0])?;
    let logits = head.logits(tape, head_bound, model, model_bound, h, &batch, &seqs)?;
    let picks = inputs
        .labels
        .iter()
        .enumerate()
        .map(|(i, &y)| (i, y, -1.0 / b as f64))
        .collect();
    let l_sup = cross_entropy(tape, logits, picks);

    let mu_b = inputs.strong.len();
    let l_st = if mu_b == 0 {
        tape.constant(ndarray::Array2::zeros((1, 1)))
    } else {
        if inputs.pseudo.len() != mu_b {
            return Err(Error::shape("pseudo-labels", mu_b, inputs.pseudo.len()));
        }
        let seqs: Vec<&EncodedSequence> = inputs.strong.iter().collect();
        let (h, batch) = branch_hidden(tape, model, model_bound, &seqs, inputs.dropout_seeds[1])?;
        let logits = head.logits(tape, head_bound, model, model_bound, h, &batch, &seqs)?;
        let picks = inputs
            .pseudo
            .iter()
            .enumerate()
            .filter(|(_, p)| p.passed)
            .map(|(i, p)| (i, p.label, -1.0 / mu_b as f64))
            .collect();
        cross_entropy(tape, logits, picks)
    };

    let n_mlm = inputs.masked.len();
    let l_mlm = if n_mlm == 0 || inputs.masked.items.iter().all(|m| m.targets.is_empty()) {
        tape.constant(ndarray::Array2::zeros((1, 1)))
    } else {
        let seqs: Vec<&EncodedSequence> = inputs.masked.items.iter().map(|m| &m.input).collect();
        let (h, batch) = branch_hidden(tape, model, model_bound, &seqs, inputs.dropout_seeds[2])?;
        let mut rows = Vec::new();
        let mut picks = Vec::new();
        for (s, m) in inputs.masked.items.iter().enumerate() {
            let w = -1.0 / (m.targets.len() as f64 * n_mlm as f64);
            for &(pos, t) in &m.targets {
                picks.push((rows.len(), t, w));
                rows.push(batch.row(s, pos));
            }
        }
        let hr = tape.rows(h, &rows);
        let logits = mlm_logits(tape, model, model_bound, hr);
        let lp = tape.log_softmax(logits);
        tape.pick(lp, picks)
    };

    let st = tape.scale(l_st, config.lambda1);
    let total = tape.add(l_sup, st);
    let mlm = tape.scale(l_mlm, config.lambda2);
    let total = tape.add(total, mlm);
    Ok(StepGraph {
        l_sup,
        l_st,
        l_mlm,
        total,
    })
}

/// Class probabilities with dropout active and no gradient tracking.
fn weak_probs(
    model: &ModelParams,
    head: &HeadVariant,
    seqs: &[&EncodedSequence],
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let mut tape = Tape::new();
    let mut frozen = model.store.clone();
    frozen.iter_mut().for_each(|p| p.frozen = true);
    let bound = bind(&mut tape, &frozen);
    let head_bound = head.store().map(|s| {
        let mut s = s.clone();
        s.iter_mut().for_each(|p| p.frozen = true);
        bind(&mut tape, &s)
    });
    let (h, batch) = branch_hidden(&mut tape, model, &bound, seqs, seed)?;
    let logits = head.logits(&mut tape, head_bound.as_ref(), model, &bound, h, &batch, seqs)?;
    let p = tape.softmax(logits);
    Ok(tape.value(p).outer_iter().map(|r| r.to_vec()).collect())
}

/// Model, head and optimizer state of one training run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: ModelParams,
    pub head: HeadVariant,
    pub model_opt: Adam,
    pub head_opt: Option<Adam>,
    /// Cumulative passes per class, the FlexMatch learning-effect counts.
    pub sigma: Vec<usize>,
    pub rng: ChaCha8Rng,
    pub config: TrainConfig,
}

impl Trainer {
    pub fn new(mut model: ModelParams, head: HeadVariant, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        head.validate(&model)?;
        set_freeze(&mut model, config.freeze);
        let model_opt = Adam::new(AdamConfig::with_lr(config.lr), &model.store);
        let head_opt = head
            .store()
            .map(|s| Adam::new(AdamConfig::with_lr(config.head_lr.unwrap_or(config.lr)), s));
        Ok(Trainer {
            sigma: vec![0; head.num_classes()],
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            model,
            head,
            model_opt,
            head_opt,
            config,
        })
    }

    pub fn thresholds(&self) -> Vec<f64> {
        if self.config.flexmatch {
            flexmatch_thresholds(&self.sigma, self.config.tau)
        } else {
            vec![self.config.tau; self.head.num_classes()]
        }
    }

    /// Draws augmentations, pseudo-labels and dropout seeds for one step.
    pub fn prepare(
        &mut self,
        labeled: &[(&EncodedSequence, usize)],
        unlabeled: &[&EncodedSequence],
    ) -> Result<StepInputs> {
        let labeled_seed = self.rng.gen();
        let mut inputs = StepInputs {
            labeled: labeled.iter().map(|(s, _)| (*s).clone()).collect(),
            labels: labeled.iter().map(|&(_, y)| y).collect(),
            strong: Vec::new(),
            pseudo: Vec::new(),
            masked: MaskedBatch { items: Vec::new() },
            dropout_seeds: [labeled_seed, 0, 0],
        };
        if unlabeled.is_empty() {
            return Ok(inputs);
        }
        let weak: Vec<EncodedSequence> = unlabeled.iter().map(|u| weak_augment(u)).collect();
        let weak_refs: Vec<&EncodedSequence> = weak.iter().collect();
        let weak_seed = self.rng.gen();
        let q = weak_probs(&self.model, &self.head, &weak_refs, weak_seed)?;
        if q.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("weak branch".into()));
        }
        inputs.pseudo = pseudo_labels(&q, &self.thresholds());
        let aug = self.config.strong_aug;
        inputs.strong = unlabeled
            .iter()
            .map(|u| strong_augment(u, aug, &mut self.rng))
            .collect();
        inputs.masked = MaskedBatch::new(
            unlabeled,
            self.config.aux_mask_rate,
            self.model.config.vocab_size,
            &mut self.rng,
        );
        debug_assert!(inputs.masked.excludes_template());
        inputs.dropout_seeds[1] = self.rng.gen();
        inputs.dropout_seeds[2] = self.rng.gen();
        Ok(inputs)
    }

    /// One optimizer step on prepared inputs.
    pub fn apply(&mut self, inputs: &StepInputs) -> Result<LossBreakdown> {
        let mut tape = Tape::new();
        let model_bound = bind(&mut tape, &self.model.store);
        let head_bound = self.head.bind(&mut tape);
        let g = step_loss(
            &mut tape,
            &self.model,
            &model_bound,
            &self.head,
            head_bound.as_ref(),
            inputs,
            &self.config,
        )?;
        for (name, v) in [("supervised", g.l_sup), ("self-training", g.l_st), ("auxiliary MLM", g.l_mlm)] {
            if !tape.scalar(v).is_finite() {
                return Err(Error::NonFinite(format!("{name} branch loss")));
            }
        }
        let mut stores = vec![(&self.model.store, &model_bound)];
        if let (Some(s), Some(b)) = (self.head.store(), head_bound.as_ref()) {
            stores.push((s, b));
        }
        let grads = compute_gradients(&tape, g.total, &stores)?;
        self.model_opt.step(&mut self.model.store, &grads[0]);
        if let (Some(opt), Some(store)) = (self.head_opt.as_mut(), self.head.store_mut()) {
            opt.step(store, &grads[1]);
        }

        let mut class_pass_counts = vec![0; self.head.num_classes()];
        for p in inputs.pseudo.iter().filter(|p| p.passed) {
            class_pass_counts[p.label] += 1;
        }
        for (s, c) in self.sigma.iter_mut().zip(&class_pass_counts) {
            *s += c;
        }
        Ok(LossBreakdown {
            l_sup: tape.scalar(g.l_sup),
            l_st: tape.scalar(g.l_st),
            l_mlm: tape.scalar(g.l_mlm),
            l_total: tape.scalar(g.total),
            passed_count: class_pass_counts.iter().sum(),
            class_pass_counts,
        })
    }

    pub fn step(
        &mut self,
        labeled: &[(&EncodedSequence, usize)],
        unlabeled: &[&EncodedSequence],
    ) -> Result<LossBreakdown> {
        let inputs = self.prepare(labeled, unlabeled)?;
        self.apply(&inputs)
    }
}

/// One step of the combined objective. Pass an empty unlabeled batch for
/// supervised-only training.
pub fn train_step(
    trainer: &mut Trainer,
    labeled: &[(&EncodedSequence, usize)],
    unlabeled: &[&EncodedSequence],
) -> Result<LossBreakdown> {
    trainer.step(labeled, unlabeled)
}

/// Losses averaged over the steps since the previous evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub l_sup: f64,
    pub l_st: f64,
    pub l_mlm: f64,
    pub passed_count: usize,
    pub dev_acc: f64,
}

pub fn write_history_csv(path: &Path, rows: &[HistoryRow]) -> Result<()> {
    let mut out = String::from("epoch,l_sup,l_st,l_mlm,passed_count,dev_acc\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.epoch, r.l_sup, r.l_st, r.l_mlm, r.passed_count, r.dev_acc
        )
        .unwrap();
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters with the best dev accuracy (later evaluations win ties).
    pub model: ModelParams,
    pub head: HeadVariant,
    pub optimizer: AdamState,
    pub head_optimizer: Option<AdamState>,
    pub best_epoch: usize,
    pub best_dev_acc: f64,
    pub steps: u64,
    pub history: Vec<HistoryRow>,
}

pub fn dev_accuracy(model: &ModelParams, head: &HeadVariant, seqs: &[EncodedSequence], labels: &[usize]) -> Result<f64> {
    let refs: Vec<&EncodedSequence> = seqs.iter().collect();
    let probs = predict_probs(model, head, &refs)?;
    let preds: Vec<usize> = probs.outer_iter().map(|r| argmax(r.as_slice().unwrap())).collect();
    crate::eval::accuracy(&preds, labels)
}

/// Trains `head` on top of `model` in the given mode, evaluating on dev at
/// epoch 0 and every `eval_every` epochs (and after the last one).
pub fn train_loop(
    split: &FewShotSplit,
    vocab: &Vocabulary,
    model: ModelParams,
    head: HeadVariant,
    mode: TrainMode,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if split.labeled.is_empty() || split.dev.is_empty() {
        return Err(Error::Empty("few-shot split"));
    }
    if mode == TrainMode::Semi && split.unlabeled.is_empty() {
        return Err(Error::Empty("unlabeled split"));
    }
    let templated = head.kind().uses_template();
    let max_len = model.config.max_len;
    let labeled_examples = match mode {
        TrainMode::Full => {
            let mut all = split.labeled.clone();
            all.extend(split.unlabeled_with_truth());
            all
        }
        _ => split.labeled.clone(),
    };
    let labeled = encode_all(&labeled_examples, vocab, templated, max_len)?;
    let labels = labels_of(&labeled_examples)?;
    let unlabeled = if mode == TrainMode::Semi {
        encode_all(&split.unlabeled, vocab, templated, max_len)?
    } else {
        Vec::new()
    };
    let dev = encode_all(&split.dev, vocab, templated, max_len)?;
    let dev_labels = labels_of(&split.dev)?;

    let mut trainer = Trainer::new(model, head, config.clone())?;
    let initial = dev_accuracy(&trainer.model, &trainer.head, &dev, &dev_labels)?;
    let mut history = vec![HistoryRow {
        epoch: 0,
        l_sup: 0.0,
        l_st: 0.0,
        l_mlm: 0.0,
        passed_count: 0,
        dev_acc: initial,
    }];
    let mut best = (
        trainer.model.clone(),
        trainer.head.clone(),
        trainer.model_opt.state.clone(),
        trainer.head_opt.as_ref().map(|o| o.state.clone()),
        0usize,
        initial,
    );

    let mut order: Vec<usize> = (0..labeled.len()).collect();
    let (mut sums, mut passed, mut n_steps) = ([0.0; 3], 0usize, 0usize);
    let mut steps = 0u64;
    for epoch in 1..=config.epochs {
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut trainer.rng);
        for chunk in order.chunks(config.batch_size) {
            let lb: Vec<(&EncodedSequence, usize)> = chunk.iter().map(|&i| (&labeled[i], labels[i])).collect();
            let ub: Vec<&EncodedSequence> = if unlabeled.is_empty() {
                Vec::new()
            } else {
                (0..config.mu * chunk.len())
                    .map(|_| &unlabeled[trainer.rng.gen_range(0..unlabeled.len())])
                    .collect()
            };
            let lossb = trainer.step(&lb, &ub).map_err(|e| match e {
                Error::NonFinite(what) => Error::NonFinite(format!("{what} at step {steps}")),
                other => other,
            })?;
            sums[0] += lossb.l_sup;
            sums[1] += lossb.l_st;
            sums[2] += lossb.l_mlm;
            passed += lossb.passed_count;
            n_steps += 1;
            steps += 1;
        }
        if epoch % config.eval_every == 0 || epoch == config.epochs {
            let acc = dev_accuracy(&trainer.model, &trainer.head, &dev, &dev_labels)?;
            let n = n_steps.max(1) as f64;
            history.push(HistoryRow {
                epoch,
                l_sup: sums[0] / n,
                l_st: sums[1] / n,
                l_mlm: sums[2] / n,
                passed_count: passed,
                dev_acc: acc,
            });
            log::debug!("{mode} epoch {epoch}: dev {acc:.4} l_sup {:.4}", sums[0] / n);
            if acc >= best.5 {
                best = (
                    trainer.model.clone(),
                    trainer.head.clone(),
                    trainer.model_opt.state.clone(),
                    trainer.head_opt.as_ref().map(|o| o.state.clone()),
                    epoch,
                    acc,
                );
            }
            (sums, passed, n_steps) = ([0.0; 3], 0, 0);
        }
    }
    let (model, head, optimizer, head_optimizer, best_epoch, best_dev_acc) = best;
    Ok(TrainOutcome {
        model,
        head,
        optimizer,
        head_optimizer,
        best_epoch,
        best_dev_acc,
        steps,
        history,
    })
}

pub fn labels_of(examples: &[crate::corpus::Example]) -> Result<Vec<usize>> {
    examples
        .iter()
        .map(|e| e.label.ok_or_else(|| Error::Config(format!("example {:?} has no label", e.text))))
        .collect()
}

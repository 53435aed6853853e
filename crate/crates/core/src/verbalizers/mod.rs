//! Classification heads over the encoder: MAV, single and multi label words,
//! a `[CLS]` head and a verbalizer-free `[MASK]`-representation head.

mod amulap;
mod label_words;
mod mav;

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use amulap::{amulap_assign, amulap_build, AMULAP_TOP_K};
pub use label_words::{multi_label_forward, single_label_forward, LabelWordMap, MultiLabelMap};
pub use mav::{default_d_ve, mav_forward, softmax, MavParams, MAV_C, MAV_VE};

use crate::corpus::EncodedSequence;
use crate::error::{Error, Result};
use crate::model::tape::{Tape, Var};
use crate::model::{bind, encode_batch, glorot, mlm_logits, BatchInput, Bound, ModelParams, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Cls,
    Single,
    Multi,
    Mav,
    #[serde(rename = "maskrep")]
    MaskRep,
}

impl HeadKind {
    pub const ALL: [HeadKind; 5] = [
        HeadKind::Cls,
        HeadKind::Single,
        HeadKind::Multi,
        HeadKind::Mav,
        HeadKind::MaskRep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Cls => "cls",
            HeadKind::Single => "single",
            HeadKind::Multi => "multi",
            HeadKind::Mav => "mav",
            HeadKind::MaskRep => "maskrep",
        }
    }

    /// Only the standard `[CLS]` head reads untemplated input.
    pub fn uses_template(self) -> bool {
        self != HeadKind::Cls
    }
}

impl std::fmt::Display for HeadKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        HeadKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown head {s:?} (expected one of mav, single, multi, cls, maskrep)"
                ))
            })
    }
}

/// `d_model × c` weight and `1 × c` bias over one hidden row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    pub store: ParamStore,
}

impl LinearHead {
    pub fn init<R: Rng>(d_model: usize, classes: usize, rng: &mut R) -> Self {
        Self::from_parts(glorot(d_model, classes, rng), Array2::zeros((1, classes)))
    }

    pub fn from_parts(weight: Array2<f64>, bias: Array2<f64>) -> Self {
        let mut store = ParamStore::new();
        store.push("linear.weight", weight);
        store.push("linear.bias", bias);
        LinearHead { store }
    }

    pub fn weight(&self) -> &Array2<f64> {
        self.store.value(0)
    }

    pub fn bias(&self) -> &Array2<f64> {
        self.store.value(1)
    }

    fn logits(&self, h: ArrayView1<'_, f64>) -> Result<Vec<f64>> {
        if h.len() != self.weight().nrows() {
            return Err(Error::shape("linear head", self.weight().nrows(), h.len()));
        }
        Ok((self.weight().t().dot(&h) + self.bias().row(0)).to_vec())
    }
}

/// `headᵀ · hidden[0] + bias`.
pub fn cls_head_forward(hidden: &Array2<f64>, head: &LinearHead) -> Result<Vec<f64>> {
    if hidden.nrows() == 0 {
        return Err(Error::Empty("hidden states"));
    }
    head.logits(hidden.row(0))
}

/// `headᵀ · hidden[pos] + bias`, never touching the MLM head.
pub fn maskrep_forward(hidden: &Array2<f64>, pos: usize, head: &LinearHead) -> Result<Vec<f64>> {
    if pos >= hidden.nrows() {
        return Err(Error::OutOfRange {
            what: "hidden states",
            index: pos,
            len: hidden.nrows(),
        });
    }
    head.logits(hidden.row(pos))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeadVariant {
    Mav(MavParams),
    Single(LabelWordMap),
    Multi(MultiLabelMap),
    Cls(LinearHead),
    #[serde(rename = "maskrep")]
    MaskRep(LinearHead),
}

impl HeadVariant {
    pub fn kind(&self) -> HeadKind {
        match self {
            HeadVariant::Mav(_) => HeadKind::Mav,
            HeadVariant::Single(_) => HeadKind::Single,
            HeadVariant::Multi(_) => HeadKind::Multi,
            HeadVariant::Cls(_) => HeadKind::Cls,
            HeadVariant::MaskRep(_) => HeadKind::MaskRep,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            HeadVariant::Mav(p) => p.num_classes(),
            HeadVariant::Single(m) => m.ids.len(),
            HeadVariant::Multi(m) => m.ids.len(),
            HeadVariant::Cls(h) | HeadVariant::MaskRep(h) => h.weight().ncols(),
        }
    }

    /// Trainable head parameters; label-word heads have none.
    pub fn store(&self) -> Option<&ParamStore> {
        match self {
            HeadVariant::Mav(p) => Some(&p.store),
            HeadVariant::Cls(h) | HeadVariant::MaskRep(h) => Some(&h.store),
            HeadVariant::Single(_) | HeadVariant::Multi(_) => None,
        }
    }

    pub fn store_mut(&mut self) -> Option<&mut ParamStore> {
        match self {
            HeadVariant::Mav(p) => Some(&mut p.store),
            HeadVariant::Cls(h) | HeadVariant::MaskRep(h) => Some(&mut h.store),
            HeadVariant::Single(_) | HeadVariant::Multi(_) => None,
        }
    }

    pub fn validate(&self, model: &ModelParams) -> Result<()> {
        let v = model.config.vocab_size;
        match self {
            HeadVariant::Mav(p) if p.vocab_size() != v => {
                Err(Error::shape("MAV vocab extractor rows", v, p.vocab_size()))
            }
            HeadVariant::Single(m) => m.validate(v),
            HeadVariant::Multi(m) => m.validate(v),
            HeadVariant::Cls(h) | HeadVariant::MaskRep(h)
                if h.weight().nrows() != model.config.d_model =>
            {
                Err(Error::shape("linear head rows", model.config.d_model, h.weight().nrows()))
            }
            _ => Ok(()),
        }
    }

    /// Binds trainable head parameters on the tape (always unfrozen).
    pub fn bind(&self, tape: &mut Tape) -> Option<Bound> {
        self.store().map(|s| bind(tape, s))
    }

    /// Pre-softmax class scores `[n_seq, c]` for an encoded batch.
    #[allow(clippy::too_many_arguments)]
    pub fn logits(
        &self,
        tape: &mut Tape,
        head_bound: Option<&Bound>,
        model: &ModelParams,
        model_bound: &Bound,
        hidden: Var,
        batch: &BatchInput,
        seqs: &[&EncodedSequence],
    ) -> Result<Var> {
        let mask_rows = || -> Result<Vec<usize>> {
            seqs.iter()
                .enumerate()
                .map(|(s, seq)| {
                    seq.mask_pos
                        .map(|p| batch.row(s, p))
                        .ok_or_else(|| Error::Config(format!("{} head needs templated input", self.kind())))
                })
                .collect()
        };
        let hb = |i: usize| head_bound.expect("trainable head must be bound").var(i);
        Ok(match self {
            HeadVariant::Mav(_) => {
                let h = tape.rows(hidden, &mask_rows()?);
                let v = mlm_logits(tape, model, model_bound, h);
                let t = tape.tanh(v);
                let z = tape.matmul(t, hb(MAV_VE));
                let z = tape.tanh(z);
                tape.matmul(z, hb(MAV_C))
            }
            HeadVariant::Single(m) => {
                let h = tape.rows(hidden, &mask_rows()?);
                let v = mlm_logits(tape, model, model_bound, h);
                let sel = tape.constant(m.as_multi().selection_matrix(model.config.vocab_size));
                tape.matmul(v, sel)
            }
            HeadVariant::Multi(m) => {
                let h = tape.rows(hidden, &mask_rows()?);
                let v = mlm_logits(tape, model, model_bound, h);
                let sel = tape.constant(m.selection_matrix(model.config.vocab_size));
                tape.matmul(v, sel)
            }
            HeadVariant::Cls(_) => {
                let rows: Vec<usize> = (0..seqs.len()).map(|s| batch.row(s, 0)).collect();
                let h = tape.rows(hidden, &rows);
                tape.linear(h, hb(0), hb(1))
            }
            HeadVariant::MaskRep(_) => {
                let h = tape.rows(hidden, &mask_rows()?);
                tape.linear(h, hb(0), hb(1))
            }
        })
    }
}

const EVAL_CHUNK: usize = 64;

fn eval_chunks<F>(model: &ModelParams, seqs: &[&EncodedSequence], mut f: F) -> Result<Array2<f64>>
where
    F: FnMut(&mut Tape, &Bound, Var, &BatchInput, &[&EncodedSequence]) -> Result<Var>,
{
    let mut out: Option<Array2<f64>> = None;
    for chunk in seqs.chunks(EVAL_CHUNK) {
        let batch = BatchInput::new(chunk, model.config.max_len)?;
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &model.store);
        let hidden = encode_batch(&mut tape, model, &bound, &batch, None);
        let res = f(&mut tape, &bound, hidden, &batch, chunk)?;
        let value = tape.value(res);
        out = Some(match out {
            None => value.clone(),
            Some(acc) => ndarray::concatenate![ndarray::Axis(0), acc, *value],
        });
    }
    out.ok_or(Error::Empty("sequences"))
}

fn mask_row_indices(batch: &BatchInput, seqs: &[&EncodedSequence]) -> Result<Vec<usize>> {
    seqs.iter()
        .enumerate()
        .map(|(s, seq)| {
            seq.mask_pos
                .map(|p| batch.row(s, p))
                .ok_or_else(|| Error::Config("sequence has no template mask".into()))
        })
        .collect()
}

/// Vocabulary logits at the template mask, evaluation mode. `[n, |V|]`.
pub fn mask_predictions(model: &ModelParams, seqs: &[&EncodedSequence]) -> Result<Array2<f64>> {
    eval_chunks(model, seqs, |tape, bound, hidden, batch, chunk| {
        let h = tape.rows(hidden, &mask_row_indices(batch, chunk)?);
        Ok(mlm_logits(tape, model, bound, h))
    })
}

/// Final-layer hidden state at the template mask, evaluation mode. `[n, d_model]`.
pub fn mask_representations(model: &ModelParams, seqs: &[&EncodedSequence]) -> Result<Array2<f64>> {
    eval_chunks(model, seqs, |tape, _, hidden, batch, chunk| {
        Ok(tape.rows(hidden, &mask_row_indices(batch, chunk)?))
    })
}

/// Class probabilities in evaluation mode. `[n, c]`.
pub fn predict_probs(model: &ModelParams, head: &HeadVariant, seqs: &[&EncodedSequence]) -> Result<Array2<f64>> {
    eval_chunks(model, seqs, |tape, bound, hidden, batch, chunk| {
        let hb = head.bind(tape);
        let logits = head.logits(tape, hb.as_ref(), model, bound, hidden, batch, chunk)?;
        Ok(tape.softmax(logits))
    })
}

pub fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// Builds a freshly initialized head. Label-word heads need their map.
pub fn init_head<R: Rng>(
    kind: HeadKind,
    model: &ModelParams,
    classes: usize,
    d_ve: Option<usize>,
    label_words: Option<LabelWordMap>,
    multi: Option<MultiLabelMap>,
    rng: &mut R,
) -> Result<HeadVariant> {
    let v = model.config.vocab_size;
    let d = model.config.d_model;
    let head = match kind {
        HeadKind::Mav => HeadVariant::Mav(MavParams::init(
            v,
            d_ve.unwrap_or_else(|| default_d_ve(v)),
            classes,
            rng,
        )?),
        HeadKind::Single => HeadVariant::Single(label_words.ok_or_else(|| {
            Error::Config("single label word head requires a label-word map".into())
        })?),
        HeadKind::Multi => HeadVariant::Multi(
            multi.ok_or_else(|| Error::Config("multi label word head requires a label map".into()))?,
        ),
        HeadKind::Cls => HeadVariant::Cls(LinearHead::init(d, classes, rng)),
        HeadKind::MaskRep => HeadVariant::MaskRep(LinearHead::init(d, classes, rng)),
    };
    if head.num_classes() != classes {
        return Err(Error::Config(format!(
            "head has {} classes, data has {classes}",
            head.num_classes()
        )));
    }
    head.validate(model)?;
    Ok(head)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn bias_only_head() {
        let head = LinearHead::from_parts(Array2::zeros((3, 2)), array![[1.0, 0.0]]);
        let hidden = array![[0.4, -2.0, 1.0], [9.0, 9.0, 9.0]];
        let p = softmax(&cls_head_forward(&hidden, &head).unwrap());
        assert!((p[0] - 0.7311).abs() < 1e-4);
        assert!((p[1] - 0.2689).abs() < 1e-4);
        assert!((p[0] - 1.0 / (1.0 + (-1f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn cls_head_is_linear() {
        let head = LinearHead::from_parts(array![[1.0, -2.0], [0.5, 3.0]], Array2::zeros((1, 2)));
        let h = array![[0.3, -0.7]];
        let a = cls_head_forward(&h, &head).unwrap();
        let b = cls_head_forward(&(&h * 2.0), &head).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((2.0 * x - y).abs() < 1e-15);
        }
        let zero = LinearHead::from_parts(Array2::zeros((2, 3)), Array2::zeros((1, 3)));
        assert_eq!(softmax(&cls_head_forward(&h, &zero).unwrap()), vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn maskrep_matches_matmul() {
        let w = array![[0.1, -0.3], [0.2, 0.4], [-0.5, 0.6], [0.7, 0.8]];
        let b = array![[0.05, -0.05]];
        let head = LinearHead::from_parts(w.clone(), b);
        let hidden = array![[9.0, 9.0, 9.0, 9.0], [1.0, -2.0, 0.5, 3.0]];
        let got = maskrep_forward(&hidden, 1, &head).unwrap();
        let expect = [
            1.0 * 0.1 + -2.0 * 0.2 + 0.5 * -0.5 + 3.0 * 0.7 + 0.05,
            1.0 * -0.3 + -2.0 * 0.4 + 0.5 * 0.6 + 3.0 * 0.8 - 0.05,
        ];
        for (g, e) in got.iter().zip(expect) {
            assert!((g - e).abs() < 1e-14);
        }
        assert!(maskrep_forward(&hidden, 2, &head).is_err());
    }

    #[test]
    fn head_names_parse() {
        for k in HeadKind::ALL {
            assert_eq!(k.name().parse::<HeadKind>().unwrap(), k);
        }
        let err = "prototype".parse::<HeadKind>().unwrap_err().to_string();
        assert!(err.contains("mav, single, multi, cls, maskrep"));
    }
}

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{glorot, ParamStore};

/// Vocab Extractor `W_ve` (|V| × d_ve) followed by the class layer `W_c` (d_ve × c).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MavParams {
    pub store: ParamStore,
}

pub const MAV_VE: usize = 0;
pub const MAV_C: usize = 1;

/// `min(256, |V| / 2)`, at least 1.
pub fn default_d_ve(vocab_size: usize) -> usize {
    (vocab_size / 2).clamp(1, 256)
}

impl MavParams {
    pub fn init<R: Rng>(vocab_size: usize, d_ve: usize, classes: usize, rng: &mut R) -> Result<Self> {
        Self::from_matrices(glorot(vocab_size, d_ve, rng), glorot(d_ve, classes, rng))
    }

    pub fn from_matrices(w_ve: Array2<f64>, w_c: Array2<f64>) -> Result<Self> {
        if w_ve.ncols() == 0 || w_ve.ncols() != w_c.nrows() {
            return Err(Error::shape(
                "MAV",
                format!("W_ve cols = W_c rows >= 1 ({})", w_ve.ncols()),
                w_c.nrows(),
            ));
        }
        let mut store = ParamStore::new();
        store.push("mav.ve", w_ve);
        store.push("mav.c", w_c);
        Ok(MavParams { store })
    }

    pub fn w_ve(&self) -> &Array2<f64> {
        self.store.value(MAV_VE)
    }

    pub fn w_c(&self) -> &Array2<f64> {
        self.store.value(MAV_C)
    }

    pub fn w_c_mut(&mut self) -> &mut Array2<f64> {
        &mut self.store.get_mut(MAV_C).value
    }

    pub fn w_ve_mut(&mut self) -> &mut Array2<f64> {
        &mut self.store.get_mut(MAV_VE).value
    }

    pub fn vocab_size(&self) -> usize {
        self.w_ve().nrows()
    }

    pub fn d_ve(&self) -> usize {
        self.w_ve().ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.w_c().ncols()
    }

    fn check(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.vocab_size() {
            return Err(Error::shape("mav_forward", self.vocab_size(), v.len()));
        }
        Ok(())
    }

    /// Pre-softmax class scores `W_cᵀ · tanh(W_veᵀ · tanh(v))`.
    pub fn class_scores(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check(v)?;
        let tv = ArrayView1::from(v).mapv(f64::tanh);
        let hidden: Array1<f64> = self.w_ve().t().dot(&tv).mapv(f64::tanh);
        Ok(self.w_c().t().dot(&hidden).to_vec())
    }

    /// `∂ score_class / ∂ v`, in closed form.
    pub fn score_gradient(&self, v: &[f64], class: usize) -> Result<Vec<f64>> {
        self.check(v)?;
        if class >= self.num_classes() {
            return Err(Error::OutOfRange {
                what: "classes",
                index: class,
                len: self.num_classes(),
            });
        }
        let tv = ArrayView1::from(v).mapv(f64::tanh);
        let hidden: Array1<f64> = self.w_ve().t().dot(&tv).mapv(f64::tanh);
        let dh = (1.0 - &hidden * &hidden) * self.w_c().column(class);
        let dtv = self.w_ve().dot(&dh);
        Ok(dtv
            .iter()
            .zip(tv.iter())
            .map(|(g, t)| g * (1.0 - t * t))
            .collect())
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Class distribution `softmax(W_cᵀ · tanh(W_veᵀ · tanh(v)))`.
pub fn mav_forward(v: &[f64], p: &MavParams) -> Result<Vec<f64>> {
    Ok(softmax(&p.class_scores(v)?))
}

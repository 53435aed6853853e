use serde::{Deserialize, Serialize};

use crate::corpus::{EncodedSequence, Vocabulary};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::verbalizers::{argmax, mask_predictions, MavParams};

/// How a vocabulary coordinate's contribution to a class score is measured.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttributionMethod {
    /// `v[t] · ∂z/∂v[t]` at the observed `v`.
    GradientInput,
    /// `v[t]` times the gradient averaged along the straight path from
    /// `v = 0`, midpoint rule with `steps` points. Unlike the plain product
    /// it still credits logits that saturate the input `tanh`.
    IntegratedGradients { steps: usize },
}

impl Default for AttributionMethod {
    fn default() -> Self {
        AttributionMethod::IntegratedGradients { steps: 32 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAttribution {
    pub class: usize,
    /// Correctly predicted samples averaged over.
    pub samples: usize,
    /// Highest-scoring tokens, descending.
    pub tokens: Vec<(String, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub method: AttributionMethod,
    pub classes: Vec<ClassAttribution>,
    /// Classes without a single correct prediction.
    pub omitted: Vec<usize>,
}

/// Gradient times input of the pre-softmax score of `class` with respect to
/// each vocabulary coordinate of `v`.
pub fn attribution_scores(v: &[f64], head: &MavParams, class: usize) -> Result<Vec<f64>> {
    let g = head.score_gradient(v, class)?;
    Ok(v.iter().zip(&g).map(|(x, d)| x * d).collect())
}

/// Path-integrated gradient times input from the zero baseline.
pub fn integrated_scores(v: &[f64], head: &MavParams, class: usize, steps: usize) -> Result<Vec<f64>> {
    let steps = steps.max(1);
    let mut avg = vec![0.0; v.len()];
    for k in 0..steps {
        let a = (k as f64 + 0.5) / steps as f64;
        let scaled: Vec<f64> = v.iter().map(|x| a * x).collect();
        for (s, g) in avg.iter_mut().zip(head.score_gradient(&scaled, class)?) {
            *s += g / steps as f64;
        }
    }
    Ok(v.iter().zip(&avg).map(|(x, g)| x * g).collect())
}

pub fn method_scores(method: AttributionMethod, v: &[f64], head: &MavParams, class: usize) -> Result<Vec<f64>> {
    match method {
        AttributionMethod::GradientInput => attribution_scores(v, head, class),
        AttributionMethod::IntegratedGradients { steps } => integrated_scores(v, head, class, steps),
    }
}

/// Per-class mean attribution over correctly predicted samples, top `top_n`
/// non-special tokens each. Ties rank the lower token id first.
pub fn vocab_attribution(
    model: &ModelParams,
    head: &MavParams,
    seqs: &[EncodedSequence],
    labels: &[usize],
    vocab: &Vocabulary,
    top_n: usize,
    method: AttributionMethod,
) -> Result<AttributionReport> {
    if seqs.len() != labels.len() {
        return Err(Error::shape("attribution labels", seqs.len(), labels.len()));
    }
    if seqs.is_empty() {
        return Err(Error::Empty("attribution samples"));
    }
    let refs: Vec<&EncodedSequence> = seqs.iter().collect();
    let v = mask_predictions(model, &refs)?;
    let c = head.num_classes();
    let vs = v.ncols();
    let mut sums = vec![vec![0.0; vs]; c];
    let mut counts = vec![0usize; c];
    for (row, &y) in v.outer_iter().zip(labels) {
        let row = row.to_vec();
        let pred = argmax(&head.class_scores(&row)?);
        if pred != y {
            continue;
        }
        for (s, a) in sums[y].iter_mut().zip(method_scores(method, &row, head, y)?) {
            *s += a;
        }
        counts[y] += 1;
    }
    let mut report = AttributionReport {
        method,
        classes: Vec::new(),
        omitted: Vec::new(),
    };
    for y in 0..c {
        if counts[y] == 0 {
            log::warn!("class {y} has no correctly predicted samples; omitted from attribution");
            report.omitted.push(y);
            continue;
        }
        let mut ranked: Vec<(usize, f64)> = (0..vs)
            .filter(|&t| !vocab.is_special(t))
            .map(|t| (t, sums[y][t] / counts[y] as f64))
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        report.classes.push(ClassAttribution {
            class: y,
            samples: counts[y],
            tokens: ranked
                .into_iter()
                .take(top_n)
                .map(|(t, s)| (vocab.token(t).unwrap_or("?").to_string(), s))
                .collect(),
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn head() -> MavParams {
        MavParams::from_matrices(
            array![[0.5, -0.2], [0.0, 0.0], [-0.4, 0.9], [0.3, 0.3]],
            array![[1.2, -0.7], [-0.3, 0.8]],
        )
        .unwrap()
    }

    #[test]
    fn dead_row_scores_zero() {
        let v = [0.7, 2.0, -1.1, 0.4];
        for class in 0..2 {
            assert_eq!(attribution_scores(&v, &head(), class).unwrap()[1], 0.0);
        }
    }

    #[test]
    fn scales_with_output_layer() {
        let v = [0.7, 2.0, -1.1, 0.4];
        let a = attribution_scores(&v, &head(), 0).unwrap();
        let mut h = head();
        h.w_c_mut().mapv_inplace(|x| 3.0 * x);
        let b = attribution_scores(&v, &h, 0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((3.0 * x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn integrated_scores_complete() {
        let v = [0.7, 2.0, -1.1, 4.0];
        let h = head();
        for class in 0..2 {
            let ig = integrated_scores(&v, &h, class, 2000).unwrap();
            let gap = h.class_scores(&v).unwrap()[class] - h.class_scores(&[0.0; 4]).unwrap()[class];
            assert!((ig.iter().sum::<f64>() - gap).abs() < 1e-6);
            assert_eq!(ig[1], 0.0);
        }
        let mut s = h.clone();
        s.w_c_mut().mapv_inplace(|x| 0.5 * x);
        let a = integrated_scores(&v, &h, 1, 16).unwrap();
        let b = integrated_scores(&v, &s, 1, 16).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((0.5 * x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_samples_identical_scores() {
        let v = [0.1, -0.5, 0.9, 1.3];
        assert_eq!(
            attribution_scores(&v, &head(), 1).unwrap(),
            attribution_scores(&v, &head(), 1).unwrap()
        );
    }
}

//! Multi-label-word construction from zero-shot MLM inference over the
//! labeled few-shot set.

use std::cmp::Ordering;

use crate::corpus::{EncodedSequence, Vocabulary};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::verbalizers::{mask_predictions, softmax, MultiLabelMap};

pub const AMULAP_TOP_K: usize = 16;

/// Greedy assignment over all `(class, token)` pairs in descending order of
/// the class-averaged probability. A token goes to the first class that
/// reaches it with room left; ties on probability go to the lower token id,
/// then the lower class index.
pub fn amulap_assign(avg_probs: &[Vec<f64>], top_k: usize) -> Result<MultiLabelMap> {
    let c = avg_probs.len();
    if c == 0 {
        return Err(Error::Empty("class probabilities"));
    }
    let vocab_size = avg_probs[0].len();
    let mut pairs: Vec<(usize, usize)> = (0..c)
        .flat_map(|y| (Vocabulary::NUM_SPECIAL..vocab_size).map(move |t| (y, t)))
        .collect();
    pairs.sort_by(|&(ya, ta), &(yb, tb)| {
        avg_probs[yb][tb]
            .partial_cmp(&avg_probs[ya][ta])
            .unwrap_or(Ordering::Equal)
            .then(ta.cmp(&tb))
            .then(ya.cmp(&yb))
    });
    let mut taken = vec![false; vocab_size];
    let mut ids: Vec<Vec<usize>> = vec![Vec::new(); c];
    let mut full = 0;
    for (y, t) in pairs {
        if full == c {
            break;
        }
        if taken[t] || ids[y].len() >= top_k {
            continue;
        }
        taken[t] = true;
        ids[y].push(t);
        if ids[y].len() == top_k {
            full += 1;
        }
    }
    if let Some(y) = ids.iter().position(Vec::is_empty) {
        return Err(Error::LabelMap(format!(
            "class {y} received no label words after deduplication"
        )));
    }
    Ok(MultiLabelMap { ids })
}

/// Class-averaged `[MASK]` probabilities, then [`amulap_assign`].
pub fn amulap_build(
    labeled: &[(EncodedSequence, usize)],
    model: &ModelParams,
    num_classes: usize,
    top_k: usize,
) -> Result<MultiLabelMap> {
    if top_k == 0 {
        return Err(Error::Config("top_k must be positive".into()));
    }
    let seqs: Vec<&EncodedSequence> = labeled.iter().map(|(s, _)| s).collect();
    let logits = mask_predictions(model, &seqs)?;
    let v = model.config.vocab_size;
    let mut sums = vec![vec![0.0; v]; num_classes];
    let mut counts = vec![0usize; num_classes];
    for (row, (_, y)) in logits.rows().into_iter().zip(labeled) {
        let p = softmax(row.as_slice().unwrap());
        for (acc, pi) in sums[*y].iter_mut().zip(p) {
            *acc += pi;
        }
        counts[*y] += 1;
    }
    if let Some(y) = counts.iter().position(|&n| n == 0) {
        return Err(Error::LabelMap(format!("class {y} has no labeled samples")));
    }
    for (s, n) in sums.iter_mut().zip(&counts) {
        for x in s.iter_mut() {
            *x /= *n as f64;
        }
    }
    amulap_assign(&sums, top_k)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(vals: &[&[f64]]) -> Vec<Vec<f64>> {
        vals.iter()
            .map(|r| {
                let mut v = vec![0.0; 5];
                v.extend_from_slice(r);
                v
            })
            .collect()
    }

    #[test]
    fn single_class_takes_global_top_k() {
        let p = toy(&[&[0.1, 0.4, 0.05, 0.3, 0.15]]);
        let m = amulap_assign(&p, 3).unwrap();
        assert_eq!(m.ids, vec![vec![6, 8, 9]]);
    }

    #[test]
    fn contested_token_goes_to_higher_average() {
        // token 5 is top for both; class 0 holds it more strongly
        let p = toy(&[&[0.5, 0.2, 0.1, 0.0], &[0.4, 0.0, 0.3, 0.2]]);
        let m = amulap_assign(&p, 2).unwrap();
        assert_eq!(m.ids[0], vec![5, 6]);
        assert_eq!(m.ids[1], vec![7, 8]);
    }

    #[test]
    fn ties_prefer_lower_token_id() {
        let p = toy(&[&[0.25, 0.25, 0.25, 0.25]]);
        assert_eq!(amulap_assign(&p, 2).unwrap().ids, vec![vec![5, 6]]);
    }

    #[test]
    fn lists_shrink_when_tokens_run_out() {
        let p = toy(&[&[0.5, 0.3, 0.0], &[0.1, 0.2, 0.4]]);
        let m = amulap_assign(&p, 16).unwrap();
        assert_eq!(m.ids, vec![vec![5, 6], vec![7]]);
        // class 0 wins both tokens, leaving class 1 empty
        let p = toy(&[&[0.5, 0.3], &[0.4, 0.1]]);
        assert!(amulap_assign(&p, 16).is_err());
    }
}

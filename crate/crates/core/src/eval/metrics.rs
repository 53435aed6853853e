use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fraction of positions where `preds` equals `labels`.
pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::shape("accuracy labels", preds.len(), labels.len()));
    }
    if preds.is_empty() {
        return Err(Error::Empty("predictions"));
    }
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Accuracies of the three training modes, all in the same unit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenefitInput {
    pub acc_small: f64,
    pub acc_semi: f64,
    pub acc_full: f64,
}

/// `(semi - small) / (full - small)`, or `None` when full equals small.
pub fn benefit_ratio(b: &BenefitInput) -> Option<f64> {
    let gap = b.acc_full - b.acc_small;
    if gap == 0.0 || !gap.is_finite() {
        return None;
    }
    Some((b.acc_semi - b.acc_small) / gap)
}

/// Seed-aggregated accuracies. `std` uses the sample (n - 1) convention.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub std_convention: String,
}

pub const STD_CONVENTION: &str = "sample";

impl SeedSummary {
    /// `"mean (std)"` with one decimal each.
    pub fn display(&self) -> String {
        format!("{:.1} ({:.1})", self.mean, self.std)
    }
}

/// Mean and sample standard deviation. A single value has std 0.
pub fn aggregate_seeds(values: &[f64]) -> Result<SeedSummary> {
    if values.is_empty() {
        return Err(Error::Empty("seed accuracies"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Ok(SeedSummary {
        values: values.to_vec(),
        mean,
        std,
        std_convention: STD_CONVENTION.into(),
    })
}

/// Middle element after sorting; the mean of the two middle ones for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn br(s: f64, m: f64, f: f64) -> Option<f64> {
        benefit_ratio(&BenefitInput {
            acc_small: s,
            acc_semi: m,
            acc_full: f,
        })
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[1, 2], &[1, 2]).unwrap(), 1.0);
        assert!((accuracy(&[0, 1, 0], &[0, 1, 2]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(accuracy(&[], &[]).is_err());
        assert!(accuracy(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn random_predictions_hit_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let labels: Vec<usize> = (0..10_000).map(|i| i % 6).collect();
        let preds: Vec<usize> = (0..10_000).map(|_| rng.gen_range(0..6)).collect();
        let acc = accuracy(&preds, &labels).unwrap();
        assert!((acc - 1.0 / 6.0).abs() < 0.02);
    }

    #[test]
    fn benefit_examples() {
        assert!((br(70.1, 80.2, 90.8).unwrap() - 0.49).abs() < 0.02);
        assert!((br(78.0, 87.9, 91.3).unwrap() - 0.74).abs() < 0.02);
        assert_eq!(br(60.0, 60.0, 80.0), Some(0.0));
        assert_eq!(br(60.0, 80.0, 80.0), Some(1.0));
        assert_eq!(br(70.0, 75.0, 70.0), None);
    }

    #[test]
    fn seed_examples() {
        let s = aggregate_seeds(&[80.0; 5]).unwrap();
        assert_eq!(s.display(), "80.0 (0.0)");
        let s = aggregate_seeds(&[89.3, 81.2, 86.8, 89.6, 60.7]).unwrap();
        assert_eq!(s.display(), "81.5 (12.1)");
        let s = aggregate_seeds(&[0.0, 100.0]).unwrap();
        assert_eq!(s.mean, 50.0);
        assert!((s.std - 50.0 * 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }
}

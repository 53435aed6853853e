use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{EncodedSequence, Vocabulary};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugMethod {
    RandomMask,
    WordDelete,
    WordSwap,
}

impl AugMethod {
    pub fn name(self) -> &'static str {
        match self {
            AugMethod::RandomMask => "random_mask",
            AugMethod::WordDelete => "word_delete",
            AugMethod::WordSwap => "word_swap",
        }
    }

    pub fn default_p(self) -> f64 {
        match self {
            AugMethod::RandomMask => 0.15,
            AugMethod::WordDelete | AugMethod::WordSwap => 0.20,
        }
    }
}

impl std::str::FromStr for AugMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random_mask" => Ok(AugMethod::RandomMask),
            "word_delete" => Ok(AugMethod::WordDelete),
            "word_swap" => Ok(AugMethod::WordSwap),
            _ => Err(Error::Config(format!(
                "unknown augmentation {s:?} (expected random_mask, word_delete or word_swap)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrongAug {
    pub method: AugMethod,
    pub p: f64,
}

impl Default for StrongAug {
    fn default() -> Self {
        StrongAug {
            method: AugMethod::RandomMask,
            p: 0.15,
        }
    }
}

/// Token-level identity. The weak view differs from the input only through
/// dropout during the forward pass.
pub fn weak_augment(u: &EncodedSequence) -> EncodedSequence {
    u.clone()
}

/// Perturbs body tokens only; `[CLS]`, the template prefix and `[SEP]` are
/// never touched, so `mask_pos` stays valid.
pub fn strong_augment<R: Rng>(u: &EncodedSequence, aug: StrongAug, rng: &mut R) -> EncodedSequence {
    let body = u.body();
    if body.is_empty() || aug.p <= 0.0 {
        return u.clone();
    }
    let p = aug.p.min(1.0);
    match aug.method {
        AugMethod::RandomMask => {
            let mut out = u.clone();
            for pos in u.body_range() {
                if rng.gen_bool(p) {
                    out.ids[pos] = Vocabulary::MASK_ID;
                }
            }
            out
        }
        AugMethod::WordDelete => {
            let kept: Vec<usize> = body.iter().copied().filter(|_| !rng.gen_bool(p)).collect();
            u.with_body(&kept)
        }
        AugMethod::WordSwap => {
            let mut b = body.to_vec();
            let n = b.len();
            if n < 2 {
                return u.clone();
            }
            for i in 0..n {
                if rng.gen_bool(p) {
                    let mut j = rng.gen_range(0..n - 1);
                    if j >= i {
                        j += 1;
                    }
                    b.swap(i, j);
                }
            }
            u.with_body(&b)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{apply_template, Example};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vocab() -> Vocabulary {
        let mut t: Vec<String> = crate::corpus::SPECIALS.iter().map(|s| s.to_string()).collect();
        t.push(":".into());
        t.extend((0..20).map(|i| format!("w{i}")));
        Vocabulary::from_tokens(t).unwrap()
    }

    fn seq(n: usize) -> EncodedSequence {
        let text: Vec<String> = (0..n).map(|i| format!("w{}", i % 20)).collect();
        apply_template(&Example::unlabeled(text.join(" ")), &vocab(), 64).unwrap()
    }

    fn aug(method: AugMethod, p: f64) -> StrongAug {
        StrongAug { method, p }
    }

    #[test]
    fn weak_is_identity() {
        let s = seq(7);
        assert_eq!(weak_augment(&s), s);
    }

    #[test]
    fn zero_probability_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = seq(9);
        for m in [AugMethod::RandomMask, AugMethod::WordDelete, AugMethod::WordSwap] {
            assert_eq!(strong_augment(&s, aug(m, 0.0), &mut rng), s);
        }
    }

    #[test]
    fn empty_body_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = seq(0);
        for m in [AugMethod::RandomMask, AugMethod::WordDelete, AugMethod::WordSwap] {
            assert_eq!(strong_augment(&s, aug(m, 1.0), &mut rng), s);
        }
    }

    #[test]
    fn random_mask_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = seq(50);
        let (mut masked, mut total) = (0usize, 0usize);
        for _ in 0..200 {
            let out = strong_augment(&s, aug(AugMethod::RandomMask, 0.15), &mut rng);
            assert_eq!(&out.ids[..3], &s.ids[..3]);
            assert_eq!(out.mask_pos, Some(1));
            masked += out.body().iter().filter(|&&t| t == Vocabulary::MASK_ID).count();
            total += out.body().len();
        }
        assert_eq!(total, 10_000);
        let frac = masked as f64 / total as f64;
        assert!((frac - 0.15).abs() < 0.01, "{frac}");
    }

    #[test]
    fn word_delete_keeps_four_fifths() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = seq(20);
        let mut kept = 0usize;
        for _ in 0..1000 {
            let out = strong_augment(&s, aug(AugMethod::WordDelete, 0.2), &mut rng);
            assert_eq!(&out.ids[..3], &s.ids[..3]);
            assert_eq!(out.ids[out.attention_len - 1], Vocabulary::SEP_ID);
            assert_eq!(out.ids.len(), s.ids.len());
            kept += out.body().len();
        }
        let mean = kept as f64 / 1000.0;
        assert!((mean - 16.0).abs() < 0.3, "{mean}");
    }

    #[test]
    fn word_swap_is_a_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = seq(12);
        let mut changed = 0;
        for _ in 0..100 {
            let out = strong_augment(&s, aug(AugMethod::WordSwap, 0.2), &mut rng);
            let mut a = out.body().to_vec();
            let mut b = s.body().to_vec();
            changed += usize::from(a != b);
            a.sort();
            b.sort();
            assert_eq!(a, b);
            assert_eq!(out.attention_len, s.attention_len);
            assert_eq!(&out.ids[..3], &s.ids[..3]);
        }
        assert!(changed > 80);
    }
}

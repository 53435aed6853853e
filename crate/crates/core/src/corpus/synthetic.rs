use std::collections::HashSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Example, LabeledPool, TEMPLATE_COLON};
use crate::error::{Error, Result};

/// Generative description of a keyword-mixture classification task.
///
/// Every position of a class-`y` sentence draws, with probability
/// `mix_rate`, a uniform token from `class_keyword_sets[y]`, otherwise a
/// uniform token from `background_pool`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub class_keyword_sets: Vec<Vec<String>>,
    pub background_pool: Vec<String>,
    pub mix_rate: f64,
    /// Inclusive sentence length bounds.
    pub length_range: (usize, usize),
    /// Pre-training sentences.
    pub corpus_size: usize,
    /// Fraction of pre-training sentences prefixed with `keyword :`, which
    /// teaches the encoder what follows the template colon.
    pub prompt_rate: f64,
    pub train_per_class: usize,
    pub test_per_class: usize,
}

impl SyntheticSpec {
    /// Keywords named `k{class}_{j}`, background tokens `w{j}`.
    pub fn with_sizes(num_classes: usize, keywords_per_class: usize, background: usize) -> Self {
        SyntheticSpec {
            class_keyword_sets: (0..num_classes)
                .map(|c| (0..keywords_per_class).map(|j| format!("k{c}_{j}")).collect())
                .collect(),
            background_pool: (0..background).map(|j| format!("w{j}")).collect(),
            mix_rate: 0.5,
            length_range: (4, 10),
            corpus_size: 4000,
            prompt_rate: 0.25,
            train_per_class: 200,
            test_per_class: 50,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.class_keyword_sets.len()
    }

    /// Each class's designated first keyword, used as its manual label word.
    pub fn manual_label_words(&self) -> Vec<String> {
        self.class_keyword_sets.iter().map(|s| s[0].clone()).collect()
    }

    /// Mix rates of exactly 0 and 1 are accepted as degenerate settings.
    pub fn validate(&self) -> Result<()> {
        if self.class_keyword_sets.is_empty() {
            return Err(Error::Config("synthetic spec needs at least one class".into()));
        }
        if self.class_keyword_sets.iter().any(Vec::is_empty) {
            return Err(Error::Config("every class needs at least one keyword".into()));
        }
        if self.background_pool.is_empty() && self.mix_rate < 1.0 {
            return Err(Error::Config("background pool is empty".into()));
        }
        let mut seen = HashSet::new();
        for t in self.class_keyword_sets.iter().flatten().chain(&self.background_pool) {
            if t.split_whitespace().count() != 1 || t == TEMPLATE_COLON || t.starts_with('[') {
                return Err(Error::Config(format!("bad synthetic token {t:?}")));
            }
            if !seen.insert(t) {
                return Err(Error::Config(format!(
                    "token {t:?} appears in more than one pool"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.mix_rate) || !(0.0..=1.0).contains(&self.prompt_rate) {
            return Err(Error::Config("mix_rate and prompt_rate must lie in [0, 1]".into()));
        }
        let (lo, hi) = self.length_range;
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!("bad length range ({lo}, {hi})")));
        }
        Ok(())
    }

    fn sentence<R: Rng>(&self, class: usize, rng: &mut R) -> Vec<&str> {
        let (lo, hi) = self.length_range;
        let len = rng.gen_range(lo..=hi);
        let kws = &self.class_keyword_sets[class];
        (0..len)
            .map(|_| {
                if rng.gen_bool(self.mix_rate) {
                    kws[rng.gen_range(0..kws.len())].as_str()
                } else {
                    self.background_pool[rng.gen_range(0..self.background_pool.len())].as_str()
                }
            })
            .collect()
    }
}

/// Pre-training corpus (unlabeled) and labeled pool from one generative process.
pub fn gen_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<(Vec<Example>, LabeledPool)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = spec.num_classes();

    let mut corpus = Vec::with_capacity(spec.corpus_size);
    for _ in 0..spec.corpus_size {
        let y = rng.gen_range(0..c);
        let mut words = spec.sentence(y, &mut rng);
        if rng.gen_bool(spec.prompt_rate) {
            let kws = &spec.class_keyword_sets[y];
            let head = kws[rng.gen_range(0..kws.len())].as_str();
            words.splice(0..0, [head, TEMPLATE_COLON]);
        }
        corpus.push(Example::unlabeled(words.join(" ")));
    }

    let mut pool = LabeledPool::default();
    for y in 0..c {
        for _ in 0..spec.train_per_class {
            pool.train.push(Example::labeled(spec.sentence(y, &mut rng).join(" "), y));
        }
    }
    for y in 0..c {
        for _ in 0..spec.test_per_class {
            pool.test.push(Example::labeled(spec.sentence(y, &mut rng).join(" "), y));
        }
    }
    Ok((corpus, pool))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_vocab;

    fn six_class(prompt_rate: f64) -> SyntheticSpec {
        let mut s = SyntheticSpec::with_sizes(6, 10, 40);
        s.prompt_rate = prompt_rate;
        s
    }

    // Independent tally: distinct whitespace tokens over all generated text.
    fn distinct(examples: &[Example]) -> HashSet<String> {
        examples
            .iter()
            .flat_map(|e| e.text.split(' ').map(str::to_string))
            .collect()
    }

    #[test]
    fn six_class_vocab_size() {
        let (corpus, pool) = gen_synthetic(&six_class(0.0), 7).unwrap();
        let mut all = corpus.clone();
        all.extend(pool.train.iter().cloned());
        assert_eq!(distinct(&all).len() + 5, 105);
        assert_eq!(build_vocab(&all).unwrap().len(), 105);

        // prompted pre-training adds the template colon
        let (corpus, _) = gen_synthetic(&six_class(0.25), 7).unwrap();
        assert_eq!(distinct(&corpus).len() + 5, 106);
        assert_eq!(build_vocab(&corpus).unwrap().len(), 106);
    }

    #[test]
    fn full_mix_rate_uses_only_keywords() {
        let mut s = six_class(0.0);
        s.mix_rate = 1.0;
        let (_, pool) = gen_synthetic(&s, 1).unwrap();
        for e in &pool.train {
            let kws = &s.class_keyword_sets[e.label.unwrap()];
            assert!(e.text.split(' ').all(|t| kws.iter().any(|k| k == t)));
        }
    }

    #[test]
    fn measured_keyword_fraction() {
        let mut s = six_class(0.0);
        s.train_per_class = 10_000 / 6 + 1;
        s.test_per_class = 0;
        s.corpus_size = 0;
        let (_, pool) = gen_synthetic(&s, 11).unwrap();
        let (mut kw, mut total) = (0usize, 0usize);
        for e in &pool.train {
            for t in e.text.split(' ') {
                total += 1;
                if t.starts_with('k') {
                    kw += 1;
                }
            }
        }
        let frac = kw as f64 / total as f64;
        assert!((frac - 0.5).abs() < 0.02, "keyword fraction {frac}");
    }

    #[test]
    fn rejects_overlapping_sets() {
        let mut s = six_class(0.0);
        s.class_keyword_sets[1][0] = s.class_keyword_sets[0][0].clone();
        assert!(gen_synthetic(&s, 0).is_err());
        let mut s = six_class(0.0);
        s.mix_rate = 1.5;
        assert!(s.validate().is_err());
    }

    #[test]
    fn deterministic() {
        let s = six_class(0.25);
        assert_eq!(gen_synthetic(&s, 5).unwrap(), gen_synthetic(&s, 5).unwrap());
    }
}

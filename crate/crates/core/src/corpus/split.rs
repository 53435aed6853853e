use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{read_jsonl, write_jsonl, Example};
use crate::error::{Error, Result};

/// Labeled data to sample from. `test` is held out and never sampled.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledPool {
    pub train: Vec<Example>,
    pub test: Vec<Example>,
}

impl LabeledPool {
    pub fn num_classes(&self) -> usize {
        self.train
            .iter()
            .chain(&self.test)
            .filter_map(|e| e.label)
            .max()
            .map_or(0, |m| m + 1)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_jsonl(&dir.join("pool_train.jsonl"), &self.train)?;
        write_jsonl(&dir.join("pool_test.jsonl"), &self.test)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(LabeledPool {
            train: read_jsonl(&dir.join("pool_train.jsonl"))?,
            test: read_jsonl(&dir.join("pool_test.jsonl"))?,
        })
    }
}

/// What to do with classes that cannot supply `k + mu*k + k` examples.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UndersizedPolicy {
    /// Remove the class from every split, test included.
    #[default]
    Drop,
    /// Lower k globally so that every class with at least `2 + mu` examples fits.
    ReduceK,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub k: usize,
    pub mu: usize,
    pub seed: u64,
    pub policy: UndersizedPolicy,
    /// Original label of each retained class; position is the new label.
    pub classes: Vec<usize>,
    pub dropped_classes: Vec<usize>,
    /// Ground-truth labels of `unlabeled`, aligned by position.
    pub unlabeled_truth: Vec<usize>,
    /// Indices into the pool's train part, per split.
    pub labeled_origin: Vec<usize>,
    pub unlabeled_origin: Vec<usize>,
    pub dev_origin: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_hash: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FewShotSplit {
    pub labeled: Vec<Example>,
    /// Labels stripped; see `manifest.unlabeled_truth`.
    pub unlabeled: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
    pub manifest: SplitManifest,
}

impl FewShotSplit {
    pub fn num_classes(&self) -> usize {
        self.manifest.classes.len()
    }

    /// Unlabeled examples with their ground-truth labels restored.
    pub fn unlabeled_with_truth(&self) -> Vec<Example> {
        self.unlabeled
            .iter()
            .zip(&self.manifest.unlabeled_truth)
            .map(|(e, &y)| Example::labeled(e.text.clone(), y))
            .collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_jsonl(&dir.join("labeled.jsonl"), &self.labeled)?;
        write_jsonl(&dir.join("unlabeled.jsonl"), &self.unlabeled)?;
        write_jsonl(&dir.join("dev.jsonl"), &self.dev)?;
        write_jsonl(&dir.join("test.jsonl"), &self.test)?;
        let path = dir.join("split.json");
        let text =
            serde_json::to_string_pretty(&self.manifest).map_err(|e| Error::json(&path, e))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("split.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: SplitManifest =
            serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
        let split = FewShotSplit {
            labeled: read_jsonl(&dir.join("labeled.jsonl"))?,
            unlabeled: read_jsonl(&dir.join("unlabeled.jsonl"))?,
            dev: read_jsonl(&dir.join("dev.jsonl"))?,
            test: read_jsonl(&dir.join("test.jsonl"))?,
            manifest,
        };
        if split.unlabeled.len() != split.manifest.unlabeled_truth.len() {
            return Err(Error::Config(format!(
                "{}: unlabeled_truth has {} entries for {} unlabeled examples",
                path.display(),
                split.manifest.unlabeled_truth.len(),
                split.unlabeled.len()
            )));
        }
        Ok(split)
    }
}

/// Samples `k` labeled, `mu*k` unlabeled and `k` dev examples per class.
///
/// Deterministic in `(pool, k, mu, seed, policy)`. Retained classes are
/// relabeled densely in ascending order of their original label.
pub fn sample_few_shot(
    pool: &LabeledPool,
    k: usize,
    mu: usize,
    seed: u64,
    policy: UndersizedPolicy,
) -> Result<FewShotSplit> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let num_classes = pool.num_classes();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, ex) in pool.train.iter().enumerate() {
        let y = ex
            .label
            .ok_or_else(|| Error::Config(format!("pool example {i} has no label")))?;
        by_class[y].push(i);
    }

    let per_k = 2 + mu;
    let k = match policy {
        UndersizedPolicy::Drop => k,
        UndersizedPolicy::ReduceK => by_class
            .iter()
            .map(Vec::len)
            .filter(|&n| n >= per_k)
            .map(|n| n / per_k)
            .min()
            .map_or(k, |m| m.min(k)),
    };
    let required = k * per_k;
    let (kept, dropped): (Vec<usize>, Vec<usize>) =
        (0..num_classes).partition(|&c| by_class[c].len() >= required);
    if kept.is_empty() {
        return Err(Error::NoEligibleClass { required });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = SplitManifest {
        k,
        mu,
        seed,
        policy,
        classes: kept.clone(),
        dropped_classes: dropped,
        unlabeled_truth: Vec::new(),
        labeled_origin: Vec::new(),
        unlabeled_origin: Vec::new(),
        dev_origin: Vec::new(),
        vocab_hash: None,
    };
    for &c in &kept {
        let mut idx = by_class[c].clone();
        idx.shuffle(&mut rng);
        m.labeled_origin.extend_from_slice(&idx[..k]);
        m.unlabeled_origin.extend_from_slice(&idx[k..k + mu * k]);
        m.dev_origin.extend_from_slice(&idx[k + mu * k..required]);
    }

    let remap = |orig: usize| kept.binary_search(&orig).ok();
    let relabel = |i: &usize| {
        let ex = &pool.train[*i];
        Example::labeled(ex.text.clone(), remap(ex.label.unwrap()).unwrap())
    };
    let labeled = m.labeled_origin.iter().map(relabel).collect();
    let dev = m.dev_origin.iter().map(relabel).collect();
    let unlabeled = m
        .unlabeled_origin
        .iter()
        .map(|&i| Example::unlabeled(pool.train[i].text.clone()))
        .collect();
    m.unlabeled_truth = m
        .unlabeled_origin
        .iter()
        .map(|&i| remap(pool.train[i].label.unwrap()).unwrap())
        .collect();
    let test = pool
        .test
        .iter()
        .filter_map(|ex| {
            let y = remap(ex.label?)?;
            Some(Example::labeled(ex.text.clone(), y))
        })
        .collect();

    Ok(FewShotSplit {
        labeled,
        unlabeled,
        dev,
        test,
        manifest: m,
    })
}

/// Set of pool indices used by any sampled split.
#[cfg(test)]
fn origins(split: &FewShotSplit) -> std::collections::BTreeSet<usize> {
    let m = &split.manifest;
    m.labeled_origin
        .iter()
        .chain(&m.unlabeled_origin)
        .chain(&m.dev_origin)
        .copied()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pool(sizes: &[usize], test_per_class: usize) -> LabeledPool {
        let mut p = LabeledPool::default();
        for (c, &n) in sizes.iter().enumerate() {
            for i in 0..n {
                p.train.push(Example::labeled(format!("c{c} t{i}"), c));
            }
            for i in 0..test_per_class {
                p.test.push(Example::labeled(format!("c{c} held{i}"), c));
            }
        }
        p
    }

    fn counts(xs: &[Example], c: usize) -> Vec<usize> {
        let mut n = vec![0; c];
        for e in xs {
            n[e.label.unwrap()] += 1;
        }
        n
    }

    #[test]
    fn six_by_two_hundred() {
        let s = sample_few_shot(&pool(&[200; 6], 10), 16, 4, 1, UndersizedPolicy::Drop).unwrap();
        assert_eq!(s.labeled.len(), 96);
        assert_eq!(s.unlabeled.len(), 384);
        assert_eq!(s.dev.len(), 96);
        assert_eq!(counts(&s.labeled, 6), vec![16; 6]);
        assert_eq!(counts(&s.dev, 6), vec![16; 6]);
        assert!(s.unlabeled.iter().all(|e| e.label.is_none()));
        let truth: Vec<Example> = s.unlabeled_with_truth();
        assert_eq!(counts(&truth, 6), vec![64; 6]);
        assert_eq!(origins(&s).len(), 96 + 384 + 96);
    }

    #[test]
    fn undersized_class_dropped_everywhere() {
        let s = sample_few_shot(&pool(&[200, 30, 200], 5), 16, 4, 3, UndersizedPolicy::Drop)
            .unwrap();
        assert_eq!(s.manifest.classes, vec![0, 2]);
        assert_eq!(s.manifest.dropped_classes, vec![1]);
        assert_eq!(s.num_classes(), 2);
        assert!(s.test.iter().all(|e| !e.text.starts_with("c1 ")));
        assert!(s.labeled.iter().all(|e| !e.text.starts_with("c1 ")));
        assert_eq!(s.test.len(), 10);
        // relabeled densely: original class 2 becomes 1
        assert!(s
            .test
            .iter()
            .filter(|e| e.text.starts_with("c2 "))
            .all(|e| e.label == Some(1)));
    }

    #[test]
    fn reduce_k_policy_lowers_k_globally() {
        let s = sample_few_shot(&pool(&[200, 30, 200], 2), 16, 4, 3, UndersizedPolicy::ReduceK)
            .unwrap();
        assert_eq!(s.manifest.k, 5);
        assert_eq!(s.num_classes(), 3);
        assert_eq!(counts(&s.labeled, 3), vec![5; 3]);
        assert_eq!(s.unlabeled.len(), 3 * 20);
    }

    #[test]
    fn nothing_eligible() {
        let r = sample_few_shot(&pool(&[10, 10], 0), 16, 4, 0, UndersizedPolicy::Drop);
        assert!(matches!(r, Err(Error::NoEligibleClass { required: 96 })));
    }

    #[test]
    fn save_and_load() {
        let s = sample_few_shot(&pool(&[100; 3], 4), 4, 2, 9, UndersizedPolicy::Drop).unwrap();
        let dir = tempfile::tempdir().unwrap();
        s.save(dir.path()).unwrap();
        assert_eq!(FewShotSplit::load(dir.path()).unwrap(), s);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn deterministic_and_disjoint(
            sizes in proptest::collection::vec(0usize..120, 1..6),
            k in 1usize..6,
            mu in 1usize..5,
            seed in any::<u64>(),
        ) {
            let p = pool(&sizes, 3);
            let a = sample_few_shot(&p, k, mu, seed, UndersizedPolicy::Drop);
            let b = sample_few_shot(&p, k, mu, seed, UndersizedPolicy::Drop);
            match (a, b) {
                (Ok(a), Ok(b)) => {
                    prop_assert_eq!(&a, &b);
                    let n = a.labeled.len() + a.unlabeled.len() + a.dev.len();
                    prop_assert_eq!(origins(&a).len(), n);
                    let c = a.num_classes();
                    prop_assert_eq!(counts(&a.labeled, c), vec![k; c]);
                    prop_assert_eq!(a.dev.len(), a.labeled.len());
                    // every test class is also a training class
                    for e in &a.test {
                        prop_assert!(e.label.unwrap() < c);
                    }
                }
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "nondeterministic outcome"),
            }
        }
    }
}

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};

/// One label word per class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelWordMap {
    pub ids: Vec<usize>,
}

/// Several label words per class, no token shared between classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiLabelMap {
    pub ids: Vec<Vec<usize>>,
}

fn check_id(id: usize, vocab_size: usize) -> Result<()> {
    if id >= vocab_size {
        return Err(Error::OutOfRange {
            what: "vocabulary",
            index: id,
            len: vocab_size,
        });
    }
    if id < Vocabulary::NUM_SPECIAL {
        return Err(Error::LabelMap(format!("special token id {id} used as a label word")));
    }
    Ok(())
}

impl LabelWordMap {
    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        let mut seen = HashSet::new();
        for &id in &self.ids {
            check_id(id, vocab_size)?;
            if !seen.insert(id) {
                return Err(Error::LabelMap(format!("token id {id} mapped to two classes")));
            }
        }
        Ok(())
    }

    pub fn from_words(words: &[String], vocab: &Vocabulary) -> Result<Self> {
        let ids = words
            .iter()
            .map(|w| {
                vocab
                    .id(w)
                    .ok_or_else(|| Error::LabelMap(format!("label word {w:?} not in vocabulary")))
            })
            .collect::<Result<Vec<_>>>()?;
        let map = LabelWordMap { ids };
        map.validate(vocab.len())?;
        Ok(map)
    }

    pub fn as_multi(&self) -> MultiLabelMap {
        MultiLabelMap {
            ids: self.ids.iter().map(|&i| vec![i]).collect(),
        }
    }

    pub fn save(&self, path: &Path, vocab: &Vocabulary) -> Result<()> {
        self.as_multi().save(path, vocab)
    }

    pub fn load(path: &Path, vocab: &Vocabulary) -> Result<Self> {
        let multi = MultiLabelMap::load(path, vocab)?;
        let ids = multi
            .ids
            .iter()
            .map(|l| match l.as_slice() {
                [id] => Ok(*id),
                _ => Err(Error::LabelMap(format!(
                    "{}: single label word map needs exactly one word per class",
                    path.display()
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        let map = LabelWordMap { ids };
        map.validate(vocab.len())?;
        Ok(map)
    }
}

impl MultiLabelMap {
    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        let mut seen = HashSet::new();
        for (c, list) in self.ids.iter().enumerate() {
            if list.is_empty() {
                return Err(Error::LabelMap(format!("class {c} has no label words")));
            }
            for &id in list {
                check_id(id, vocab_size)?;
                if !seen.insert(id) {
                    return Err(Error::LabelMap(format!("token id {id} appears under two classes")));
                }
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.ids.len()
    }

    /// `|V| × c` 0/1 matrix: class logits are `v · S`.
    pub fn selection_matrix(&self, vocab_size: usize) -> Array2<f64> {
        let mut s = Array2::zeros((vocab_size, self.ids.len()));
        for (c, list) in self.ids.iter().enumerate() {
            for &t in list {
                s[[t, c]] += 1.0;
            }
        }
        s
    }

    /// `{"0": ["tok", ...], "1": [...]}`
    pub fn to_json(&self, vocab: &Vocabulary) -> BTreeMap<String, Vec<String>> {
        self.ids
            .iter()
            .enumerate()
            .map(|(c, list)| {
                (
                    c.to_string(),
                    list.iter().map(|&t| vocab.token(t).unwrap_or("[UNK]").to_string()).collect(),
                )
            })
            .collect()
    }

    pub fn from_json(map: &BTreeMap<String, Vec<String>>, vocab: &Vocabulary) -> Result<Self> {
        let mut classes: Vec<(usize, &Vec<String>)> = map
            .iter()
            .map(|(k, v)| {
                k.parse::<usize>()
                    .map(|c| (c, v))
                    .map_err(|_| Error::LabelMap(format!("class key {k:?} is not an index")))
            })
            .collect::<Result<_>>()?;
        classes.sort_by_key(|(c, _)| *c);
        if classes.iter().enumerate().any(|(i, (c, _))| i != *c) {
            return Err(Error::LabelMap("class indices must be 0..c without gaps".into()));
        }
        let ids = classes
            .into_iter()
            .map(|(_, words)| {
                words
                    .iter()
                    .map(|w| {
                        vocab
                            .id(w)
                            .ok_or_else(|| Error::LabelMap(format!("label word {w:?} not in vocabulary")))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let m = MultiLabelMap { ids };
        m.validate(vocab.len())?;
        Ok(m)
    }

    pub fn save(&self, path: &Path, vocab: &Vocabulary) -> Result<()> {
        let text =
            serde_json::to_string_pretty(&self.to_json(vocab)).map_err(|e| Error::json(path, e))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, vocab: &Vocabulary) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw: BTreeMap<String, Vec<String>> =
            serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        Self::from_json(&raw, vocab)
    }
}

/// Class logit `y` is `v[map[y]]`.
pub fn single_label_forward(v: &[f64], map: &LabelWordMap) -> Result<Vec<f64>> {
    map.ids
        .iter()
        .map(|&id| {
            v.get(id).copied().ok_or(Error::OutOfRange {
                what: "MLM prediction",
                index: id,
                len: v.len(),
            })
        })
        .collect()
}

/// Class logit `y` is `Σ_{t ∈ map[y]} v[t]`.
pub fn multi_label_forward(v: &[f64], map: &MultiLabelMap) -> Result<Vec<f64>> {
    map.ids
        .iter()
        .map(|list| {
            list.iter().try_fold(0.0, |acc, &id| {
                v.get(id).map(|x| acc + x).ok_or(Error::OutOfRange {
                    what: "MLM prediction",
                    index: id,
                    len: v.len(),
                })
            })
        })
        .collect()
}

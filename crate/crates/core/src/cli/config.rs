//! Flat `key = value` configuration with dotted keys.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::bench::BenchConfig;
use crate::corpus::{SyntheticSpec, UndersizedPolicy};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, PretrainConfig};
use crate::selftrain::{AugMethod, StrongAug, TrainConfig};
use crate::verbalizers::AMULAP_TOP_K;

/// Ordered key/value pairs. Later insertions win.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FlatConfig {
    pub entries: BTreeMap<String, String>,
}

impl FlatConfig {
    /// Blank lines and `#` comments are ignored.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{origin}:{}: expected `key = value`, got {line:?}", i + 1))
            })?;
            entries.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(FlatConfig { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Applies `key=value` overrides on top of the file values.
    pub fn apply_overrides(&mut self, sets: &[String]) -> Result<()> {
        for s in sets {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects key=value, got {s:?}")))?;
            self.entries.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    fn parsed<T: FromStr>(&self, key: &str, what: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| Error::Config(format!("{key}: expected {what}, got {v:?}")))
            })
            .transpose()
    }

    /// The `key = value` text, one per line in key order.
    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Entries whose key starts with `prefix.`, with the prefix removed.
    pub fn section(&self, prefix: &str) -> BTreeMap<String, String> {
        let p = format!("{prefix}.");
        self.entries
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(&p).map(|s| (s.to_string(), v.clone())))
            .collect()
    }

    /// Only the given sections.
    pub fn only(&self, prefixes: &[&str]) -> FlatConfig {
        FlatConfig {
            entries: self
                .entries
                .iter()
                .filter(|(k, _)| prefixes.iter().any(|p| k.starts_with(&format!("{p}."))))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn with(&self, key: &str, value: impl ToString) -> FlatConfig {
        let mut c = self.clone();
        c.entries.insert(key.to_string(), value.to_string());
        c
    }

    /// Without the given sections.
    pub fn without(&self, prefixes: &[&str]) -> FlatConfig {
        FlatConfig {
            entries: self
                .entries
                .iter()
                .filter(|(k, _)| !prefixes.iter().any(|p| k.starts_with(&format!("{p}."))))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }
}

/// Every accepted key. Sections `grid.*` are only read by `sweep`.
pub const KNOWN_KEYS: &[&str] = &[
    "data.dir",
    "synthetic.num_classes",
    "synthetic.keywords_per_class",
    "synthetic.background",
    "synthetic.mix_rate",
    "synthetic.length_min",
    "synthetic.length_max",
    "synthetic.corpus_size",
    "synthetic.prompt_rate",
    "synthetic.train_per_class",
    "synthetic.test_per_class",
    "synthetic.seed",
    "model.d_model",
    "model.n_layers",
    "model.n_heads",
    "model.d_ff",
    "model.max_len",
    "model.dropout_p",
    "pretrain.mask_rate",
    "pretrain.epochs",
    "pretrain.lr",
    "pretrain.batch_size",
    "pretrain.seed",
    "split.k",
    "split.mu",
    "split.seed",
    "split.policy",
    "train.batch_size",
    "train.mu",
    "train.tau",
    "train.lambda1",
    "train.lambda2",
    "train.lr",
    "train.head_lr",
    "train.epochs",
    "train.eval_every",
    "train.freeze",
    "train.strong_aug",
    "train.strong_p",
    "train.flexmatch",
    "train.aux_mask_rate",
    "train.seed",
    "head.d_ve",
    "head.top_k",
    "grid.heads",
    "grid.modes",
    "grid.lambda1",
    "grid.lambda2",
    "grid.lr",
    "grid.tau",
    "grid.freeze",
    "grid.d_ve",
];

/// Typed view of a [`FlatConfig`], starting from the benchmark defaults.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data_dir: Option<String>,
    pub spec: SyntheticSpec,
    pub data_seed: u64,
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    pub k: usize,
    pub mu: usize,
    pub split_seed: u64,
    pub policy: UndersizedPolicy,
    pub train: TrainConfig,
    pub d_ve: Option<usize>,
    pub top_k: usize,
}

impl RunConfig {
    pub fn from_flat(f: &FlatConfig) -> Result<Self> {
        if let Some(bad) = f.entries.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
            return Err(Error::Config(format!("unknown config key {bad:?}")));
        }
        let b = BenchConfig::standard();
        let num = "a non-negative integer";
        let real = "a number";

        let classes = f.parsed("synthetic.num_classes", num)?.unwrap_or(b.spec.num_classes());
        let kw = f
            .parsed("synthetic.keywords_per_class", num)?
            .unwrap_or(b.spec.class_keyword_sets[0].len());
        let bg = f.parsed("synthetic.background", num)?.unwrap_or(b.spec.background_pool.len());
        let mut spec = SyntheticSpec::with_sizes(classes, kw, bg);
        spec.mix_rate = f.parsed("synthetic.mix_rate", real)?.unwrap_or(b.spec.mix_rate);
        spec.length_range = (
            f.parsed("synthetic.length_min", num)?.unwrap_or(b.spec.length_range.0),
            f.parsed("synthetic.length_max", num)?.unwrap_or(b.spec.length_range.1),
        );
        spec.corpus_size = f.parsed("synthetic.corpus_size", num)?.unwrap_or(b.spec.corpus_size);
        spec.prompt_rate = f.parsed("synthetic.prompt_rate", real)?.unwrap_or(b.spec.prompt_rate);
        spec.train_per_class = f
            .parsed("synthetic.train_per_class", num)?
            .unwrap_or(b.spec.train_per_class);
        spec.test_per_class = f
            .parsed("synthetic.test_per_class", num)?
            .unwrap_or(b.spec.test_per_class);
        spec.validate()
            .map_err(|e| Error::Config(format!("synthetic: {}", strip(e))))?;

        let model = ModelConfig {
            d_model: f.parsed("model.d_model", num)?.unwrap_or(b.model.d_model),
            n_layers: f.parsed("model.n_layers", num)?.unwrap_or(b.model.n_layers),
            n_heads: f.parsed("model.n_heads", num)?.unwrap_or(b.model.n_heads),
            d_ff: f.parsed("model.d_ff", num)?.unwrap_or(b.model.d_ff),
            max_len: f.parsed("model.max_len", num)?.unwrap_or(b.model.max_len),
            dropout_p: f.parsed("model.dropout_p", real)?.unwrap_or(b.model.dropout_p),
            vocab_size: 1,
        };
        model
            .validate()
            .map_err(|e| Error::Config(format!("model: {}", strip(e))))?;

        let pretrain = PretrainConfig {
            mask_rate: f.parsed("pretrain.mask_rate", real)?.unwrap_or(b.pretrain.mask_rate),
            epochs: f.parsed("pretrain.epochs", num)?.unwrap_or(b.pretrain.epochs),
            lr: f.parsed("pretrain.lr", real)?.unwrap_or(b.pretrain.lr),
            batch_size: f.parsed("pretrain.batch_size", num)?.unwrap_or(b.pretrain.batch_size),
            seed: f.parsed("pretrain.seed", num)?.unwrap_or(b.pretrain.seed),
        };
        if !(pretrain.mask_rate > 0.0 && pretrain.mask_rate < 1.0) {
            return Err(Error::Config(format!(
                "pretrain.mask_rate: must lie in (0, 1), got {}",
                pretrain.mask_rate
            )));
        }

        let t = &b.train;
        let method: AugMethod = f
            .get("train.strong_aug")
            .map(|s| s.parse().map_err(|e| Error::Config(format!("train.strong_aug: {}", strip(e)))))
            .transpose()?
            .unwrap_or(t.strong_aug.method);
        let train = TrainConfig {
            batch_size: f.parsed("train.batch_size", num)?.unwrap_or(t.batch_size),
            mu: f.parsed("train.mu", num)?.unwrap_or(t.mu),
            tau: f.parsed("train.tau", real)?.unwrap_or(t.tau),
            lambda1: f.parsed("train.lambda1", real)?.unwrap_or(t.lambda1),
            lambda2: f.parsed("train.lambda2", real)?.unwrap_or(t.lambda2),
            lr: f.parsed("train.lr", real)?.unwrap_or(t.lr),
            head_lr: match f.get("train.head_lr") {
                Some("none") => None,
                _ => f.parsed("train.head_lr", real)?.or(t.head_lr),
            },
            epochs: f.parsed("train.epochs", num)?.unwrap_or(t.epochs),
            eval_every: f.parsed("train.eval_every", num)?.unwrap_or(t.eval_every),
            freeze: f
                .get("train.freeze")
                .map(|s| s.parse().map_err(|e| Error::Config(format!("train.freeze: {}", strip(e)))))
                .transpose()?
                .unwrap_or(t.freeze),
            strong_aug: StrongAug {
                method,
                p: f.parsed("train.strong_p", real)?.unwrap_or(method.default_p()),
            },
            flexmatch: f.parsed("train.flexmatch", "true or false")?.unwrap_or(t.flexmatch),
            aux_mask_rate: f.parsed("train.aux_mask_rate", real)?.unwrap_or(t.aux_mask_rate),
            seed: f.parsed("train.seed", num)?.unwrap_or(t.seed),
        };
        train
            .validate()
            .map_err(|e| Error::Config(format!("train: {}", strip(e))))?;

        Ok(RunConfig {
            data_dir: f.get("data.dir").map(str::to_string),
            spec,
            data_seed: f.parsed("synthetic.seed", num)?.unwrap_or(b.data_seed),
            model,
            pretrain,
            k: f.parsed("split.k", num)?.unwrap_or(b.k),
            mu: f.parsed("split.mu", num)?.unwrap_or(b.mu),
            split_seed: f.parsed("split.seed", num)?.unwrap_or(0),
            policy: match f.get("split.policy") {
                None | Some("drop") => UndersizedPolicy::Drop,
                Some("reduce_k") => UndersizedPolicy::ReduceK,
                Some(other) => {
                    return Err(Error::Config(format!(
                        "split.policy: expected drop or reduce_k, got {other:?}"
                    )))
                }
            },
            train,
            d_ve: f.parsed("head.d_ve", num)?.or(b.d_ve),
            top_k: f.parsed("head.top_k", num)?.unwrap_or(AMULAP_TOP_K),
        })
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_overrides() {
        let mut f = FlatConfig::parse("# comment\ntrain.tau = 0.9\n\nmodel.d_model=32 # inline\n", "t").unwrap();
        f.apply_overrides(&["train.tau=0.5".into()]).unwrap();
        let rc = RunConfig::from_flat(&f).unwrap();
        assert_eq!(rc.train.tau, 0.5);
        assert_eq!(rc.model.d_model, 32);
        assert_eq!(f.render(), "model.d_model = 32\ntrain.tau = 0.5\n");
    }

    #[test]
    fn field_level_errors() {
        let f = FlatConfig::parse("train.tau = high", "t").unwrap();
        let e = RunConfig::from_flat(&f).unwrap_err().to_string();
        assert!(e.contains("train.tau"), "{e}");
        let f = FlatConfig::parse("train.colour = red", "t").unwrap();
        assert!(RunConfig::from_flat(&f).unwrap_err().to_string().contains("train.colour"));
        let f = FlatConfig::parse("model.n_heads = 3", "t").unwrap();
        assert!(RunConfig::from_flat(&f).unwrap_err().to_string().contains("model:"));
        assert!(FlatConfig::parse("novalue", "cfg").is_err());
    }

    #[test]
    fn defaults_match_benchmark() {
        let rc = RunConfig::from_flat(&FlatConfig::default()).unwrap();
        let b = BenchConfig::standard();
        assert_eq!(rc.spec, b.spec);
        assert_eq!(rc.train, b.train);
        assert_eq!(rc.pretrain, b.pretrain);
    }
}

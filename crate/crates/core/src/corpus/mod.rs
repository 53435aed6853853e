//! Tokens, templated model inputs, synthetic data and few-shot splits.

mod io;
mod split;
mod synthetic;
mod template;
mod vocab;

use serde::{Deserialize, Serialize};

pub use io::{read_jsonl, write_jsonl};
pub use split::{sample_few_shot, FewShotSplit, LabeledPool, SplitManifest, UndersizedPolicy};
pub use synthetic::{gen_synthetic, SyntheticSpec};
pub use template::{apply_plain, apply_template, encode_all, EncodedSequence, TEMPLATE_COLON};
pub use vocab::{build_vocab, tokenize, Vocabulary, CLS, MASK, PAD, SEP, SPECIALS, UNK};

/// One line of a dataset file.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Example {
    pub text: String,
    pub label: Option<usize>,
}

impl Example {
    pub fn labeled(text: impl Into<String>, label: usize) -> Self {
        Example {
            text: text.into(),
            label: Some(label),
        }
    }

    pub fn unlabeled(text: impl Into<String>) -> Self {
        Example {
            text: text.into(),
            label: None,
        }
    }
}

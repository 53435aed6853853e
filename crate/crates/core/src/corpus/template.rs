use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, Example, Vocabulary};
use crate::error::{Error, Result};

/// Token following the template mask.
pub const TEMPLATE_COLON: &str = ":";

/// Ids fed to the encoder, padded to a fixed length.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedSequence {
    pub ids: Vec<usize>,
    /// Template `[MASK]` position, absent for untemplated inputs.
    pub mask_pos: Option<usize>,
    /// Number of non-padding positions; `ids[attention_len - 1]` is `[SEP]`.
    pub attention_len: usize,
    /// First body position (after `[CLS]` and any template prefix).
    pub body_start: usize,
}

impl EncodedSequence {
    /// Positions `body_start..attention_len - 1`.
    pub fn body_range(&self) -> std::ops::Range<usize> {
        self.body_start..self.attention_len.saturating_sub(1).max(self.body_start)
    }

    pub fn body(&self) -> &[usize] {
        &self.ids[self.body_range()]
    }

    pub fn active(&self) -> &[usize] {
        &self.ids[..self.attention_len]
    }

    pub fn max_len(&self) -> usize {
        self.ids.len()
    }

    /// Rebuilds the sequence around a new body, keeping prefix and padding length.
    pub fn with_body(&self, body: &[usize]) -> EncodedSequence {
        let mut ids = Vec::with_capacity(self.ids.len());
        ids.extend_from_slice(&self.ids[..self.body_start]);
        ids.extend_from_slice(body);
        ids.push(Vocabulary::SEP_ID);
        let attention_len = ids.len();
        ids.resize(self.ids.len().max(attention_len), Vocabulary::PAD_ID);
        EncodedSequence {
            ids,
            mask_pos: self.mask_pos,
            attention_len,
            body_start: self.body_start,
        }
    }
}

fn wrap(prefix: &[usize], x: &Example, vocab: &Vocabulary, max_len: usize) -> EncodedSequence {
    let room = max_len - prefix.len() - 1;
    let mut ids: Vec<usize> = prefix.to_vec();
    ids.extend(tokenize(&x.text).take(room).map(|t| vocab.id_or_unk(t)));
    ids.push(Vocabulary::SEP_ID);
    let attention_len = ids.len();
    ids.resize(max_len, Vocabulary::PAD_ID);
    EncodedSequence {
        ids,
        mask_pos: None,
        attention_len,
        body_start: prefix.len(),
    }
}

/// `[CLS] [MASK] : x [SEP]` followed by padding; the body is truncated to fit.
pub fn apply_template(x: &Example, vocab: &Vocabulary, max_len: usize) -> Result<EncodedSequence> {
    if max_len < 5 {
        return Err(Error::Config(format!(
            "max_len {max_len} cannot hold the template (need at least 5)"
        )));
    }
    let prefix = [
        Vocabulary::CLS_ID,
        Vocabulary::MASK_ID,
        vocab.id_or_unk(TEMPLATE_COLON),
    ];
    let mut seq = wrap(&prefix, x, vocab, max_len);
    seq.mask_pos = Some(1);
    Ok(seq)
}

/// `[CLS] x [SEP]` without a template, for the standard classification head.
pub fn apply_plain(x: &Example, vocab: &Vocabulary, max_len: usize) -> Result<EncodedSequence> {
    if max_len < 3 {
        return Err(Error::Config(format!("max_len {max_len} too small")));
    }
    Ok(wrap(&[Vocabulary::CLS_ID], x, vocab, max_len))
}

/// Encodes a whole list, templated or plain.
pub fn encode_all(
    examples: &[Example],
    vocab: &Vocabulary,
    templated: bool,
    max_len: usize,
) -> Result<Vec<EncodedSequence>> {
    examples
        .iter()
        .map(|e| {
            if templated {
                apply_template(e, vocab, max_len)
            } else {
                apply_plain(e, vocab, max_len)
            }
        })
        .collect()
}

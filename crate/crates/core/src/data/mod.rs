//! Word-level corpus handling: vocabulary, token streams, batching.

mod batch;
pub mod synthetic;
mod vocab;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use batch::{batchify, shuffled_batches, window_count};
pub use vocab::{build_vocab, token_counts, tokenize_line, VocabOptions, Vocabulary, EOS, UNK};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenStream {
    pub split: Split,
    pub ids: Vec<usize>,
}

impl TokenStream {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Encoded train/valid/test splits sharing one vocabulary built from the
/// training split alone.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub train: TokenStream,
    pub valid: TokenStream,
    pub test: TokenStream,
}

impl Dataset {
    pub fn from_splits(train: &str, valid: &str, test: &str, opts: &VocabOptions) -> Result<Self> {
        let vocab = build_vocab(train, opts)?;
        Ok(Self {
            train: vocab.encode(train, Split::Train),
            valid: vocab.encode(valid, Split::Valid),
            test: vocab.encode(test, Split::Test),
            vocab,
        })
    }

    /// Splits one text into contiguous line blocks by `ratios`
    /// (train, valid; test takes the rest).
    pub fn from_text(text: &str, ratios: (f64, f64), opts: &VocabOptions) -> Result<Self> {
        let (train, valid, test) = split_lines(text, ratios)?;
        Self::from_splits(&train, &valid, &test, opts)
    }

    pub fn from_files(train: &Path, valid: &Path, test: &Path, opts: &VocabOptions) -> Result<Self> {
        let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| Error::io(p, e));
        Self::from_splits(&read(train)?, &read(valid)?, &read(test)?, opts)
    }
}

/// Contiguous line-block split of `text`.
pub fn split_lines(text: &str, (train, valid): (f64, f64)) -> Result<(String, String, String)> {
    if !(train > 0.0 && valid >= 0.0 && train + valid <= 1.0) {
        return Err(Error::Config(format!("invalid split ratios ({train}, {valid})")));
    }
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let n = lines.len();
    let n_train = (n as f64 * train).round() as usize;
    let n_valid = ((n as f64 * valid).round() as usize).min(n - n_train);
    let join = |ls: &[&str]| ls.iter().map(|l| format!("{l}\n")).collect::<String>();
    Ok((
        join(&lines[..n_train]),
        join(&lines[n_train..n_train + n_valid]),
        join(&lines[n_train + n_valid..]),
    ))
}

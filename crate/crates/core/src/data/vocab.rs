use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{Split, TokenStream};
use crate::error::{Error, Result};

pub const UNK: &str = "<unk>";
pub const EOS: &str = "<eos>";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabOptions {
    pub min_freq: usize,
    /// Cap on vocabulary size, specials included.
    pub max_size: usize,
}

impl Default for VocabOptions {
    fn default() -> Self {
        Self {
            min_freq: 1,
            max_size: 4096,
        }
    }
}

/// Whitespace tokens of one line followed by the end-of-line marker.
/// Blank lines yield nothing.
pub fn tokenize_line(line: &str) -> impl Iterator<Item = &str> {
    let mut words = line.split_whitespace().peekable();
    let has_words = words.peek().is_some();
    words.chain(has_words.then_some(EOS))
}

/// Occurrence count of every whitespace token in `text` (end-of-line
/// markers excluded).
pub fn token_counts(text: &str) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for word in text.split_whitespace() {
        *counts.entry(word.to_string()).or_insert(0) += 1;
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
    unk_id: usize,
}

/// Builds a vocabulary from training text: specials first, then tokens by
/// descending frequency with lexicographic tie-break.
pub fn build_vocab(train: &str, opts: &VocabOptions) -> Result<Vocabulary> {
    let counts = token_counts(train);
    if counts.is_empty() {
        return Err(Error::Input("training text contains no tokens".into()));
    }
    if opts.max_size < 2 {
        return Err(Error::Config("vocabulary must hold at least the two specials".into()));
    }
    let mut ranked: Vec<(&String, &usize)> = counts
        .iter()
        .filter(|(w, &c)| c >= opts.min_freq.max(1) && w.as_str() != UNK && w.as_str() != EOS)
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
    let tokens: Vec<String> = [UNK, EOS]
        .into_iter()
        .map(String::from)
        .chain(ranked.into_iter().map(|(w, _)| w.clone()))
        .take(opts.max_size)
        .collect();
    Ok(Vocabulary::from_tokens(tokens))
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Self {
        let ids = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, ids, unk_id: 0 }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn unk_id(&self) -> usize {
        self.unk_id
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(self.unk_id)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode(&self, text: &str, split: Split) -> TokenStream {
        let ids = text.lines().flat_map(tokenize_line).map(|t| self.id(t)).collect();
        TokenStream { split, ids }
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<&str> {
        ids.iter().map(|&i| self.token(i).unwrap_or(UNK)).collect()
    }

    /// One `id<TAB>token` line per entry, in id order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, t) in self.tokens.iter().enumerate() {
            let _ = writeln!(out, "{i}\t{t}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            let (id, tok) = line
                .split_once('\t')
                .ok_or_else(|| Error::Input(format!("vocab line {}: missing tab", line_no + 1)))?;
            let id: usize = id
                .parse()
                .map_err(|_| Error::Input(format!("vocab line {}: bad id `{id}`", line_no + 1)))?;
            if id != tokens.len() {
                return Err(Error::Input(format!(
                    "vocab line {}: ids must be dense and sorted",
                    line_no + 1
                )));
            }
            tokens.push(tok.to_string());
        }
        if tokens.first().map(String::as_str) != Some(UNK) {
            return Err(Error::Input("vocabulary must start with <unk>".into()));
        }
        Ok(Self::from_tokens(tokens))
    }
}

//! Labeled messages, tokenization, vocabularies and deterministic splits.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const URL_TOKEN: &str = "<url>";
pub const USER_TOKEN: &str = "<user>";

/// One labeled message as read from disk. Label 1 is the positive (troll) class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRecord {
    pub text: String,
    pub label: u8,
}

impl RawRecord {
    pub fn new(text: impl Into<String>, label: u8) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::Empty("record text"));
        }
        if label > 1 {
            return Err(Error::InvalidConfig(alloc::format!("label {label} is not 0 or 1")));
        }
        Ok(RawRecord { text, label })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub tokens: Vec<String>,
    pub label: u8,
}

impl Document {
    pub fn new(tokens: Vec<String>, label: u8) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Empty("document tokens"));
        }
        Ok(Document { tokens, label })
    }

    /// Tokenizes a record; fails if nothing survives tokenization.
    pub fn from_record(record: &RawRecord) -> Result<Self> {
        Document::new(tokenize(&record.text), record.label)
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn is_url(chunk: &str) -> bool {
    chunk.starts_with("http://") || chunk.starts_with("https://") || chunk.starts_with("www.")
}

/// Lowercases, replaces URLs with `<url>` and @-mentions with `<user>`, then
/// splits on whitespace and punctuation. Punctuation runs are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let lower = chunk.to_lowercase();
        if is_url(&lower) {
            out.push(URL_TOKEN.to_string());
            continue;
        }
        let mut current = String::new();
        let mut chars = lower.chars().peekable();
        while let Some(c) = chars.next() {
            if is_word_char(c) {
                current.push(c);
                continue;
            }
            if !current.is_empty() {
                out.push(core::mem::take(&mut current));
            } else if c == '@' && chars.peek().is_some_and(|&n| is_word_char(n)) {
                while chars.peek().is_some_and(|&n| is_word_char(n)) {
                    chars.next();
                }
                out.push(USER_TOKEN.to_string());
            }
        }
        if !current.is_empty() {
            out.push(current);
        }
    }
    out
}

/// Dense token ↔ id mapping with `<pad>` = 0 and `<unk>` = 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
    min_count: usize,
}

impl Vocabulary {
    /// Rebuilds a vocabulary from its id-ordered token list, as written by
    /// [`Vocabulary::tokens`].
    pub fn from_tokens(tokens: Vec<String>, min_count: usize) -> Result<Self> {
        if tokens.len() < 2 || tokens[PAD] != PAD_TOKEN || tokens[UNK] != UNK_TOKEN {
            return Err(Error::InvalidConfig(
                "vocabulary must start with <pad> and <unk>".to_string(),
            ));
        }
        let mut index = BTreeMap::new();
        for (id, tok) in tokens.iter().enumerate() {
            if index.insert(tok.clone(), id).is_some() {
                return Err(Error::InvalidConfig(alloc::format!("duplicate vocabulary token {tok:?}")));
            }
        }
        Ok(Vocabulary {
            tokens,
            index,
            min_count,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Id of `token`, or `None` when it is out of vocabulary.
    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Id of `token`, mapping unknown tokens to `<unk>`.
    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }
}

/// Assigns ids by descending corpus frequency, ties broken lexicographically,
/// keeping tokens seen at least `min_count` times.
pub fn build_vocabulary(docs: &[Document], min_count: usize) -> Result<Vocabulary> {
    if min_count == 0 {
        return Err(Error::InvalidConfig("min_count must be at least 1".to_string()));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for doc in docs {
        for tok in &doc.tokens {
            *counts.entry(tok.as_str()).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(tok, n)| n >= min_count && tok != PAD_TOKEN && tok != UNK_TOKEN)
        .collect();
    // BTreeMap iteration is lexicographic and the sort is stable.
    ranked.sort_by(|a, b| b.1.cmp(&a.1));

    let mut tokens = Vec::with_capacity(ranked.len() + 2);
    tokens.push(PAD_TOKEN.to_string());
    tokens.push(UNK_TOKEN.to_string());
    tokens.extend(ranked.into_iter().map(|(t, _)| t.to_string()));
    Vocabulary::from_tokens(tokens, min_count)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit<T> {
    pub train: Vec<T>,
    pub validation: Vec<T>,
    pub test: Vec<T>,
    pub seed: u64,
}

impl<T> DatasetSplit<T> {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.validation.len(), self.test.len())
    }

    pub fn map<U>(self, mut f: impl FnMut(T) -> U) -> DatasetSplit<U> {
        DatasetSplit {
            train: self.train.into_iter().map(&mut f).collect(),
            validation: self.validation.into_iter().map(&mut f).collect(),
            test: self.test.into_iter().map(&mut f).collect(),
            seed: self.seed,
        }
    }

    pub fn try_map<U, E>(self, mut f: impl FnMut(T) -> core::result::Result<U, E>) -> core::result::Result<DatasetSplit<U>, E> {
        Ok(DatasetSplit {
            train: self.train.into_iter().map(&mut f).collect::<core::result::Result<_, _>>()?,
            validation: self.validation.into_iter().map(&mut f).collect::<core::result::Result<_, _>>()?,
            test: self.test.into_iter().map(&mut f).collect::<core::result::Result<_, _>>()?,
            seed: self.seed,
        })
    }
}

/// Split sizes under the floor rule: `(⌊r₀N⌋, ⌊r₁N⌋, remainder)`.
pub fn split_sizes(n: usize, ratios: [f64; 3]) -> Result<(usize, usize, usize)> {
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(Error::InvalidConfig(alloc::format!(
            "split ratios {ratios:?} must be in [0, 1] and sum to 1"
        )));
    }
    // The nudge keeps decimal ratios such as 0.7 from flooring one short when
    // r·N is an exact integer that f64 lands just below.
    let floor = |r: f64| libm::floor(r * n as f64 + 1e-9) as usize;
    let train = floor(ratios[0]).min(n);
    let validation = floor(ratios[1]).min(n - train);
    Ok((train, validation, n - train - validation))
}

/// Shuffles `items` with a seeded permutation and cuts it by [`split_sizes`].
pub fn split_dataset<T: Clone>(items: &[T], ratios: [f64; 3], seed: u64) -> Result<DatasetSplit<T>> {
    let (n_train, n_val, _) = split_sizes(items.len(), ratios)?;
    if items.len() < 3 {
        return Err(Error::InvalidConfig(alloc::format!(
            "need at least 3 records to split, got {}",
            items.len()
        )));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    rng::shuffle(&mut rng::seeded(seed), &mut order);
    let pick = |idx: &[usize]| idx.iter().map(|&i| items[i].clone()).collect::<Vec<_>>();
    Ok(DatasetSplit {
        train: pick(&order[..n_train]),
        validation: pick(&order[n_train..n_train + n_val]),
        test: pick(&order[n_train + n_val..]),
        seed,
    })
}

/// A fixed-length id sequence; positions at or beyond `valid_length` are `<pad>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSequence {
    pub ids: Vec<usize>,
    pub valid_length: usize,
}

/// Maps tokens to ids (unknown → `<unk>`), truncating or padding at the tail.
pub fn encode(tokens: &[String], vocab: &Vocabulary, max_len: usize) -> Result<EncodedSequence> {
    if max_len == 0 {
        return Err(Error::InvalidConfig("max_len must be at least 1".to_string()));
    }
    let mut ids: Vec<usize> = tokens.iter().take(max_len).map(|t| vocab.id(t)).collect();
    let valid_length = ids.len();
    ids.resize(max_len, PAD);
    Ok(EncodedSequence { ids, valid_length })
}

//! Tokenization, vocabulary, dataset files, splitting, encoding and batching.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizerMode {
    /// Split on Unicode whitespace.
    Whitespace,
    /// One token per non-whitespace code point.
    Char,
}

pub fn tokenize(text: &str, mode: TokenizerMode) -> Result<Vec<String>> {
    let tokens: Vec<String> = match mode {
        TokenizerMode::Whitespace => text.split_whitespace().map(str::to_owned).collect(),
        TokenizerMode::Char => text
            .chars()
            .filter(|c| !c.is_whitespace())
            .map(String::from)
            .collect(),
    };
    if tokens.is_empty() {
        return Err(Error::EmptyInput("text has no tokens".into()));
    }
    Ok(tokens)
}

/// A labelled line of a dataset file. Label 1 is rumor, 0 is non-rumor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawExample {
    pub label: u8,
    pub text: String,
}

/// Token/id bijection with `<pad>` at 0 and `<unk>` at 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    index: HashMap<String, usize>,
    tokens: Vec<String>,
    freqs: Vec<u64>,
}

impl Vocabulary {
    fn with_reserved() -> Self {
        Vocabulary {
            index: HashMap::from([(PAD_TOKEN.to_string(), PAD), (UNK_TOKEN.to_string(), UNK)]),
            tokens: vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()],
            freqs: vec![0, 0],
        }
    }

    fn push(&mut self, token: String, freq: u64) {
        self.index.insert(token.clone(), self.tokens.len());
        self.tokens.push(token);
        self.freqs.push(freq);
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id of `token`, or [`UNK`].
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Corpus frequency of the token with this id (0 for reserved ids and for
    /// vocabularies read back from disk).
    pub fn freq(&self, id: usize) -> u64 {
        self.freqs.get(id).copied().unwrap_or(0)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// `<token>\t<id>` per line, in id order.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (id, tok) in self.tokens.iter().enumerate() {
            let _ = writeln!(out, "{tok}\t{id}");
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut vocab = Vocabulary {
            index: HashMap::new(),
            tokens: Vec::new(),
            freqs: Vec::new(),
        };
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let parse_err = |msg: &str| Error::Parse {
                line: n + 1,
                msg: msg.to_string(),
            };
            let (tok, id) = line.rsplit_once('\t').ok_or_else(|| parse_err("expected <token>\\t<id>"))?;
            let id: usize = id.parse().map_err(|_| parse_err("id is not an integer"))?;
            if id != vocab.tokens.len() {
                return Err(parse_err("ids must be dense and ascending"));
            }
            if vocab.index.contains_key(tok) {
                return Err(parse_err("duplicate token"));
            }
            vocab.push(tok.to_string(), 0);
        }
        if vocab.token(PAD) != Some(PAD_TOKEN) || vocab.token(UNK) != Some(UNK_TOKEN) {
            return Err(Error::Value("vocabulary must start with <pad> and <unk>".into()));
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&text)
    }
}

/// Builds a vocabulary from tokens with frequency at least `min_freq`,
/// most frequent first with lexicographic tie-breaking, capped at `max_size`
/// ids including the two reserved ones.
pub fn build_vocab(corpus: &[RawExample], mode: TokenizerMode, min_freq: u64, max_size: usize) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput("cannot build a vocabulary from an empty corpus".into()));
    }
    if min_freq < 1 {
        return Err(Error::Value("min_freq must be at least 1".into()));
    }
    if max_size < 2 {
        return Err(Error::Value("max_size must leave room for <pad> and <unk>".into()));
    }
    let mut counts: HashMap<String, u64> = HashMap::new();
    for ex in corpus {
        for tok in tokenize(&ex.text, mode)? {
            *counts.entry(tok).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, u64)> = counts
        .into_iter()
        .filter(|(t, c)| *c >= min_freq && t != PAD_TOKEN && t != UNK_TOKEN)
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_size - 2);
    let mut vocab = Vocabulary::with_reserved();
    for (tok, c) in ranked {
        vocab.push(tok, c);
    }
    Ok(vocab)
}

/// A fixed-length id sequence with its validity mask.
///
/// Valid positions form a prefix of length `true_len`; the rest are `PAD`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedExample {
    pub ids: Vec<usize>,
    pub mask: Vec<bool>,
    pub true_len: usize,
    /// `None` for unlabelled text (e.g. at prediction time).
    pub label: Option<u8>,
}

impl EncodedExample {
    pub fn with_label(mut self, label: u8) -> Self {
        self.label = Some(label);
        self
    }

    pub fn max_len(&self) -> usize {
        self.ids.len()
    }
}

/// Maps tokens to ids, keeping the first `max_len` and right-padding with `PAD`.
pub fn encode(tokens: &[String], vocab: &Vocabulary, max_len: usize) -> Result<EncodedExample> {
    if max_len == 0 {
        return Err(Error::Value("max_len must be at least 1".into()));
    }
    if tokens.is_empty() {
        return Err(Error::EmptyInput("nothing to encode".into()));
    }
    let true_len = tokens.len().min(max_len);
    let mut ids = vec![PAD; max_len];
    let mut mask = vec![false; max_len];
    for (i, tok) in tokens.iter().take(true_len).enumerate() {
        ids[i] = vocab.id(tok);
        mask[i] = true;
    }
    Ok(EncodedExample {
        ids,
        mask,
        true_len,
        label: None,
    })
}

/// Parses the `<label>\t<text>` dataset format. Blank lines are skipped;
/// line numbers in errors are 1-based and count every line.
pub fn parse_dataset(content: &str) -> Result<Vec<RawExample>> {
    let mut out = Vec::new();
    for (n, line) in content.split('\n').enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        let line_no = n + 1;
        let (label, text) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: line_no,
            msg: "expected <label>\\t<text>".into(),
        })?;
        let label: i64 = label.trim().parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("label {label:?} is not an integer"),
        })?;
        if !(0..=1).contains(&label) {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("label {label} outside {{0,1}}"),
            });
        }
        let text = text.trim();
        if text.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                msg: "empty text".into(),
            });
        }
        out.push(RawExample {
            label: label as u8,
            text: text.to_string(),
        });
    }
    Ok(out)
}

pub fn load_dataset(path: &Path) -> Result<Vec<RawExample>> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&content)
}

pub fn format_dataset(examples: &[RawExample]) -> String {
    let mut out = String::new();
    for ex in examples {
        let _ = writeln!(out, "{}\t{}", ex.label, ex.text);
    }
    out
}

/// Fisher–Yates shuffle driven by a ChaCha8 stream: for `i` from `n-1` down
/// to 1, swap `i` with a uniform index in `0..=i`.
pub fn shuffle<T>(items: &mut [T], rng: &mut seed::Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

/// Shuffles by `seed` and cuts at `floor(n * train_ratio)`.
pub fn split<T: Clone>(examples: &[T], train_ratio: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(train_ratio > 0.0 && train_ratio < 1.0) {
        return Err(Error::Value(format!("train_ratio must lie in (0, 1), got {train_ratio}")));
    }
    if examples.len() < 2 {
        return Err(Error::Contract(format!(
            "need at least 2 examples to split, got {}",
            examples.len()
        )));
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    shuffle(&mut order, &mut seed::rng(seed, &[0x5911]));
    let n_train = (examples.len() as f64 * train_ratio).floor() as usize;
    let pick = |idx: &[usize]| idx.iter().map(|&i| examples[i].clone()).collect();
    Ok((pick(&order[..n_train]), pick(&order[n_train..])))
}

/// Consecutive chunks of `batch_size` (the last may be shorter), optionally
/// after a seeded shuffle.
pub fn batches<T>(items: &[T], batch_size: usize, shuffle_items: bool, seed: u64) -> Result<Vec<Vec<&T>>> {
    if batch_size == 0 {
        return Err(Error::Value("batch_size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    if shuffle_items {
        shuffle(&mut order, &mut seed::rng(seed, &[0xBA7C]));
    }
    Ok(order
        .chunks(batch_size)
        .map(|c| c.iter().map(|&i| &items[i]).collect())
        .collect())
}

//! Raw text to model-ready samples under a run configuration.

use crate::classifier::Sample;
use crate::config::RunConfig;
use crate::error::Result;
use crate::textdata::{self, RawExample, Vocabulary};

pub fn sample_from_text(text: &str, label: Option<u8>, vocab: &Vocabulary, cfg: &RunConfig) -> Result<Sample> {
    let tokens = textdata::tokenize(text, cfg.tokenizer)?;
    let mut ex = textdata::encode(&tokens, vocab, cfg.max_len)?;
    if let Some(l) = label {
        ex = ex.with_label(l);
    }
    Sample::new(ex, cfg.window, cfg.adjacency_mode)
}

pub fn samples(raw: &[RawExample], vocab: &Vocabulary, cfg: &RunConfig) -> Result<Vec<Sample>> {
    raw.iter()
        .map(|r| sample_from_text(&r.text, Some(r.label), vocab, cfg))
        .collect()
}

pub fn vocabulary(train: &[RawExample], cfg: &RunConfig) -> Result<Vocabulary> {
    textdata::build_vocab(train, cfg.tokenizer, cfg.min_freq, cfg.max_vocab)
}

//! Run configuration: a flat JSON object. Missing keys take their defaults,
//! unknown keys are rejected.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cograph::AdjacencyMode;
use crate::error::{Error, Result};
use crate::textdata::TokenizerMode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub max_len: usize,
    pub embed_dim: usize,
    pub kernel_sizes: Vec<usize>,
    pub filters_per_kernel: usize,
    pub gru_hidden: usize,
    pub heads: usize,
    pub bidirectional_gru: bool,
    pub gru_bias: bool,
    pub gcn_hidden: usize,
    pub gcn_bias: bool,
    /// Structural branch reads the same embedding table as the sequential one.
    pub shared_embedding: bool,
    pub dropout: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Per-epoch multiplicative learning-rate decay.
    pub lr_decay: f64,
    pub patience: usize,
    pub seed: u64,
    pub train_ratio: f64,
    pub window: usize,
    pub adjacency_mode: AdjacencyMode,
    pub tokenizer: TokenizerMode,
    pub min_freq: u64,
    pub max_vocab: usize,
    /// Per-example gradients of a batch computed on worker threads; results
    /// are accumulated in example order and match the serial mode bit for bit.
    pub parallel: bool,
    pub data_path: Option<String>,
    pub out_dir: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            max_len: 128,
            embed_dim: 128,
            kernel_sizes: vec![3, 4, 5],
            filters_per_kernel: 64,
            gru_hidden: 128,
            heads: 4,
            bidirectional_gru: false,
            gru_bias: true,
            gcn_hidden: 64,
            gcn_bias: false,
            shared_embedding: true,
            dropout: 0.5,
            batch_size: 32,
            epochs: 3,
            lr: 0.001,
            lr_decay: 0.9,
            patience: 3,
            seed: 42,
            train_ratio: 0.8,
            window: 3,
            adjacency_mode: AdjacencyMode::Raw,
            tokenizer: TokenizerMode::Whitespace,
            min_freq: 1,
            max_vocab: 50_000,
            parallel: false,
            data_path: None,
            out_dir: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |key: &str, why: &str| Err(Error::Config(format!("{key}: {why}")));
        let positive = [
            ("max_len", self.max_len),
            ("embed_dim", self.embed_dim),
            ("filters_per_kernel", self.filters_per_kernel),
            ("gru_hidden", self.gru_hidden),
            ("heads", self.heads),
            ("gcn_hidden", self.gcn_hidden),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("patience", self.patience),
        ];
        for (key, v) in positive {
            if v == 0 {
                return fail(key, "must be at least 1");
            }
        }
        if self.kernel_sizes.is_empty() || self.kernel_sizes.contains(&0) {
            return fail("kernel_sizes", "must be a non-empty list of positive widths");
        }
        let mut sorted = self.kernel_sizes.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.kernel_sizes.len() {
            return fail("kernel_sizes", "widths must be distinct");
        }
        if !self.gru_hidden.is_multiple_of(self.heads) {
            return fail("heads", "must divide gru_hidden");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout", "must lie in [0, 1)");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail("lr", "must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return fail("lr_decay", "must lie in (0, 1]");
        }
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            return fail("train_ratio", "must lie in (0, 1)");
        }
        if self.window < 2 {
            return fail("window", "must be at least 2");
        }
        if self.min_freq == 0 {
            return fail("min_freq", "must be at least 1");
        }
        if self.max_vocab < 2 {
            return fail("max_vocab", "must be at least 2");
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }
}

//! Hashed word n-gram features.
//!
//! Text is optionally lowercased and split into tokens on any character that
//! is neither alphanumeric nor an apostrophe. Every n-gram in the configured
//! range is hashed with 64-bit FNV-1a over the bytes
//! `hash_seed (little endian) || n (one byte) || tok_1 0x1f tok_2 ... tok_n`,
//! passed through the SplitMix64 finalizer (raw FNV low bits cluster on
//! similar tokens) and reduced modulo the power-of-two dimension. Counts are
//! L2-normalized.

use std::hash::Hasher;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use crate::data_model::SparseVector;
use crate::error::{Error, Result};
use crate::seeds::mix64;

pub const DEFAULT_DIMENSION: usize = 1 << 18;

const TOKEN_SEPARATOR: u8 = 0x1f;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturizerConfig {
    /// Inclusive n-gram length range, `1 <= lo <= hi <= 3`.
    pub ngram_range: (usize, usize),
    /// Number of hash buckets; a power of two.
    pub dimension: usize,
    pub hash_seed: u64,
    pub lowercase: bool,
}

impl Default for FeaturizerConfig {
    fn default() -> Self {
        Self {
            ngram_range: (1, 2),
            dimension: DEFAULT_DIMENSION,
            hash_seed: 0,
            lowercase: true,
        }
    }
}

impl FeaturizerConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.ngram_range;
        if !(1 <= lo && lo <= hi && hi <= 3) {
            return Err(Error::config(format!(
                "ngram_range must satisfy 1 <= lo <= hi <= 3, got ({lo}, {hi})"
            )));
        }
        if self.dimension < 2 || !self.dimension.is_power_of_two() {
            return Err(Error::config(format!(
                "dimension must be a power of two >= 2, got {}",
                self.dimension
            )));
        }
        if self.dimension > u32::MAX as usize + 1 {
            return Err(Error::config("dimension exceeds 2^32"));
        }
        Ok(())
    }

    pub fn featurizer(&self) -> Result<Featurizer> {
        self.validate()?;
        Ok(Featurizer {
            config: self.clone(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct Featurizer {
    config: FeaturizerConfig,
}

impl Featurizer {
    pub fn config(&self) -> &FeaturizerConfig {
        &self.config
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let text = if self.config.lowercase {
            text.to_lowercase()
        } else {
            text.to_string()
        };
        text.split(|c: char| !(c.is_alphanumeric() || c == '\''))
            .filter(|t| !t.is_empty())
            .map(str::to_string)
            .collect()
    }

    /// Bucket index of one n-gram.
    pub fn bucket(&self, gram: &[impl AsRef<str>]) -> u32 {
        let mut hasher = FnvHasher::default();
        hasher.write(&self.config.hash_seed.to_le_bytes());
        hasher.write(&[gram.len() as u8]);
        for (i, tok) in gram.iter().enumerate() {
            if i > 0 {
                hasher.write(&[TOKEN_SEPARATOR]);
            }
            hasher.write(tok.as_ref().as_bytes());
        }
        (mix64(hasher.finish()) & (self.config.dimension as u64 - 1)) as u32
    }

    /// L2-normalized hashed n-gram counts. Empty text gives the empty vector.
    pub fn featurize(&self, text: &str) -> SparseVector {
        let tokens = self.tokenize(text);
        let (lo, hi) = self.config.ngram_range;
        let mut pairs = Vec::new();
        for n in lo..=hi {
            for gram in tokens.windows(n) {
                pairs.push((self.bucket(gram), 1.0));
            }
        }
        let counts = SparseVector::from_pairs(pairs);
        let norm = counts.l2_norm();
        if norm == 0.0 {
            counts
        } else {
            counts.scaled(1.0 / norm)
        }
    }
}

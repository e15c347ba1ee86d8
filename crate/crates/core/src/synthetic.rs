//! Seeded text-like classification benchmark.
//!
//! Every class owns a block of topic tokens. A document draws a signal
//! strength uniformly from `[signal_min, signal_max]`; each of its tokens is a
//! topic token with that probability and a Zipf-distributed background token
//! otherwise. Topic tokens are Zipf-distributed within their block too, so a
//! long tail of rare class cues is only seen in a few documents. A topic draw
//! comes from a neighbouring class's block with probability `overlap`, so
//! adjacent classes are confusable and documents with weak signal are hard.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data_model::LabelSet;
use crate::error::{Error, Result};
use crate::harness::dataset::{Dataset, Record};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_classes: usize,
    pub n_examples: usize,
    pub background_vocab: usize,
    /// Zipf exponent of the background distribution.
    pub zipf_exponent: f64,
    pub topic_tokens_per_class: usize,
    /// Zipf exponent of topic tokens within a class block.
    pub topic_zipf_exponent: f64,
    pub min_length: usize,
    pub max_length: usize,
    pub signal_min: f64,
    pub signal_max: f64,
    pub overlap: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_classes: 5,
            n_examples: 10_000,
            background_vocab: 3_000,
            zipf_exponent: 1.0,
            topic_tokens_per_class: 1_000,
            topic_zipf_exponent: 1.5,
            min_length: 10,
            max_length: 30,
            signal_min: 0.15,
            signal_max: 0.60,
            overlap: 0.10,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::config("n_classes must be >= 2"));
        }
        if self.n_examples < self.n_classes {
            return Err(Error::config("n_examples must be >= n_classes"));
        }
        if self.background_vocab == 0 || self.topic_tokens_per_class == 0 {
            return Err(Error::config("vocabularies must be non-empty"));
        }
        if self.min_length == 0 || self.min_length > self.max_length {
            return Err(Error::config("need 1 <= min_length <= max_length"));
        }
        let unit = 0.0..=1.0;
        if !(unit.contains(&self.signal_min) && unit.contains(&self.signal_max) && self.signal_min <= self.signal_max) {
            return Err(Error::config("need 0 <= signal_min <= signal_max <= 1"));
        }
        if !unit.contains(&self.overlap) {
            return Err(Error::config("overlap must be in [0, 1]"));
        }
        for e in [self.zipf_exponent, self.topic_zipf_exponent] {
            if !(e >= 0.0 && e.is_finite()) {
                return Err(Error::config("Zipf exponents must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

/// Generates the dataset. Classes are named `c0..`, ids `syn-00000..`, and
/// labels cycle through the classes so the benchmark is balanced.
pub fn generate(config: &SyntheticConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let label_set = LabelSet::new((0..config.n_classes).map(|c| format!("c{c}")))?;
    let zipf = |size: usize, exponent: f64| {
        WeightedIndex::new((1..=size).map(|rank| (rank as f64).powf(-exponent)))
            .map_err(|e| Error::config(format!("token distribution: {e}")))
    };
    let background = zipf(config.background_vocab, config.zipf_exponent)?;
    let topic = zipf(config.topic_tokens_per_class, config.topic_zipf_exponent)?;

    let width = (config.n_examples - 1).to_string().len().max(5);
    let records = (0..config.n_examples)
        .map(|i| {
            let class = i % config.n_classes;
            let signal = rng.random_range(config.signal_min..=config.signal_max);
            let length = rng.random_range(config.min_length..=config.max_length);
            let tokens: Vec<String> = (0..length)
                .map(|_| {
                    if rng.random_bool(signal) {
                        let owner = if rng.random_bool(config.overlap) {
                            let step = if rng.random_bool(0.5) { 1 } else { config.n_classes - 1 };
                            (class + step) % config.n_classes
                        } else {
                            class
                        };
                        format!("k{owner}x{}", topic.sample(&mut rng))
                    } else {
                        format!("b{}", background.sample(&mut rng))
                    }
                })
                .collect();
            Record {
                id: format!("syn-{i:0width$}"),
                label: Some(class),
                text: tokens.join(" "),
            }
        })
        .collect();
    Dataset::new(label_set, records)
}

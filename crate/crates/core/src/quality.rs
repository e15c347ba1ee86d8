//! Entropy-based filtering and weighting of the accumulated training set.

use serde::{Deserialize, Serialize};

use crate::data_model::{one_hot, AggregatedLabel, Example, LabelIndex};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemSource {
    /// Human-labeled few-shot training data; never filtered or down-weighted.
    Gold,
    Worker,
    Student,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingItem {
    pub example: Example,
    pub target_label: LabelIndex,
    pub target_dist: Vec<f64>,
    pub source: ItemSource,
    pub weight: f64,
    pub entropy: f64,
}

impl TrainingItem {
    pub fn gold(example: Example, label: LabelIndex, n_labels: usize) -> Self {
        Self {
            example,
            target_label: label,
            target_dist: one_hot(label, n_labels),
            source: ItemSource::Gold,
            weight: 1.0,
            entropy: 0.0,
        }
    }

    pub fn annotated(example: Example, label: AggregatedLabel, source: ItemSource) -> Self {
        Self {
            example,
            target_label: label.label,
            target_dist: label.dist,
            source,
            weight: 1.0,
            entropy: label.entropy,
        }
    }

    pub fn is_gold(&self) -> bool {
        self.source == ItemSource::Gold
    }
}

/// Fraction of non-gold items kept by [`instance_threshold`], in `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Tau(f64);

impl Tau {
    pub const ALL: Tau = Tau(1.0);

    pub fn new(value: f64) -> Result<Self> {
        if value > 0.0 && value <= 1.0 {
            Ok(Tau(value))
        } else {
            Err(Error::config(format!("tau must lie in (0, 1], got {value}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// `ceil(tau * count)`, robust to representation error such as
    /// `0.3 * 10 = 3.0000000000000004`.
    pub fn kept_count(self, count: usize) -> usize {
        let exact = self.0 * count as f64;
        let rounded = exact.round();
        let k = if (exact - rounded).abs() <= 1e-9 * exact.max(1.0) {
            rounded
        } else {
            exact.ceil()
        };
        (k as usize).min(count)
    }
}

impl Default for Tau {
    fn default() -> Self {
        Tau::ALL
    }
}

impl TryFrom<f64> for Tau {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Tau::new(value)
    }
}

impl From<Tau> for f64 {
    fn from(t: Tau) -> f64 {
        t.0
    }
}

/// Keeps every gold item plus the `ceil(tau * m)` non-gold items with the
/// lowest annotation entropy (ties to the smaller example id), where `m` is
/// the number of non-gold items. Input order is preserved.
pub fn instance_threshold(items: Vec<TrainingItem>, tau: Tau) -> Vec<TrainingItem> {
    let mut ranked: Vec<usize> = (0..items.len()).filter(|&i| !items[i].is_gold()).collect();
    let keep = tau.kept_count(ranked.len());
    if keep == ranked.len() {
        return items;
    }
    ranked.sort_by(|&a, &b| {
        items[a]
            .entropy
            .total_cmp(&items[b].entropy)
            .then_with(|| items[a].example.id.cmp(&items[b].example.id))
    });
    let mut kept = vec![false; items.len()];
    for &i in &ranked[..keep] {
        kept[i] = true;
    }
    items
        .into_iter()
        .zip(kept)
        .filter(|(item, k)| item.is_gold() || *k)
        .map(|(item, _)| item)
        .collect()
}

/// Sets each non-gold item's weight to `1 - entropy / ln N`, clamped to
/// `[0, 1]`. Gold items keep weight 1.
pub fn instance_weight(items: Vec<TrainingItem>) -> Vec<TrainingItem> {
    items
        .into_iter()
        .map(|mut item| {
            if !item.is_gold() {
                let max_entropy = (item.target_dist.len() as f64).ln();
                item.weight = (1.0 - item.entropy / max_entropy).clamp(0.0, 1.0);
            }
            item
        })
        .collect()
}

//! Domain types and the probability helpers every other module builds on.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type LabelIndex = usize;

/// Lower clamp applied to `q` inside [`kl_divergence`].
pub const KL_EPSILON: f64 = 1e-12;

/// Tolerance on the total mass of a probability vector.
pub const DIST_TOLERANCE: f64 = 1e-6;

/// Ordered, duplicate-free label names. Indices `0..len()` are stable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LabelSet {
    names: Vec<String>,
}

impl LabelSet {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.len() < 2 {
            return Err(Error::invalid(format!(
                "a label set needs at least 2 labels, got {}",
                names.len()
            )));
        }
        let mut seen = HashSet::new();
        for name in &names {
            if name.is_empty() {
                return Err(Error::invalid("empty label name"));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::invalid(format!("duplicate label name `{name}`")));
            }
        }
        Ok(Self { names })
    }

    /// Labels named `"0"`, `"1"`, ... `"n-1"`.
    pub fn numbered(n: usize) -> Result<Self> {
        Self::new((0..n).map(|i| i.to_string()))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, index: LabelIndex) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }

    pub fn index_of(&self, name: &str) -> Option<LabelIndex> {
        self.names.iter().position(|n| n == name)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

impl TryFrom<Vec<String>> for LabelSet {
    type Error = Error;

    fn try_from(names: Vec<String>) -> Result<Self> {
        LabelSet::new(names)
    }
}

impl From<LabelSet> for Vec<String> {
    fn from(set: LabelSet) -> Self {
        set.names
    }
}

/// Sparse feature vector with strictly increasing indices.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl SparseVector {
    /// Builds a vector from unordered pairs; duplicate indices are summed and
    /// explicit zeros dropped.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (u32, f64)>) -> Self {
        let mut pairs: Vec<(u32, f64)> = pairs.into_iter().collect();
        pairs.sort_by_key(|&(i, _)| i);
        let mut indices = Vec::with_capacity(pairs.len());
        let mut values: Vec<f64> = Vec::with_capacity(pairs.len());
        for (i, v) in pairs {
            if indices.last() == Some(&i) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(i);
                values.push(v);
            }
        }
        let mut out = Self { indices, values };
        out.retain_nonzero();
        out
    }

    fn retain_nonzero(&mut self) {
        if self.values.iter().all(|&v| v != 0.0) {
            return;
        }
        let (indices, values) = self
            .indices
            .iter()
            .zip(&self.values)
            .filter(|(_, &v)| v != 0.0)
            .map(|(&i, &v)| (i, v))
            .unzip();
        self.indices = indices;
        self.values = values;
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    /// Largest index plus one, or 0 for the empty vector.
    pub fn min_dimension(&self) -> usize {
        self.indices.last().map_or(0, |&i| i as usize + 1)
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = Self {
            indices: self.indices.clone(),
            values: self.values.iter().map(|v| v * factor).collect(),
        };
        out.retain_nonzero();
        out
    }
}

/// One pool item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub text: Option<String>,
    pub features: SparseVector,
    /// Hidden gold label; read only by gold-label schemes, simulated workers
    /// and telemetry.
    pub gold: Option<LabelIndex>,
}

impl Example {
    pub fn new(id: impl Into<String>, features: SparseVector) -> Self {
        Self {
            id: id.into(),
            text: None,
            features,
            gold: None,
        }
    }

    pub fn with_text(mut self, text: impl Into<String>) -> Self {
        self.text = Some(text.into());
        self
    }

    pub fn with_gold(mut self, gold: LabelIndex) -> Self {
        self.gold = Some(gold);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub example: Example,
    pub label: LabelIndex,
}

impl LabeledExample {
    /// Pairs an example with `label`, also recording it as the example's gold.
    pub fn new(example: Example, label: LabelIndex) -> Self {
        Self {
            example: example.with_gold(label),
            label,
        }
    }
}

/// One worker's verdict on one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub worker_id: String,
    pub label: LabelIndex,
    pub logits: Vec<f64>,
}

impl Annotation {
    /// The label is always the tie-broken argmax of the logits.
    pub fn from_logits(worker_id: impl Into<String>, logits: Vec<f64>) -> Result<Self> {
        let label = argmax_tiebreak(&logits)?;
        Ok(Self {
            worker_id: worker_id.into(),
            label,
            logits,
        })
    }
}

/// Consensus label with the distribution it was read from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedLabel {
    pub label: LabelIndex,
    pub dist: Vec<f64>,
    /// Shannon entropy of `dist` in nats.
    pub entropy: f64,
}

impl AggregatedLabel {
    pub fn from_dist(dist: Vec<f64>) -> Result<Self> {
        let entropy = entropy(&dist)?;
        let label = argmax_tiebreak(&dist)?;
        Ok(Self {
            label,
            dist,
            entropy,
        })
    }
}

/// The four disjoint partitions an experiment works over.
#[derive(Debug, Clone, Default)]
pub struct Pool {
    pub unlabeled: Vec<Example>,
    pub gold_train: Vec<LabeledExample>,
    pub gold_dev: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
}

impl Pool {
    pub fn new(
        unlabeled: Vec<Example>,
        gold_train: Vec<LabeledExample>,
        gold_dev: Vec<LabeledExample>,
        test: Vec<LabeledExample>,
    ) -> Result<Self> {
        let pool = Self {
            unlabeled,
            gold_train,
            gold_dev,
            test,
        };
        pool.validate()?;
        Ok(pool)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        let labeled = self
            .gold_train
            .iter()
            .chain(&self.gold_dev)
            .chain(&self.test);
        for item in labeled {
            if item.example.gold.is_some_and(|g| g != item.label) {
                return Err(Error::invalid(format!(
                    "example `{}` carries a gold label that disagrees with its pair label",
                    item.example.id
                )));
            }
            if !ids.insert(item.example.id.as_str()) {
                return Err(Error::invalid(format!(
                    "example id `{}` appears in more than one place",
                    item.example.id
                )));
            }
        }
        for ex in &self.unlabeled {
            if !ids.insert(ex.id.as_str()) {
                return Err(Error::invalid(format!(
                    "example id `{}` appears in more than one place",
                    ex.id
                )));
            }
        }
        Ok(())
    }
}

fn ensure_finite(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::invalid("empty vector"));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite value {v}")));
    }
    Ok(())
}

fn ensure_distribution(dist: &[f64]) -> Result<()> {
    ensure_finite(dist)?;
    if let Some(p) = dist.iter().find(|&&p| p < 0.0) {
        return Err(Error::invalid(format!("negative probability {p}")));
    }
    let total: f64 = dist.iter().sum();
    if (total - 1.0).abs() > DIST_TOLERANCE {
        return Err(Error::invalid(format!(
            "probabilities sum to {total}, expected 1"
        )));
    }
    Ok(())
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    ensure_finite(logits)?;
    Ok(softmax_unchecked(logits))
}

/// Softmax over values already known to be finite and non-empty.
pub(crate) fn softmax_unchecked(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for p in &mut out {
        *p /= total;
    }
    out
}

/// Log-softmax, computed as `z - max - ln(sum(exp(z - max)))`.
pub(crate) fn log_softmax_unchecked(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - max - lse).collect()
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(dist: &[f64]) -> Result<f64> {
    ensure_distribution(dist)?;
    Ok(entropy_unchecked(dist))
}

pub(crate) fn entropy_unchecked(dist: &[f64]) -> f64 {
    let h: f64 = dist
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum();
    h.max(0.0)
}

/// Index of the maximum; exact ties go to the smallest index.
pub fn argmax_tiebreak(values: &[f64]) -> Result<LabelIndex> {
    ensure_finite(values)?;
    Ok(argmax_unchecked(values))
}

pub(crate) fn argmax_unchecked(values: &[f64]) -> LabelIndex {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// `KL(p || q)` in nats with `q` clamped below by [`KL_EPSILON`].
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    ensure_distribution(p)?;
    ensure_distribution(q)?;
    let kl: f64 = p
        .iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi.max(KL_EPSILON)).ln())
        .sum();
    Ok(kl.max(0.0))
}

/// One-hot distribution of length `n`.
pub fn one_hot(label: LabelIndex, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[label] = 1.0;
    v
}

/// Draws exactly `shots` examples per class without replacement.
///
/// Both the sample and the remainder keep the input order.
pub fn sample_few_shot(
    labeled: &[LabeledExample],
    label_set: &LabelSet,
    shots: usize,
    seed: u64,
) -> Result<(Vec<LabeledExample>, Vec<LabeledExample>)> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); label_set.len()];
    for (i, item) in labeled.iter().enumerate() {
        let bucket = by_class.get_mut(item.label).ok_or_else(|| {
            Error::invalid(format!(
                "example `{}` has label index {} outside a {}-label set",
                item.example.id,
                item.label,
                label_set.len()
            ))
        })?;
        bucket.push(i);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![false; labeled.len()];
    for (class, members) in by_class.iter_mut().enumerate() {
        if members.len() < shots {
            return Err(Error::InsufficientData {
                class: label_set.name(class).unwrap_or_default().to_string(),
                needed: shots,
                available: members.len(),
            });
        }
        members.shuffle(&mut rng);
        for &i in &members[..shots] {
            chosen[i] = true;
        }
    }

    let mut sample = Vec::with_capacity(shots * label_set.len());
    let mut rest = Vec::with_capacity(labeled.len() - sample.capacity());
    for (item, picked) in labeled.iter().zip(chosen) {
        if picked {
            sample.push(item.clone());
        } else {
            rest.push(item.clone());
        }
    }
    Ok((sample, rest))
}

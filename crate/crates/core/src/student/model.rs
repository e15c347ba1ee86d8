use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use fnv::FnvHashMap;

use crate::data_model::{
    argmax_unchecked, log_softmax_unchecked, softmax_unchecked, Example, LabelIndex, LabelSet,
    LabeledExample, SparseVector,
};
use crate::error::{Error, Result};
use crate::quality::TrainingItem;

use super::featurizer::FeaturizerConfig;

/// Below this the lazily applied L2 decay is folded back into the weights.
const MIN_SCALE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Cross-entropy against `target_label`.
    #[default]
    HardCe,
    /// `KL(target_dist || softmax(logits))`.
    SoftKl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub loss: LossMode,
    /// Scale each item's loss by its `weight`.
    pub use_weights: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            learning_rate: 5e-2,
            l2: 1e-4,
            loss: LossMode::HardCe,
            use_weights: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::config("l2 must be non-negative"));
        }
        Ok(())
    }
}

/// Linear softmax classifier over hashed features.
///
/// Logits are `W x + b`. `W` is stored feature-major as `scale * raw` so that
/// L2 decay costs O(1) per step.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentModel {
    label_set: LabelSet,
    featurizer: FeaturizerConfig,
    raw: Vec<f64>,
    scale: f64,
    bias: Vec<f64>,
    trained: bool,
}

impl StudentModel {
    /// Zero-initialized, untrained model.
    pub fn untrained(label_set: LabelSet, featurizer: FeaturizerConfig) -> Result<Self> {
        featurizer.validate()?;
        let n = label_set.len();
        Ok(Self {
            raw: vec![0.0; featurizer.dimension * n],
            scale: 1.0,
            bias: vec![0.0; n],
            label_set,
            featurizer,
            trained: false,
        })
    }

    /// Trained model with explicit parameters, one weight row per label.
    pub fn from_parameters(
        label_set: LabelSet,
        featurizer: FeaturizerConfig,
        rows: &[Vec<f64>],
        bias: Vec<f64>,
    ) -> Result<Self> {
        let mut model = Self::untrained(label_set, featurizer)?;
        let n = model.n_labels();
        let dim = model.dimension();
        if rows.len() != n || bias.len() != n {
            return Err(Error::invalid(format!(
                "expected {n} weight rows and biases, got {} and {}",
                rows.len(),
                bias.len()
            )));
        }
        for (c, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::invalid(format!(
                    "weight row {c} has length {}, expected {dim}",
                    row.len()
                )));
            }
            for (f, &w) in row.iter().enumerate() {
                model.raw[f * n + c] = w;
            }
        }
        if bias.iter().chain(&model.raw).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite parameter"));
        }
        model.bias = bias;
        model.trained = true;
        Ok(model)
    }

    /// A model that always predicts `label`: zero weights, bias one-hot.
    pub fn constant(label_set: LabelSet, featurizer: FeaturizerConfig, label: LabelIndex) -> Result<Self> {
        let mut model = Self::untrained(label_set, featurizer)?;
        if label >= model.n_labels() {
            return Err(Error::invalid(format!("label {label} out of range")));
        }
        model.bias[label] = 1.0;
        model.trained = true;
        Ok(model)
    }

    pub fn label_set(&self) -> &LabelSet {
        &self.label_set
    }

    pub fn featurizer_config(&self) -> &FeaturizerConfig {
        &self.featurizer
    }

    pub fn n_labels(&self) -> usize {
        self.label_set.len()
    }

    pub fn dimension(&self) -> usize {
        self.featurizer.dimension
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    /// `N * F + N`.
    pub fn parameter_count(&self) -> usize {
        self.raw.len() + self.bias.len()
    }

    pub fn weight(&self, label: LabelIndex, feature: usize) -> f64 {
        self.scale * self.raw[feature * self.n_labels() + label]
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// Dense weight row for one label.
    pub fn weight_row(&self, label: LabelIndex) -> Vec<f64> {
        (0..self.dimension()).map(|f| self.weight(label, f)).collect()
    }

    fn check_features(&self, features: &SparseVector, id: &str) -> Result<()> {
        if features.min_dimension() > self.dimension() {
            return Err(Error::invalid(format!(
                "example `{id}` has feature index beyond dimension {}",
                self.dimension()
            )));
        }
        Ok(())
    }

    /// Logits without the trained-state check.
    pub(crate) fn logits_unchecked(&self, features: &SparseVector) -> Vec<f64> {
        let n = self.n_labels();
        let mut acc = vec![0.0; n];
        for (f, x) in features.iter() {
            let row = &self.raw[f as usize * n..(f as usize + 1) * n];
            for (a, &w) in acc.iter_mut().zip(row) {
                *a += w * x;
            }
        }
        acc.iter()
            .zip(&self.bias)
            .map(|(&a, &b)| self.scale * a + b)
            .collect()
    }

    pub fn logits(&self, features: &SparseVector) -> Result<Vec<f64>> {
        self.ensure_trained()?;
        self.check_features(features, "<features>")?;
        Ok(self.logits_unchecked(features))
    }

    fn ensure_trained(&self) -> Result<()> {
        if self.trained {
            Ok(())
        } else {
            Err(Error::InvalidState("student model has not been trained".into()))
        }
    }

    pub fn predict_logits(&self, examples: &[Example]) -> Result<Vec<Vec<f64>>> {
        self.ensure_trained()?;
        examples
            .iter()
            .map(|ex| {
                self.check_features(&ex.features, &ex.id)?;
                Ok(self.logits_unchecked(&ex.features))
            })
            .collect()
    }

    pub fn predict(&self, examples: &[Example]) -> Result<Vec<LabelIndex>> {
        Ok(self
            .predict_logits(examples)?
            .iter()
            .map(|z| argmax_unchecked(z))
            .collect())
    }

    fn fold_scale(&mut self) {
        if self.scale != 1.0 {
            let s = self.scale;
            self.raw.iter_mut().for_each(|w| *w *= s);
            self.scale = 1.0;
        }
    }

    fn l2_squared(&self) -> f64 {
        self.scale * self.scale * self.raw.iter().map(|w| w * w).sum::<f64>()
    }

    /// One plain gradient step: `W <- W - lr (G + l2 W)`, `b <- b - lr g_b`.
    fn apply(&mut self, grad: &Gradient, learning_rate: f64) {
        let decay = 1.0 - learning_rate * grad.l2;
        if decay <= 0.0 {
            // Step so large the decay zeroes W outright.
            self.fold_scale();
            self.raw.iter_mut().for_each(|w| *w *= decay);
        } else {
            self.scale *= decay;
        }
        if self.scale < MIN_SCALE {
            self.fold_scale();
        }
        let n = self.n_labels();
        let step = learning_rate / self.scale;
        for (&f, g) in &grad.rows {
            let row = &mut self.raw[f as usize * n..(f as usize + 1) * n];
            for (w, &gc) in row.iter_mut().zip(g) {
                *w -= step * gc;
            }
        }
        for (b, &gb) in self.bias.iter_mut().zip(&grad.bias) {
            *b -= learning_rate * gb;
        }
    }

    pub(crate) fn raw_parts(&self) -> (&[f64], f64) {
        (&self.raw, self.scale)
    }
}

/// Gradient of the mini-batch objective
/// `(1/|B|) sum_i w_i loss_i + (l2/2) ||W||^2`.
///
/// The data term is kept sparse by feature; the L2 term is implicit and
/// evaluated against the model on demand.
#[derive(Debug, Clone)]
pub struct Gradient {
    rows: FnvHashMap<u32, Vec<f64>>,
    bias: Vec<f64>,
    l2: f64,
}

impl Gradient {
    /// Full derivative with respect to `W[label][feature]`.
    pub fn weight(&self, model: &StudentModel, label: LabelIndex, feature: usize) -> f64 {
        let data = self
            .rows
            .get(&(feature as u32))
            .map_or(0.0, |row| row[label]);
        data + self.l2 * model.weight(label, feature)
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// Euclidean norm over every parameter.
    pub fn norm(&self, model: &StudentModel) -> f64 {
        let n = model.n_labels();
        let mut total: f64 = self.bias.iter().map(|g| g * g).sum();
        for f in 0..model.dimension() {
            for c in 0..n {
                let g = self.weight(model, c, f);
                total += g * g;
            }
        }
        total.sqrt()
    }
}

fn target_of<'a>(item: &'a TrainingItem, loss: LossMode, scratch: &'a mut [f64]) -> &'a [f64] {
    match loss {
        LossMode::HardCe => {
            scratch.iter_mut().for_each(|t| *t = 0.0);
            scratch[item.target_label] = 1.0;
            scratch
        }
        LossMode::SoftKl => &item.target_dist,
    }
}

fn item_weight(item: &TrainingItem, cfg: &TrainConfig) -> f64 {
    if cfg.use_weights {
        item.weight
    } else {
        1.0
    }
}

fn gradient_over<'a>(
    model: &StudentModel,
    batch: impl ExactSizeIterator<Item = &'a TrainingItem>,
    cfg: &TrainConfig,
) -> Gradient {
    let n = model.n_labels();
    let inv = 1.0 / batch.len().max(1) as f64;
    let mut rows: FnvHashMap<u32, Vec<f64>> = FnvHashMap::default();
    let mut bias = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    let mut delta = vec![0.0; n];
    for item in batch {
        let q = softmax_unchecked(&model.logits_unchecked(&item.example.features));
        let w = item_weight(item, cfg) * inv;
        let t = target_of(item, cfg.loss, &mut scratch);
        // d loss / d logits = q - t for both CE and KL.
        for ((d, &qc), &tc) in delta.iter_mut().zip(&q).zip(t) {
            *d = w * (qc - tc);
        }
        for (b, &d) in bias.iter_mut().zip(&delta) {
            *b += d;
        }
        for (f, x) in item.example.features.iter() {
            let row = rows.entry(f).or_insert_with(|| vec![0.0; n]);
            for (g, &d) in row.iter_mut().zip(&delta) {
                *g += d * x;
            }
        }
    }
    Gradient {
        rows,
        bias,
        l2: cfg.l2,
    }
}

/// Analytic gradient of the configured loss on `batch`.
pub fn gradient(model: &StudentModel, batch: &[TrainingItem], cfg: &TrainConfig) -> Gradient {
    gradient_over(model, batch.iter(), cfg)
}

/// Value of the objective whose gradient [`gradient`] returns.
pub fn objective(model: &StudentModel, batch: &[TrainingItem], cfg: &TrainConfig) -> f64 {
    let n = model.n_labels();
    let inv = 1.0 / batch.len().max(1) as f64;
    let mut scratch = vec![0.0; n];
    let mut data = 0.0;
    for item in batch {
        let log_q = log_softmax_unchecked(&model.logits_unchecked(&item.example.features));
        let t = target_of(item, cfg.loss, &mut scratch);
        let loss: f64 = t
            .iter()
            .zip(&log_q)
            .filter(|(&tc, _)| tc > 0.0)
            .map(|(&tc, &lq)| tc * (tc.ln() - lq))
            .sum();
        data += item_weight(item, cfg) * inv * loss;
    }
    data + 0.5 * cfg.l2 * model.l2_squared()
}

fn validate_items(items: &[TrainingItem], model: &StudentModel, cfg: &TrainConfig) -> Result<()> {
    if items.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let n = model.n_labels();
    for item in items {
        let id = &item.example.id;
        if item.target_label >= n || item.target_dist.len() != n {
            return Err(Error::invalid(format!(
                "training item `{id}` does not match the {n}-label set"
            )));
        }
        if !(item.weight.is_finite() && item.weight >= 0.0) {
            return Err(Error::invalid(format!("training item `{id}` has invalid weight")));
        }
        model.check_features(&item.example.features, id)?;
    }
    if cfg.loss == LossMode::HardCe {
        let first = items[0].target_label;
        if items.iter().all(|i| i.target_label == first) {
            return Err(Error::DegenerateTraining(format!(
                "all {} items carry label `{}`",
                items.len(),
                model.label_set.name(first).unwrap_or_default()
            )));
        }
    }
    Ok(())
}

fn dev_accuracy(model: &StudentModel, dev: &[LabeledExample]) -> f64 {
    let correct = dev
        .iter()
        .filter(|d| argmax_unchecked(&model.logits_unchecked(&d.example.features)) == d.label)
        .count();
    correct as f64 / dev.len() as f64
}

/// Trains a fresh zero-initialized model with shuffled mini-batch gradient
/// descent.
///
/// When `dev` is given and non-empty, the parameters from the epoch with the
/// best dev accuracy are returned (later epochs win ties).
pub fn train_student(
    items: &[TrainingItem],
    label_set: &LabelSet,
    featurizer: &FeaturizerConfig,
    cfg: &TrainConfig,
    seed: u64,
    dev: Option<&[LabeledExample]>,
) -> Result<StudentModel> {
    cfg.validate()?;
    let mut model = StudentModel::untrained(label_set.clone(), featurizer.clone())?;
    validate_items(items, &model, cfg)?;
    let dev = dev.filter(|d| !d.is_empty());
    if let Some(dev) = dev {
        for d in dev {
            model.check_features(&d.example.features, &d.example.id)?;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut best: Option<(f64, Vec<f64>, f64, Vec<f64>)> = None;

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let grad = gradient_over(&model, chunk.iter().map(|&i| &items[i]), cfg);
            model.apply(&grad, cfg.learning_rate);
        }
        if let Some(dev) = dev {
            let acc = dev_accuracy(&model, dev);
            if best.as_ref().is_none_or(|(b, ..)| acc >= *b) {
                best = Some((acc, model.raw.clone(), model.scale, model.bias.clone()));
            }
        }
    }
    if let Some((_, raw, scale, bias)) = best {
        model.raw = raw;
        model.scale = scale;
        model.bias = bias;
    }
    model.fold_scale();
    model.trained = true;
    Ok(model)
}

//! Confusion-matrix annotators.
//!
//! For an example with gold class `y` the worker emits
//! `logits_j = (ln(confusion[y][j] + eps) + g_j) / temperature` with
//! independent `g_j ~ Gumbel(0, 1)`. By the Gumbel-max property the argmax is
//! distributed as `confusion[y]`, and the logits stay informative about how
//! close the runner-up was.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gumbel};
use serde::{Deserialize, Serialize};

use crate::data_model::{Annotation, Example, LabelIndex, LabelSet};
use crate::error::{Error, Result};

use super::Worker;

/// Added inside the log so zero confusion entries stay finite.
pub const LOG_EPSILON: f64 = 1e-9;

const ROW_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulatedWorkerSpec {
    /// Row-stochastic `N x N`; row = gold class, column = predicted class.
    pub confusion: Vec<Vec<f64>>,
    pub temperature: f64,
    pub seed: u64,
}

impl SimulatedWorkerSpec {
    pub fn new(confusion: Vec<Vec<f64>>, temperature: f64, seed: u64) -> Result<Self> {
        let spec = Self {
            confusion,
            temperature,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `accuracy` on the diagonal, the remainder spread evenly off it.
    pub fn symmetric(n_labels: usize, accuracy: f64, temperature: f64, seed: u64) -> Result<Self> {
        if n_labels < 2 || !(0.0..=1.0).contains(&accuracy) {
            return Err(Error::config(format!(
                "symmetric worker needs N >= 2 and accuracy in [0, 1], got N={n_labels}, accuracy={accuracy}"
            )));
        }
        let off = (1.0 - accuracy) / (n_labels - 1) as f64;
        let confusion = (0..n_labels)
            .map(|y| (0..n_labels).map(|j| if j == y { accuracy } else { off }).collect())
            .collect();
        Self::new(confusion, temperature, seed)
    }

    /// Mistakes only ever turn class `y` into `y + 1` (mod N), with
    /// probability `(1 - accuracy) * class_error_weights[y]`. Weights must
    /// average 1, so `accuracy` is the accuracy under a uniform class prior.
    /// Committees built this way share their biases.
    pub fn directional(
        n_labels: usize,
        accuracy: f64,
        class_error_weights: &[f64],
        temperature: f64,
        seed: u64,
    ) -> Result<Self> {
        if n_labels < 2 || !(0.0..=1.0).contains(&accuracy) {
            return Err(Error::config(format!(
                "directional worker needs N >= 2 and accuracy in [0, 1], got N={n_labels}, accuracy={accuracy}"
            )));
        }
        if class_error_weights.len() != n_labels {
            return Err(Error::config(format!(
                "{} class error weights for {n_labels} labels",
                class_error_weights.len()
            )));
        }
        let mean = class_error_weights.iter().sum::<f64>() / n_labels as f64;
        if class_error_weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) || (mean - 1.0).abs() > ROW_TOLERANCE {
            return Err(Error::config(format!(
                "class error weights must be non-negative with mean 1, got mean {mean}"
            )));
        }
        let confusion = (0..n_labels)
            .map(|y| {
                let error = (1.0 - accuracy) * class_error_weights[y];
                let mut row = vec![0.0; n_labels];
                row[y] = 1.0 - error;
                row[(y + 1) % n_labels] = error;
                row
            })
            .collect();
        Self::new(confusion, temperature, seed).map_err(|_| {
            Error::config(format!("accuracy {accuracy} is too low for these class error weights"))
        })
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.confusion.len();
        if n < 2 {
            return Err(Error::config("confusion matrix needs at least 2 rows"));
        }
        for (y, row) in self.confusion.iter().enumerate() {
            if row.len() != n {
                return Err(Error::config(format!("confusion row {y} has {} entries, expected {n}", row.len())));
            }
            if row.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
                return Err(Error::config(format!("confusion row {y} has a negative or non-finite entry")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > ROW_TOLERANCE {
                return Err(Error::config(format!("confusion row {y} sums to {total}")));
            }
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config("temperature must be positive"));
        }
        Ok(())
    }

    pub fn n_labels(&self) -> usize {
        self.confusion.len()
    }

    /// Expected accuracy under a class prior.
    pub fn expected_accuracy(&self, prior: &[f64]) -> f64 {
        prior.iter().enumerate().map(|(y, p)| p * self.confusion[y][y]).sum()
    }
}

/// One draw of worker logits for an example of class `gold`.
pub fn simulate_logits(spec: &SimulatedWorkerSpec, gold: LabelIndex, rng: &mut impl Rng) -> Vec<f64> {
    let gumbel = Gumbel::new(0.0, 1.0).expect("unit Gumbel");
    spec.confusion[gold]
        .iter()
        .map(|&p| ((p + LOG_EPSILON).ln() + gumbel.sample(rng)) / spec.temperature)
        .collect()
}

/// Stateful simulated worker. Its RNG advances with every annotation, so the
/// spec and the sequence of examples it is shown determine all logits.
#[derive(Debug, Clone)]
pub struct SimulatedWorker {
    id: String,
    spec: SimulatedWorkerSpec,
    rng: ChaCha8Rng,
}

impl SimulatedWorker {
    pub fn new(id: impl Into<String>, spec: SimulatedWorkerSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            id: id.into(),
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
            spec,
        })
    }

    pub fn spec(&self) -> &SimulatedWorkerSpec {
        &self.spec
    }
}

impl Worker for SimulatedWorker {
    fn id(&self) -> &str {
        &self.id
    }

    fn annotate_batch(&mut self, examples: &[Example], labels: &LabelSet) -> Result<Vec<Annotation>> {
        if examples.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        if labels.len() != self.spec.n_labels() {
            return Err(Error::config(format!(
                "worker `{}` simulates {} labels but the task has {}",
                self.id,
                self.spec.n_labels(),
                labels.len()
            )));
        }
        examples
            .iter()
            .map(|ex| {
                let gold = ex.gold.filter(|&g| g < labels.len()).ok_or_else(|| {
                    Error::invalid(format!("simulated worker needs a gold label for example `{}`", ex.id))
                })?;
                let logits = simulate_logits(&self.spec, gold, &mut self.rng);
                Annotation::from_logits(self.id.clone(), logits)
            })
            .collect()
    }
}

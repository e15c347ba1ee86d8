//! Choosing the next batch from the unlabeled pool.

use std::cmp::Ordering;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data_model::{entropy_unchecked, softmax_unchecked, Example};
use crate::error::{Error, Result};
use crate::student::StudentModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcquisitionKind {
    #[default]
    Random,
    /// Highest entropy of the student's predictive distribution.
    Entropy,
    /// Smallest maximum raw logit.
    LeastConfident,
}

impl AcquisitionKind {
    pub fn needs_student(self) -> bool {
        !matches!(self, AcquisitionKind::Random)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AcquisitionKind::Random => "random",
            AcquisitionKind::Entropy => "entropy",
            AcquisitionKind::LeastConfident => "least_confident",
        }
    }
}

impl std::str::FromStr for AcquisitionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Self::Random),
            "entropy" => Ok(Self::Entropy),
            "least_confident" => Ok(Self::LeastConfident),
            other => Err(Error::config(format!("unknown acquisition function `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcquisitionFunction {
    pub kind: AcquisitionKind,
    pub batch_size: usize,
}

/// Positions into the pool slice that was scored, in selection order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Selection {
    pub indices: Vec<usize>,
    /// Fewer than the requested batch size were available.
    pub truncated: bool,
}

impl Selection {
    pub fn examples<'a>(&self, pool: &'a [Example]) -> Vec<&'a Example> {
        self.indices.iter().map(|&i| &pool[i]).collect()
    }
}

pub fn acquire_random(pool: &[Example], batch_size: usize, seed: u64) -> Selection {
    let take = batch_size.min(pool.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Selection {
        indices: rand::seq::index::sample(&mut rng, pool.len(), take).into_vec(),
        truncated: batch_size > pool.len(),
    }
}

/// Entropy of `softmax(logits)` per example.
pub fn entropy_scores(logits: &[Vec<f64>]) -> Vec<f64> {
    logits.iter().map(|z| entropy_unchecked(&softmax_unchecked(z))).collect()
}

/// Maximum raw logit per example.
pub fn max_logit_scores(logits: &[Vec<f64>]) -> Vec<f64> {
    logits.iter().map(|z| z.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect()
}

/// Top `batch_size` positions under `better` (which must order the more
/// wanted score first), ties to the smaller example id.
fn rank(pool: &[Example], scores: &[f64], batch_size: usize, better: impl Fn(f64, f64) -> Ordering) -> Selection {
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_unstable_by(|&a, &b| better(scores[a], scores[b]).then_with(|| pool[a].id.cmp(&pool[b].id)));
    order.truncate(batch_size);
    Selection {
        indices: order,
        truncated: batch_size > pool.len(),
    }
}

/// Highest-entropy examples first.
pub fn select_by_entropy(pool: &[Example], logits: &[Vec<f64>], batch_size: usize) -> Selection {
    let scores = entropy_scores(logits);
    rank(pool, &scores, batch_size, |a, b| b.total_cmp(&a))
}

/// Smallest-maximum-logit examples first.
pub fn select_least_confident(pool: &[Example], logits: &[Vec<f64>], batch_size: usize) -> Selection {
    let scores = max_logit_scores(logits);
    rank(pool, &scores, batch_size, |a, b| a.total_cmp(&b))
}

pub fn acquire_entropy(student: &StudentModel, pool: &[Example], batch_size: usize) -> Result<Selection> {
    let logits = student.predict_logits(pool)?;
    Ok(select_by_entropy(pool, &logits, batch_size))
}

pub fn acquire_least_confident(student: &StudentModel, pool: &[Example], batch_size: usize) -> Result<Selection> {
    let logits = student.predict_logits(pool)?;
    Ok(select_least_confident(pool, &logits, batch_size))
}

/// Runs `function` over `pool`. Model-based functions require `student`.
pub fn acquire(
    function: AcquisitionFunction,
    pool: &[Example],
    student: Option<&StudentModel>,
    seed: u64,
) -> Result<Selection> {
    if function.batch_size == 0 {
        return Err(Error::config("batch size must be >= 1"));
    }
    let student = || {
        student.ok_or_else(|| Error::InvalidState(format!("{} acquisition needs a trained student", function.kind.as_str())))
    };
    match function.kind {
        AcquisitionKind::Random => Ok(acquire_random(pool, function.batch_size, seed)),
        AcquisitionKind::Entropy => acquire_entropy(student()?, pool, function.batch_size),
        AcquisitionKind::LeastConfident => acquire_least_confident(student()?, pool, function.batch_size),
    }
}

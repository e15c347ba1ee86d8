//! Combining a committee's annotations of one example into a consensus label.

use serde::{Deserialize, Serialize};

use crate::data_model::{argmax_unchecked, entropy_unchecked, softmax_unchecked, AggregatedLabel, Annotation};
use crate::error::{Error, Result};
use crate::workers::WorkerProfile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationStrategy {
    /// Copy the annotation of the worker with the best dev score.
    BestWorker,
    /// Most frequent label; `dist` holds vote frequencies.
    #[default]
    MajorityVoting,
    /// Argmax of the mean raw logits; `dist = softmax(mean)`.
    LogitVoting,
    /// Argmax of the dev-score-weighted sum of logits.
    WeightedLogitVoting,
}

impl AggregationStrategy {
    pub fn needs_profiles(self) -> bool {
        matches!(self, Self::BestWorker | Self::WeightedLogitVoting)
    }
}

impl std::str::FromStr for AggregationStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "best_worker" => Ok(Self::BestWorker),
            "majority_voting" => Ok(Self::MajorityVoting),
            "logit_voting" => Ok(Self::LogitVoting),
            "weighted_logit_voting" => Ok(Self::WeightedLogitVoting),
            other => Err(Error::config(format!("unknown aggregation strategy `{other}`"))),
        }
    }
}

fn label_count(annotations: &[Annotation]) -> Result<usize> {
    let first = annotations.first().ok_or_else(|| Error::invalid("no annotations to aggregate"))?;
    let n = first.logits.len();
    if n == 0 {
        return Err(Error::invalid("annotation without logits"));
    }
    for a in annotations {
        if a.logits.len() != n || a.label >= n {
            return Err(Error::invalid(format!(
                "annotation from `{}` does not match the {n}-label set",
                a.worker_id
            )));
        }
        if a.logits.iter().any(|z| !z.is_finite()) {
            return Err(Error::invalid(format!("non-finite logit from `{}`", a.worker_id)));
        }
    }
    Ok(n)
}

fn from_scores(scores: &[f64]) -> AggregatedLabel {
    let dist = softmax_unchecked(scores);
    AggregatedLabel {
        label: argmax_unchecked(scores),
        entropy: entropy_unchecked(&dist),
        dist,
    }
}

pub fn majority_vote(annotations: &[Annotation]) -> Result<AggregatedLabel> {
    let n = label_count(annotations)?;
    let mut counts = vec![0usize; n];
    for a in annotations {
        counts[a.label] += 1;
    }
    let k = annotations.len() as f64;
    let dist: Vec<f64> = counts.iter().map(|&c| c as f64 / k).collect();
    // Max count, first index on ties.
    let label = counts
        .iter()
        .enumerate()
        .fold(0, |best, (i, &c)| if c > counts[best] { i } else { best });
    Ok(AggregatedLabel {
        label,
        entropy: entropy_unchecked(&dist),
        dist,
    })
}

pub fn logit_vote(annotations: &[Annotation]) -> Result<AggregatedLabel> {
    let n = label_count(annotations)?;
    let k = annotations.len() as f64;
    let mut mean = vec![0.0; n];
    for a in annotations {
        for (m, &z) in mean.iter_mut().zip(&a.logits) {
            *m += z;
        }
    }
    for m in &mut mean {
        *m /= k;
    }
    Ok(from_scores(&mean))
}

/// Normalizes dev scores into voting weights `w_i = f_i / sum_j f_j`.
pub fn compute_weights(profiles: &[WorkerProfile]) -> Result<Vec<WorkerProfile>> {
    if profiles.is_empty() {
        return Err(Error::invalid("no worker profiles"));
    }
    for p in profiles {
        if !(0.0..=1.0).contains(&p.dev_score) {
            return Err(Error::invalid(format!(
                "dev score {} of `{}` outside [0, 1]",
                p.dev_score, p.worker_id
            )));
        }
    }
    let total: f64 = profiles.iter().map(|p| p.dev_score).sum();
    if total <= 0.0 {
        return Err(Error::DegenerateWeights);
    }
    Ok(profiles
        .iter()
        .map(|p| WorkerProfile {
            weight: Some(p.dev_score / total),
            ..p.clone()
        })
        .collect())
}

fn profile_for<'a>(profiles: &'a [WorkerProfile], worker_id: &str) -> Result<&'a WorkerProfile> {
    profiles
        .iter()
        .find(|p| p.worker_id == worker_id)
        .ok_or_else(|| Error::invalid(format!("no profile for worker `{worker_id}`")))
}

/// Weighted logit vote. Weights are recomputed from the dev scores of the
/// profiles matching the annotating workers.
pub fn weighted_logit_vote(annotations: &[Annotation], profiles: &[WorkerProfile]) -> Result<AggregatedLabel> {
    let n = label_count(annotations)?;
    let matched = annotations
        .iter()
        .map(|a| profile_for(profiles, &a.worker_id).cloned())
        .collect::<Result<Vec<_>>>()?;
    let weighted = compute_weights(&matched)?;
    let mut sum = vec![0.0; n];
    for (a, p) in annotations.iter().zip(&weighted) {
        let w = p.weight.expect("set by compute_weights");
        for (s, &z) in sum.iter_mut().zip(&a.logits) {
            *s += w * z;
        }
    }
    Ok(from_scores(&sum))
}

/// Index of the profile with the highest dev score; ties go to the earliest.
pub fn best_worker_select(profiles: &[WorkerProfile]) -> Result<usize> {
    if profiles.is_empty() {
        return Err(Error::invalid("empty committee"));
    }
    Ok(profiles
        .iter()
        .enumerate()
        .fold(0, |best, (i, p)| if p.dev_score > profiles[best].dev_score { i } else { best }))
}

/// The best worker's own annotation, with `dist = softmax(logits)`.
pub fn best_worker(annotations: &[Annotation], profiles: &[WorkerProfile]) -> Result<AggregatedLabel> {
    label_count(annotations)?;
    let best = &profiles[best_worker_select(profiles)?].worker_id;
    let ann = annotations
        .iter()
        .find(|a| &a.worker_id == best)
        .ok_or_else(|| Error::invalid(format!("best worker `{best}` did not annotate this example")))?;
    let dist = softmax_unchecked(&ann.logits);
    Ok(AggregatedLabel {
        label: ann.label,
        entropy: entropy_unchecked(&dist),
        dist,
    })
}

/// Dispatches on `strategy`. Profile-based strategies fail without profiles.
pub fn aggregate(
    strategy: AggregationStrategy,
    annotations: &[Annotation],
    profiles: Option<&[WorkerProfile]>,
) -> Result<AggregatedLabel> {
    let need = || {
        profiles.ok_or_else(|| Error::InvalidState(format!("{strategy:?} needs calibrated worker profiles")))
    };
    match strategy {
        AggregationStrategy::MajorityVoting => majority_vote(annotations),
        AggregationStrategy::LogitVoting => logit_vote(annotations),
        AggregationStrategy::WeightedLogitVoting => weighted_logit_vote(annotations, need()?),
        AggregationStrategy::BestWorker => best_worker(annotations, need()?),
    }
}

//! Annotator workers and the committee that queries them.

mod remote;
mod simulated;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data_model::{argmax_unchecked, Annotation, Example, LabelIndex, LabelSet, LabeledExample};
use crate::error::{Error, Result};
use crate::student::{score, Metric};

pub use remote::{
    AnnotateItem, AnnotateRequest, AnnotateResponse, HealthStatus, RemoteWorker, WireAnnotation,
    WorkerEndpoint, BACKOFF_BASE_MS, MAX_RETRIES,
};
pub use simulated::{simulate_logits, SimulatedWorker, SimulatedWorkerSpec, LOG_EPSILON};

/// Something that labels examples and reports per-label logits.
pub trait Worker: Send {
    fn id(&self) -> &str;

    /// One annotation per example, in input order, with
    /// `label == argmax_tiebreak(logits)`.
    fn annotate_batch(&mut self, examples: &[Example], labels: &LabelSet) -> Result<Vec<Annotation>>;
}

/// A worker's measured dev-set performance and, once
/// [`compute_weights`](crate::aggregation::compute_weights) has run, its
/// normalized voting weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerProfile {
    pub worker_id: String,
    pub dev_score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
}

impl WorkerProfile {
    pub fn new(worker_id: impl Into<String>, dev_score: f64) -> Self {
        Self {
            worker_id: worker_id.into(),
            dev_score,
            weight: None,
        }
    }
}

/// Checks the shape contract of a worker's reply.
pub(crate) fn check_batch(worker: &str, examples: &[Example], annotations: &[Annotation], n_labels: usize) -> Result<()> {
    if annotations.len() != examples.len() {
        return Err(Error::Protocol {
            example_id: None,
            message: format!(
                "worker `{worker}` returned {} annotations for {} examples",
                annotations.len(),
                examples.len()
            ),
        });
    }
    for (ex, ann) in examples.iter().zip(annotations) {
        let bad = ann.logits.len() != n_labels
            || ann.logits.iter().any(|z| !z.is_finite())
            || ann.label != argmax_unchecked(&ann.logits);
        if bad {
            return Err(Error::Protocol {
                example_id: Some(ex.id.clone()),
                message: format!("worker `{worker}` returned an inconsistent annotation"),
            });
        }
    }
    Ok(())
}

/// Scores a worker against gold dev labels.
pub fn calibrate_worker(
    worker: &mut dyn Worker,
    gold_dev: &[LabeledExample],
    labels: &LabelSet,
    metric: Metric,
) -> Result<WorkerProfile> {
    if gold_dev.is_empty() {
        return Err(Error::invalid("calibration needs a non-empty dev set"));
    }
    let examples: Vec<Example> = gold_dev.iter().map(|g| g.example.clone()).collect();
    let annotations = worker.annotate_batch(&examples, labels)?;
    check_batch(worker.id(), &examples, &annotations, labels.len())?;
    let predicted: Vec<LabelIndex> = annotations.iter().map(|a| a.label).collect();
    let gold: Vec<LabelIndex> = gold_dev.iter().map(|g| g.label).collect();
    let dev_score = score(metric, &predicted, &gold, labels.len())?;
    Ok(WorkerProfile::new(worker.id(), dev_score))
}

/// Ordered set of `k` workers. Member order is the identity used for
/// tie-breaking and reproducibility.
pub struct Committee {
    members: Vec<Box<dyn Worker>>,
}

impl std::fmt::Debug for Committee {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Committee").field("members", &self.ids()).finish()
    }
}

/// Builds a committee, checking that exactly `k` members were supplied.
pub fn make_committee(members: Vec<Box<dyn Worker>>, k: usize) -> Result<Committee> {
    if k == 0 {
        return Err(Error::config("committee size k must be >= 1"));
    }
    if members.len() != k {
        return Err(Error::config(format!(
            "expected {k} committee members, got {}",
            members.len()
        )));
    }
    let mut seen = std::collections::HashSet::new();
    for m in &members {
        if !seen.insert(m.id().to_string()) {
            return Err(Error::config(format!("duplicate worker id `{}`", m.id())));
        }
    }
    Ok(Committee { members })
}

impl Committee {
    /// Simulated committee with ids `sim-0`, `sim-1`, ...
    pub fn simulated(specs: Vec<SimulatedWorkerSpec>) -> Result<Self> {
        let k = specs.len();
        let members = specs
            .into_iter()
            .enumerate()
            .map(|(i, spec)| Ok(Box::new(SimulatedWorker::new(format!("sim-{i}"), spec)?) as Box<dyn Worker>))
            .collect::<Result<Vec<_>>>()?;
        make_committee(members, k)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.members.iter().map(|m| m.id().to_string()).collect()
    }

    /// Dev-set profile of every member, in committee order.
    pub fn calibrate(&mut self, gold_dev: &[LabeledExample], labels: &LabelSet, metric: Metric) -> Result<Vec<WorkerProfile>> {
        self.members
            .iter_mut()
            .map(|m| calibrate_worker(m.as_mut(), gold_dev, labels, metric))
            .collect()
    }

    /// Queries every member on `examples`, one in-flight batch per worker.
    ///
    /// Returns, per example in input order, the `k` annotations in committee
    /// order.
    pub fn annotate(&mut self, examples: &[Example], labels: &LabelSet) -> Result<Vec<Vec<Annotation>>> {
        if examples.is_empty() {
            return Ok(Vec::new());
        }
        let replies: Vec<Result<Vec<Annotation>>> = if self.members.len() == 1 {
            vec![self.members[0].annotate_batch(examples, labels)]
        } else {
            std::thread::scope(|scope| {
                let handles: Vec<_> = self
                    .members
                    .iter_mut()
                    .map(|m| scope.spawn(move || m.annotate_batch(examples, labels)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().unwrap_or_else(|_| Err(Error::InvalidState("worker thread panicked".into()))))
                    .collect()
            })
        };

        let index: HashMap<&str, usize> = examples.iter().enumerate().map(|(i, e)| (e.id.as_str(), i)).collect();
        let mut per_example: Vec<Vec<Annotation>> = vec![Vec::with_capacity(self.members.len()); examples.len()];
        for (member, reply) in self.members.iter().zip(replies) {
            let annotations = reply?;
            check_batch(member.id(), examples, &annotations, labels.len())?;
            for (ex, ann) in examples.iter().zip(annotations) {
                per_example[index[ex.id.as_str()]].push(ann);
            }
        }
        Ok(per_example)
    }
}

use serde::{Deserialize, Serialize};

use crate::data_model::{argmax_unchecked, LabelIndex, LabeledExample};
use crate::error::{Error, Result};

use super::model::StudentModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Accuracy,
    /// Binary Matthews correlation coefficient, label 1 as the positive class.
    Matthews,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::Matthews => "matthews",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy" => Ok(Metric::Accuracy),
            "matthews" | "mcc" => Ok(Metric::Matthews),
            other => Err(Error::UnsupportedMetric(other.to_string())),
        }
    }
}

/// `counts[gold][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(predicted: &[LabelIndex], gold: &[LabelIndex], n_labels: usize) -> Result<Self> {
        if predicted.len() != gold.len() {
            return Err(Error::invalid(format!(
                "{} predictions for {} gold labels",
                predicted.len(),
                gold.len()
            )));
        }
        let mut counts = vec![vec![0u64; n_labels]; n_labels];
        for (&p, &g) in predicted.iter().zip(gold) {
            if p >= n_labels || g >= n_labels {
                return Err(Error::invalid(format!("label index outside 0..{n_labels}")));
            }
            counts[g][p] += 1;
        }
        Ok(Self { counts })
    }

    pub fn get(&self, gold: LabelIndex, predicted: LabelIndex) -> u64 {
        self.counts[gold][predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

pub fn accuracy(predicted: &[LabelIndex], gold: &[LabelIndex]) -> Result<f64> {
    if gold.is_empty() || predicted.len() != gold.len() {
        return Err(Error::invalid("accuracy needs equally sized, non-empty inputs"));
    }
    let hits = predicted.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / gold.len() as f64)
}

/// Binary MCC; 0 when any marginal in the denominator is empty.
pub fn matthews(predicted: &[LabelIndex], gold: &[LabelIndex]) -> Result<f64> {
    if gold.is_empty() {
        return Err(Error::invalid("matthews needs a non-empty input"));
    }
    let cm = ConfusionMatrix::new(predicted, gold, 2)?;
    let tp = cm.get(1, 1) as f64;
    let tn = cm.get(0, 0) as f64;
    let fp = cm.get(0, 1) as f64;
    let fn_ = cm.get(1, 0) as f64;
    let denom = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((tp * tn - fp * fn_) / denom.sqrt())
}

pub fn score(metric: Metric, predicted: &[LabelIndex], gold: &[LabelIndex], n_labels: usize) -> Result<f64> {
    match metric {
        Metric::Accuracy => accuracy(predicted, gold),
        Metric::Matthews if n_labels != 2 => Err(Error::UnsupportedMetric(format!(
            "matthews is defined for binary tasks, got {n_labels} labels"
        ))),
        Metric::Matthews => matthews(predicted, gold),
    }
}

pub fn evaluate(model: &StudentModel, labeled: &[LabeledExample], metric: Metric) -> Result<f64> {
    if labeled.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty set"));
    }
    if metric == Metric::Matthews && model.n_labels() != 2 {
        return score(metric, &[], &[], model.n_labels());
    }
    let predicted = labeled
        .iter()
        .map(|l| Ok(argmax_unchecked(&model.logits(&l.example.features)?)))
        .collect::<Result<Vec<_>>>()?;
    let gold: Vec<LabelIndex> = labeled.iter().map(|l| l.label).collect();
    score(metric, &predicted, &gold, model.n_labels())
}

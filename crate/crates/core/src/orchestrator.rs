//! The iterative annotate-and-retrain loop.
//!
//! Iteration 0 trains the student on the few-shot gold set alone. Every later
//! iteration acquires a batch from the unlabeled pool with the previous
//! student, labels it according to the scheme, appends it to the growing
//! training set, filters and weights that set, retrains from scratch and
//! evaluates.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::acquisition::{acquire, AcquisitionFunction, AcquisitionKind};
use crate::aggregation::{aggregate, logit_vote, AggregationStrategy};
use crate::data_model::{argmax_unchecked, entropy_unchecked, softmax_unchecked, AggregatedLabel, Example, LabelSet, Pool};
use crate::error::{Error, Result};
use crate::quality::{instance_threshold, instance_weight, ItemSource, Tau, TrainingItem};
use crate::seeds::{derive, stream};
use crate::student::{evaluate, train_student, FeaturizerConfig, Metric, StudentModel, TrainConfig};
use crate::workers::{Committee, WorkerProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// The batch receives its gold labels.
    ActiveLearningGold,
    /// The previous student labels the batch.
    SelfTraining,
    /// A worker committee labels the batch; votes are aggregated.
    #[default]
    #[serde(rename = "lmturk")]
    LmTurk,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::ActiveLearningGold => "active_learning_gold",
            Scheme::SelfTraining => "self_training",
            Scheme::LmTurk => "lmturk",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "active_learning_gold" => Ok(Scheme::ActiveLearningGold),
            "self_training" => Ok(Scheme::SelfTraining),
            "lmturk" => Ok(Scheme::LmTurk),
            other => Err(Error::config(format!("unknown scheme `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    /// Few-shot sampling and random acquisition.
    pub sampling: u64,
    pub training: u64,
    pub workers: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            sampling: 0,
            training: 1,
            workers: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopConfig {
    pub scheme: Scheme,
    pub acquisition: AcquisitionKind,
    /// `|B|`, examples acquired per iteration.
    pub batch_size: usize,
    pub aggregation: AggregationStrategy,
    /// Committee size.
    pub k: usize,
    /// Number of acquisition iterations `J` after iteration 0.
    pub iterations: usize,
    pub tau: Tau,
    /// Gold shots per class for the few-shot train and dev sets.
    pub shots: usize,
    pub metric: Metric,
    /// `train.use_weights` also turns on entropy-based instance weighting.
    pub train: TrainConfig,
    /// Set per repetition by the harness; not part of the config file.
    #[serde(skip)]
    pub seeds: Seeds,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::LmTurk,
            acquisition: AcquisitionKind::Random,
            batch_size: 100,
            aggregation: AggregationStrategy::MajorityVoting,
            k: 5,
            iterations: 15,
            tau: Tau::ALL,
            shots: 16,
            metric: Metric::Accuracy,
            train: TrainConfig::default(),
            seeds: Seeds::default(),
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::config("iterations must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if self.k == 0 {
            return Err(Error::config("k must be >= 1"));
        }
        self.train.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub scheme: Scheme,
    pub acquisition: AcquisitionKind,
    /// Examples acquired in this iteration.
    pub acquired: usize,
    /// `|D^j|` before filtering.
    pub train_size: usize,
    /// Items left after entropy thresholding.
    pub kept_size: usize,
    /// Agreement of this iteration's labels with gold, when gold is known.
    pub annotation_accuracy: Option<f64>,
    /// Agreement with gold of all kept non-gold items.
    pub kept_accuracy: Option<f64>,
    pub test_metric: f64,
    pub dev_metric: Option<f64>,
    /// Training collapsed to one class; metrics are the majority baseline.
    pub degenerate: bool,
    pub wall_time_ms: u64,
}

#[derive(Debug, Clone)]
pub struct LoopOutcome {
    pub records: Vec<IterationRecord>,
    /// The pool ran dry before `iterations` were completed.
    pub exhausted: bool,
    pub final_model: StudentModel,
    pub profiles: Option<Vec<WorkerProfile>>,
    /// Ids acquired per iteration, in order.
    pub acquired_ids: Vec<Vec<String>>,
}

/// What an iteration needs to label a batch.
pub struct SchemeContext<'a> {
    pub label_set: &'a LabelSet,
    pub committee: Option<&'a mut Committee>,
    pub aggregation: AggregationStrategy,
    pub profiles: Option<&'a [WorkerProfile]>,
    pub previous: &'a StudentModel,
}

fn aggregate_with_fallback(
    strategy: AggregationStrategy,
    annotations: &[crate::data_model::Annotation],
    profiles: Option<&[WorkerProfile]>,
) -> Result<AggregatedLabel> {
    match aggregate(strategy, annotations, profiles) {
        Err(Error::DegenerateWeights) => logit_vote(annotations),
        other => other,
    }
}

/// Labels `batch` per `scheme`.
///
/// Gold-scheme items are tagged as worker items with zero entropy so that
/// thresholding treats every scheme alike; only the few-shot set is gold.
pub fn annotate_batch_for_scheme(scheme: Scheme, batch: &[Example], ctx: SchemeContext<'_>) -> Result<Vec<TrainingItem>> {
    let n = ctx.label_set.len();
    match scheme {
        Scheme::ActiveLearningGold => batch
            .iter()
            .map(|ex| {
                let gold = ex
                    .gold
                    .ok_or_else(|| Error::invalid(format!("example `{}` has no gold label", ex.id)))?;
                let mut item = TrainingItem::gold(ex.clone(), gold, n);
                item.source = ItemSource::Worker;
                Ok(item)
            })
            .collect(),
        Scheme::SelfTraining => {
            let logits = ctx.previous.predict_logits(batch)?;
            Ok(batch
                .iter()
                .zip(logits)
                .map(|(ex, z)| {
                    let dist = softmax_unchecked(&z);
                    let label = AggregatedLabel {
                        label: argmax_unchecked(&z),
                        entropy: entropy_unchecked(&dist),
                        dist,
                    };
                    TrainingItem::annotated(ex.clone(), label, ItemSource::Student)
                })
                .collect())
        }
        Scheme::LmTurk => {
            let committee = ctx
                .committee
                .ok_or_else(|| Error::InvalidState("the lmturk scheme needs a committee".into()))?;
            let annotations = committee.annotate(batch, ctx.label_set)?;
            batch
                .iter()
                .zip(annotations)
                .map(|(ex, anns)| {
                    let label = aggregate_with_fallback(ctx.aggregation, &anns, ctx.profiles)?;
                    Ok(TrainingItem::annotated(ex.clone(), label, ItemSource::Worker))
                })
                .collect()
        }
    }
}

fn agreement<'a>(items: impl Iterator<Item = &'a TrainingItem>) -> Option<f64> {
    let mut total = 0usize;
    let mut hits = 0usize;
    for item in items {
        total += 1;
        if item.example.gold? == item.target_label {
            hits += 1;
        }
    }
    (total > 0).then(|| hits as f64 / total as f64)
}

fn majority_label(items: &[TrainingItem], n: usize) -> usize {
    let mut counts = vec![0usize; n];
    for it in items {
        counts[it.target_label] += 1;
    }
    counts.iter().enumerate().fold(0, |best, (i, &c)| if c > counts[best] { i } else { best })
}

struct Trained {
    model: StudentModel,
    degenerate: bool,
}

fn train_or_fallback(
    items: &[TrainingItem],
    label_set: &LabelSet,
    featurizer: &FeaturizerConfig,
    config: &LoopConfig,
    seed: u64,
    pool: &Pool,
) -> Result<Trained> {
    match train_student(items, label_set, featurizer, &config.train, seed, Some(&pool.gold_dev)) {
        Ok(model) => Ok(Trained { model, degenerate: false }),
        Err(Error::DegenerateTraining(_)) => Ok(Trained {
            model: StudentModel::constant(label_set.clone(), featurizer.clone(), majority_label(items, label_set.len()))?,
            degenerate: true,
        }),
        Err(e) => Err(e),
    }
}

fn check_prerequisites(config: &LoopConfig, pool: &Pool, committee: Option<&Committee>) -> Result<()> {
    config.validate()?;
    pool.validate()?;
    if pool.test.is_empty() {
        return Err(Error::invalid("the test partition is empty"));
    }
    if pool.gold_train.is_empty() {
        return Err(Error::invalid("the gold training set is empty"));
    }
    match config.scheme {
        Scheme::LmTurk => {
            let committee = committee.ok_or_else(|| Error::config("the lmturk scheme needs a committee"))?;
            if committee.len() != config.k {
                return Err(Error::config(format!(
                    "committee has {} members but k = {}",
                    committee.len(),
                    config.k
                )));
            }
            if config.aggregation.needs_profiles() && pool.gold_dev.is_empty() {
                return Err(Error::config(format!(
                    "{:?} needs a gold dev set to calibrate workers",
                    config.aggregation
                )));
            }
        }
        Scheme::ActiveLearningGold => {
            if let Some(ex) = pool.unlabeled.iter().find(|ex| ex.gold.is_none()) {
                return Err(Error::config(format!(
                    "the gold scheme needs gold labels on the pool; `{}` has none",
                    ex.id
                )));
            }
        }
        Scheme::SelfTraining => {}
    }
    Ok(())
}

/// Runs iteration 0 plus up to `config.iterations` acquisition rounds.
pub fn run_loop(
    config: &LoopConfig,
    mut pool: Pool,
    label_set: &LabelSet,
    featurizer: &FeaturizerConfig,
    mut committee: Option<&mut Committee>,
) -> Result<LoopOutcome> {
    check_prerequisites(config, &pool, committee.as_deref())?;
    let n = label_set.len();

    let profiles = match (&config.scheme, committee.as_deref_mut()) {
        (Scheme::LmTurk, Some(c)) if config.aggregation.needs_profiles() => {
            Some(c.calibrate(&pool.gold_dev, label_set, config.metric)?)
        }
        _ => None,
    };

    let evaluate_on = |model: &StudentModel, pool: &Pool| -> Result<(f64, Option<f64>)> {
        let test = evaluate(model, &pool.test, config.metric)?;
        let dev = if pool.gold_dev.is_empty() {
            None
        } else {
            Some(evaluate(model, &pool.gold_dev, config.metric)?)
        };
        Ok((test, dev))
    };

    let mut data: Vec<TrainingItem> = pool
        .gold_train
        .iter()
        .map(|g| TrainingItem::gold(g.example.clone(), g.label, n))
        .collect();

    let started = Instant::now();
    let trained = train_or_fallback(&data, label_set, featurizer, config, derive(config.seeds.training, stream::TRAINING, 0), &pool)?;
    let (test_metric, dev_metric) = evaluate_on(&trained.model, &pool)?;
    let mut records = vec![IterationRecord {
        iteration: 0,
        scheme: config.scheme,
        acquisition: config.acquisition,
        acquired: 0,
        train_size: data.len(),
        kept_size: data.len(),
        annotation_accuracy: None,
        kept_accuracy: None,
        test_metric,
        dev_metric,
        degenerate: trained.degenerate,
        wall_time_ms: started.elapsed().as_millis() as u64,
    }];
    let mut student = trained.model;
    let mut exhausted = false;
    let mut acquired_ids = Vec::new();
    let function = AcquisitionFunction {
        kind: config.acquisition,
        batch_size: config.batch_size,
    };

    for j in 1..=config.iterations {
        if pool.unlabeled.is_empty() {
            exhausted = true;
            break;
        }
        let started = Instant::now();
        let seed = derive(config.seeds.sampling, stream::ACQUISITION, j as u64);
        let selection = acquire(function, &pool.unlabeled, Some(&student), seed)?;
        if selection.truncated {
            exhausted = j < config.iterations;
        }
        let mut taken = vec![false; pool.unlabeled.len()];
        for &i in &selection.indices {
            taken[i] = true;
        }
        let batch: Vec<Example> = selection.indices.iter().map(|&i| pool.unlabeled[i].clone()).collect();
        let mut position = 0;
        pool.unlabeled.retain(|_| {
            position += 1;
            !taken[position - 1]
        });
        acquired_ids.push(batch.iter().map(|e| e.id.clone()).collect());

        let ctx = SchemeContext {
            label_set,
            committee: committee.as_deref_mut(),
            aggregation: config.aggregation,
            profiles: profiles.as_deref(),
            previous: &student,
        };
        let items = annotate_batch_for_scheme(config.scheme, &batch, ctx)?;
        let annotation_accuracy = agreement(items.iter());
        data.extend(items);

        let mut kept = instance_threshold(data.clone(), config.tau);
        if config.train.use_weights {
            kept = instance_weight(kept);
        }
        let kept_accuracy = agreement(kept.iter().filter(|i| !i.is_gold()));
        let trained = train_or_fallback(&kept, label_set, featurizer, config, derive(config.seeds.training, stream::TRAINING, j as u64), &pool)?;
        let (test_metric, dev_metric) = evaluate_on(&trained.model, &pool)?;
        records.push(IterationRecord {
            iteration: j,
            scheme: config.scheme,
            acquisition: config.acquisition,
            acquired: batch.len(),
            train_size: data.len(),
            kept_size: kept.len(),
            annotation_accuracy,
            kept_accuracy,
            test_metric,
            dev_metric,
            degenerate: trained.degenerate,
            wall_time_ms: started.elapsed().as_millis() as u64,
        });
        student = trained.model;
        if exhausted {
            break;
        }
    }

    Ok(LoopOutcome {
        records,
        exhausted,
        final_model: student,
        profiles,
        acquired_ids,
    })
}

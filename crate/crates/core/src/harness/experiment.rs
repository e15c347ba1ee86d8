//! Running repetitions of the loop and summarizing them.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::thread;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::acquisition::AcquisitionKind;
use crate::data_model::{sample_few_shot, Example, LabelSet, LabeledExample, Pool};
use crate::error::{Error, Result};
use crate::orchestrator::{run_loop, LoopOutcome, Scheme, Seeds};
use crate::seeds::{derive, stream};
use crate::student::{save_model, StudentModel};
use crate::synthetic;
use crate::workers::{make_committee, Committee, RemoteWorker, Worker};

use super::config::{ExperimentConfig, WORKER_URL_ENV};
use super::dataset::{load_dataset, Dataset};
use super::runlog::{IterationEntry, RepetitionEntry, RepetitionStatus, RunLog};

/// Where committee members come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommitteeSource {
    Simulated,
    Remote,
}

/// Featurized data shared by all repetitions.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub label_set: LabelSet,
    /// Labeled examples the few-shot sets are drawn from; the rest join the pool.
    pub labeled: Vec<LabeledExample>,
    /// Unlabeled examples; always part of the pool.
    pub unlabeled: Vec<Example>,
    pub test: Vec<LabeledExample>,
}

fn hold_out(labeled: Vec<LabeledExample>, fraction: f64, seed: u64) -> (Vec<LabeledExample>, Vec<LabeledExample>) {
    let n_test = ((labeled.len() as f64) * fraction).round() as usize;
    let mut order: Vec<usize> = (0..labeled.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_test = vec![false; labeled.len()];
    for &i in &order[..n_test] {
        is_test[i] = true;
    }
    let (test, train): (Vec<_>, Vec<_>) = labeled.into_iter().zip(is_test).partition(|(_, t)| *t);
    (
        train.into_iter().map(|(x, _)| x).collect(),
        test.into_iter().map(|(x, _)| x).collect(),
    )
}

/// Loads or generates the dataset, featurizes it and fixes the test split.
pub fn prepare_data(config: &ExperimentConfig) -> Result<PreparedData> {
    let featurizer = config.featurizer.featurizer()?;
    let d = &config.dataset;
    let declared = d.label_set()?;
    let train: Dataset = match (&d.train, &d.synthetic) {
        (Some(path), _) => load_dataset(path, declared.as_ref())?,
        (None, Some(s)) => synthetic::generate(s)?,
        (None, None) => return Err(Error::config("no dataset configured")),
    };
    let label_set = train.label_set.clone();
    let (labeled, unlabeled) = train.featurize(&featurizer);
    let (labeled, test) = match &d.test {
        Some(path) => {
            let test = load_dataset(path, Some(&label_set))?;
            if let Some(r) = test.records.iter().find(|r| r.label.is_none()) {
                return Err(Error::invalid(format!("test example `{}` has no label", r.id)));
            }
            (labeled, test.featurize(&featurizer).0)
        }
        None => hold_out(labeled, d.test_fraction, derive(config.seed, stream::SPLIT, 0)),
    };
    Ok(PreparedData {
        label_set,
        labeled,
        unlabeled,
        test,
    })
}

/// Seeds for repetition `r` under base seed `seed`.
pub fn repetition_seeds(seed: u64, repetition: usize) -> Seeds {
    let r = repetition as u64;
    Seeds {
        sampling: derive(seed, stream::SAMPLING, r),
        training: derive(seed, stream::TRAINING, r),
        workers: derive(seed, stream::WORKERS, r),
    }
}

/// Draws `G_train` and `G_dev` (each `shots` per class) and puts everything
/// else into the unlabeled pool.
pub fn build_pool(data: &PreparedData, shots: usize, seeds: &Seeds) -> Result<Pool> {
    let (gold_train, rest) = sample_few_shot(
        &data.labeled,
        &data.label_set,
        shots,
        derive(seeds.sampling, stream::FEW_SHOT_TRAIN, 0),
    )?;
    let (gold_dev, rest) = sample_few_shot(&rest, &data.label_set, shots, derive(seeds.sampling, stream::FEW_SHOT_DEV, 0))?;
    let unlabeled = rest
        .into_iter()
        .map(|l| l.example)
        .chain(data.unlabeled.iter().cloned())
        .collect();
    Pool::new(unlabeled, gold_train, gold_dev, data.test.clone())
}

pub fn build_committee(
    config: &ExperimentConfig,
    source: CommitteeSource,
    label_set: &LabelSet,
    seeds: &Seeds,
) -> Result<Option<Committee>> {
    if config.loop_config.scheme != Scheme::LmTurk {
        return Ok(None);
    }
    config.check_committee(source == CommitteeSource::Remote)?;
    let committee = match source {
        CommitteeSource::Simulated => {
            let specs = config
                .workers
                .simulated_specs(label_set.len(), |i| derive(seeds.workers, stream::WORKERS, i as u64))?;
            Committee::simulated(specs)?
        }
        CommitteeSource::Remote => {
            let fallback = std::env::var(WORKER_URL_ENV).ok();
            let members = config
                .workers
                .resolved_endpoints(fallback.as_deref())?
                .into_iter()
                .map(|e| Ok(Box::new(RemoteWorker::new(e.template_id.clone(), e)?) as Box<dyn Worker>))
                .collect::<Result<Vec<_>>>()?;
            make_committee(members, config.loop_config.k)?
        }
    };
    Ok(Some(committee))
}

pub fn run_repetition(
    config: &ExperimentConfig,
    data: &PreparedData,
    source: CommitteeSource,
    repetition: usize,
) -> Result<LoopOutcome> {
    let seeds = repetition_seeds(config.seed, repetition);
    let pool = build_pool(data, config.loop_config.shots, &seeds)?;
    let mut committee = build_committee(config, source, &data.label_set, &seeds)?;
    let mut loop_config = config.loop_config.clone();
    loop_config.seeds = seeds;
    run_loop(&loop_config, pool, &data.label_set, &config.featurizer, committee.as_mut())
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub log: RunLog,
    /// Final student per repetition; `None` for failed repetitions.
    pub models: Vec<Option<StudentModel>>,
}

fn parallelism(config: &ExperimentConfig) -> usize {
    let n = if config.parallelism == 0 {
        thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    } else {
        config.parallelism
    };
    n.clamp(1, config.repetitions)
}

/// Runs every repetition. Errors in a repetition are recorded in the log;
/// only configuration and dataset errors abort the whole experiment.
pub fn run_experiment(config: &ExperimentConfig, source: CommitteeSource) -> Result<ExperimentOutput> {
    config.validate()?;
    config.check_committee(source == CommitteeSource::Remote)?;
    let data = prepare_data(config)?;
    run_experiment_on(config, &data, source)
}

/// [`run_experiment`] on already prepared data.
pub fn run_experiment_on(config: &ExperimentConfig, data: &PreparedData, source: CommitteeSource) -> Result<ExperimentOutput> {
    let reps = config.repetitions;
    let workers = parallelism(config);
    let mut outcomes: Vec<Option<Result<LoopOutcome>>> = (0..reps).map(|_| None).collect();
    for start in (0..reps).step_by(workers) {
        let end = (start + workers).min(reps);
        let results: Vec<Result<LoopOutcome>> = thread::scope(|scope| {
            let handles: Vec<_> = (start..end)
                .map(|r| scope.spawn(move || run_repetition(config, data, source, r)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(Error::InvalidState("repetition panicked".into()))))
                .collect()
        });
        for (r, result) in (start..end).zip(results) {
            outcomes[r] = Some(result);
        }
    }

    let mut log = RunLog::new(config.clone());
    let mut models = Vec::with_capacity(reps);
    for (r, outcome) in outcomes.into_iter().enumerate() {
        let seeds = repetition_seeds(config.seed, r);
        match outcome.expect("every repetition ran") {
            Ok(outcome) => {
                log.iterations.extend(
                    outcome
                        .records
                        .iter()
                        .map(|rec| IterationEntry::new(r, rec, config.log_wall_time)),
                );
                log.repetitions.push(RepetitionEntry {
                    repetition: r,
                    status: RepetitionStatus::Completed,
                    error: None,
                    retryable: false,
                    exhausted: outcome.exhausted,
                    seeds,
                    final_test_metric: outcome.records.last().map(|rec| rec.test_metric),
                });
                models.push(Some(outcome.final_model));
            }
            Err(e) => {
                log.repetitions.push(RepetitionEntry {
                    repetition: r,
                    status: RepetitionStatus::Failed,
                    error: Some(e.to_string()),
                    retryable: e.is_retryable(),
                    exhausted: false,
                    seeds,
                    final_test_metric: None,
                });
                models.push(None);
            }
        }
    }
    log.normalize();
    Ok(ExperimentOutput { log, models })
}

/// Mean and sample standard deviation across repetitions.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub scheme: Scheme,
    pub acquisition: AcquisitionKind,
    pub iteration: usize,
    pub count: usize,
    pub mean: f64,
    pub stddev: f64,
}

/// Sample mean and standard deviation (`n - 1` denominator, 0 for one value),
/// computed with Welford's update so constant inputs give exactly zero spread.
pub fn mean_stddev(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, &v) in values.iter().enumerate() {
        let delta = v - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (v - mean);
    }
    let n = values.len();
    let stddev = if n == 1 { 0.0 } else { (m2 / (n - 1) as f64).sqrt() };
    (mean, stddev)
}

/// Test-metric summary per `(scheme, acquisition, iteration)` over the
/// completed repetitions.
pub fn summarize(log: &RunLog) -> Vec<SummaryRow> {
    let completed: Vec<usize> = log
        .repetitions
        .iter()
        .filter(|r| r.status == RepetitionStatus::Completed)
        .map(|r| r.repetition)
        .collect();
    type Group = (Scheme, AcquisitionKind, Vec<f64>);
    let mut groups: BTreeMap<(&str, &str, usize), Group> = BTreeMap::new();
    for e in log.iterations.iter().filter(|e| completed.contains(&e.repetition)) {
        groups
            .entry((e.scheme.as_str(), e.acquisition.as_str(), e.iteration))
            .or_insert_with(|| (e.scheme, e.acquisition, Vec::new()))
            .2
            .push(e.test_metric);
    }
    groups
        .into_iter()
        .map(|((_, _, iteration), (scheme, acquisition, values))| {
            let (mean, stddev) = mean_stddev(&values);
            SummaryRow {
                scheme,
                acquisition,
                iteration,
                count: values.len(),
                mean,
                stddev,
            }
        })
        .collect()
}

pub fn write_summary(rows: &[SummaryRow], out: &mut impl Write) -> Result<()> {
    writeln!(out, "scheme,acquisition,iteration,count,mean,stddev")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.scheme.as_str(),
            r.acquisition.as_str(),
            r.iteration,
            r.count,
            r.mean,
            r.stddev
        )?;
    }
    Ok(())
}

/// Writes `run_log.ndjson`, `summary.csv` and, when configured, one model
/// file per completed repetition. Returns the paths written.
pub fn write_outputs(output: &ExperimentOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let log_path = dir.join("run_log.ndjson");
    output.log.save(&log_path)?;
    written.push(log_path);
    let summary_path = dir.join("summary.csv");
    let mut buf = Vec::new();
    write_summary(&summarize(&output.log), &mut buf)?;
    fs::write(&summary_path, buf)?;
    written.push(summary_path);
    if output.log.config.save_models {
        for (r, model) in output.models.iter().enumerate() {
            if let Some(model) = model {
                let path = dir.join(format!("student-rep{r}.txt"));
                save_model(model, &path)?;
                written.push(path);
            }
        }
    }
    Ok(written)
}

//! TOML experiment configuration.
//!
//! ```toml
//! repetitions = 3
//! seed = 7
//! output_dir = "out"
//!
//! [dataset]
//! train = "train.tsv"      # or a [dataset.synthetic] table
//! test = "test.tsv"        # optional; otherwise `test_fraction` is held out
//!
//! [loop]
//! scheme = "lmturk"
//! acquisition = "entropy"
//! batch_size = 100
//!
//! [workers]
//! accuracies = [0.9, 0.85, 0.8, 0.8, 0.75]
//! ```
//!
//! Unknown keys anywhere are errors.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data_model::LabelSet;
use crate::error::{Error, Result};
use crate::orchestrator::{LoopConfig, Scheme};
use crate::student::{FeaturizerConfig, Metric};
use crate::synthetic::SyntheticConfig;
use crate::workers::{SimulatedWorkerSpec, WorkerEndpoint};

/// Default for endpoints that omit `base_url`.
pub const WORKER_URL_ENV: &str = "LMTURK_WORKER_URL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(rename = "loop")]
    pub loop_config: LoopConfig,
    pub featurizer: FeaturizerConfig,
    pub workers: WorkersConfig,
    pub output_dir: PathBuf,
    pub repetitions: usize,
    /// Base seed; every repetition derives its own seeds from it.
    pub seed: u64,
    /// Record per-iteration wall time. Off by default so logs are
    /// reproducible byte for byte.
    pub log_wall_time: bool,
    pub save_models: bool,
    /// Repetitions run concurrently; 0 means one per available core.
    pub parallelism: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            loop_config: LoopConfig::default(),
            featurizer: FeaturizerConfig::default(),
            workers: WorkersConfig::default(),
            output_dir: PathBuf::from("lmturk-out"),
            repetitions: 3,
            seed: 0,
            log_wall_time: false,
            save_models: false,
            parallelism: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Labeled examples for few-shot sampling plus the unlabeled pool.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    /// Declared label names, in index order. Discovered when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
    /// Share of labeled examples held out for testing when `test` is absent.
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticConfig>,
}

fn default_test_fraction() -> f64 {
    0.2
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            train: None,
            test: None,
            labels: None,
            test_fraction: default_test_fraction(),
            synthetic: Some(SyntheticConfig::default()),
        }
    }
}

impl DatasetConfig {
    pub fn label_set(&self) -> Result<Option<LabelSet>> {
        self.labels.as_ref().map(|names| LabelSet::new(names.iter().cloned())).transpose()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkersConfig {
    /// Shorthand: one symmetric simulated worker per entry.
    pub accuracies: Vec<f64>,
    /// Temperature for the `accuracies` shorthand.
    pub temperature: f64,
    /// Turns the `accuracies` shorthand into directional workers with these
    /// per-class error weights (see [`SimulatedWorkerSpec::directional`]).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_error_weights: Option<Vec<f64>>,
    pub simulated: Vec<SimulatedWorkerConfig>,
    pub endpoints: Vec<EndpointConfig>,
}

impl Default for WorkersConfig {
    fn default() -> Self {
        Self {
            accuracies: vec![0.90, 0.85, 0.80, 0.80, 0.75],
            temperature: 1.0,
            class_error_weights: None,
            simulated: Vec::new(),
            endpoints: Vec::new(),
        }
    }
}

/// Either `accuracy` (symmetric confusion) or a full `confusion` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulatedWorkerConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confusion: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
}

fn default_temperature() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    pub template_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_batch: Option<usize>,
}

impl WorkersConfig {
    pub fn simulated_count(&self) -> usize {
        self.accuracies.len() + self.simulated.len()
    }

    /// Worker specs in committee order; `seed_for(i)` seeds member `i`.
    pub fn simulated_specs(&self, n_labels: usize, seed_for: impl Fn(usize) -> u64) -> Result<Vec<SimulatedWorkerSpec>> {
        let mut specs = Vec::with_capacity(self.simulated_count());
        for &accuracy in &self.accuracies {
            let seed = seed_for(specs.len());
            specs.push(match &self.class_error_weights {
                Some(w) => SimulatedWorkerSpec::directional(n_labels, accuracy, w, self.temperature, seed)?,
                None => SimulatedWorkerSpec::symmetric(n_labels, accuracy, self.temperature, seed)?,
            });
        }
        for (i, w) in self.simulated.iter().enumerate() {
            let seed = seed_for(specs.len());
            let spec = match (w.accuracy, &w.confusion) {
                (Some(a), None) => SimulatedWorkerSpec::symmetric(n_labels, a, w.temperature, seed)?,
                (None, Some(m)) => {
                    if m.len() != n_labels {
                        return Err(Error::config(format!(
                            "workers.simulated[{i}] confusion has {} rows for {n_labels} labels",
                            m.len()
                        )));
                    }
                    SimulatedWorkerSpec::new(m.clone(), w.temperature, seed)?
                }
                _ => {
                    return Err(Error::config(format!(
                        "workers.simulated[{i}] needs exactly one of `accuracy` or `confusion`"
                    )))
                }
            };
            specs.push(spec);
        }
        Ok(specs)
    }

    /// Endpoints with `base_url` filled from `fallback_url` where missing.
    pub fn resolved_endpoints(&self, fallback_url: Option<&str>) -> Result<Vec<WorkerEndpoint>> {
        self.endpoints
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let base_url = e.base_url.as_deref().or(fallback_url).ok_or_else(|| {
                    Error::config(format!("workers.endpoints[{i}] has no base_url and {WORKER_URL_ENV} is not set"))
                })?;
                let mut endpoint = WorkerEndpoint::new(base_url, e.template_id.clone());
                if let Some(t) = e.timeout_ms {
                    endpoint.timeout_ms = t;
                }
                if let Some(b) = e.max_batch {
                    endpoint.max_batch = b;
                }
                endpoint.validate()?;
                Ok(endpoint)
            })
            .collect()
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file. Relative dataset and output paths
    /// are resolved against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            cfg.rebase_paths(dir);
        }
        Ok(cfg)
    }

    fn rebase_paths(&mut self, dir: &Path) {
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        if let Some(p) = self.dataset.train.as_mut() {
            rebase(p);
        }
        if let Some(p) = self.dataset.test.as_mut() {
            rebase(p);
        }
        rebase(&mut self.output_dir);
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.loop_config.validate()?;
        self.featurizer.validate()?;
        if self.repetitions == 0 {
            return Err(Error::config("repetitions must be >= 1"));
        }
        let d = &self.dataset;
        match (&d.train, &d.synthetic) {
            (Some(_), Some(_)) => return Err(Error::config("dataset: give either `train` or `synthetic`, not both")),
            (None, None) => return Err(Error::config("dataset: one of `train` or `synthetic` is required")),
            (None, Some(s)) => {
                s.validate()?;
                if d.test.is_some() {
                    return Err(Error::config("dataset: `test` cannot be combined with `synthetic`"));
                }
            }
            (Some(_), None) => {}
        }
        if d.test.is_none() && !(d.test_fraction > 0.0 && d.test_fraction < 1.0) {
            return Err(Error::config("dataset.test_fraction must be in (0, 1)"));
        }
        d.label_set()?;
        let w = &self.workers;
        if !(w.temperature > 0.0 && w.temperature.is_finite()) {
            return Err(Error::config("workers.temperature must be positive"));
        }
        if let Some(bad) = w.accuracies.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::config(format!("worker accuracy {bad} outside [0, 1]")));
        }
        if self.loop_config.metric == Metric::Matthews {
            let n = d
                .labels
                .as_ref()
                .map(Vec::len)
                .or_else(|| d.synthetic.as_ref().map(|s| s.n_classes));
            if n.is_some_and(|n| n != 2) {
                return Err(Error::UnsupportedMetric("matthews needs exactly two labels".into()));
            }
        }
        Ok(())
    }

    /// Checks that the worker section can field a committee of size `k` for
    /// the given source. Only meaningful for the committee scheme.
    pub fn check_committee(&self, remote: bool) -> Result<()> {
        if self.loop_config.scheme != Scheme::LmTurk {
            return Ok(());
        }
        let k = self.loop_config.k;
        let have = if remote {
            self.workers.endpoints.len()
        } else {
            self.workers.simulated_count()
        };
        if have != k {
            return Err(Error::config(format!(
                "loop.k = {k} but {have} {} workers are configured",
                if remote { "remote" } else { "simulated" }
            )));
        }
        Ok(())
    }
}

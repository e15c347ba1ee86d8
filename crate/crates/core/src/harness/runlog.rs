//! Newline-delimited JSON run logs.
//!
//! The first line is a header carrying the format tag and the resolved
//! configuration. Then, per repetition in ascending order, one line per
//! iteration followed by one repetition status line. Every line has a
//! `record` field naming its kind.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::acquisition::AcquisitionKind;
use crate::error::{Error, Result};
use crate::orchestrator::{IterationRecord, Scheme, Seeds};

use super::config::ExperimentConfig;

pub const LOG_FORMAT: &str = "lmturk-log-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IterationEntry {
    pub repetition: usize,
    pub iteration: usize,
    pub scheme: Scheme,
    pub acquisition: AcquisitionKind,
    pub acquired: usize,
    pub train_size: usize,
    pub kept_size: usize,
    pub annotation_accuracy: Option<f64>,
    pub kept_accuracy: Option<f64>,
    pub test_metric: f64,
    pub dev_metric: Option<f64>,
    pub degenerate: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<u64>,
}

impl IterationEntry {
    pub fn new(repetition: usize, record: &IterationRecord, with_wall_time: bool) -> Self {
        Self {
            repetition,
            iteration: record.iteration,
            scheme: record.scheme,
            acquisition: record.acquisition,
            acquired: record.acquired,
            train_size: record.train_size,
            kept_size: record.kept_size,
            annotation_accuracy: record.annotation_accuracy,
            kept_accuracy: record.kept_accuracy,
            test_metric: record.test_metric,
            dev_metric: record.dev_metric,
            degenerate: record.degenerate,
            wall_time_ms: with_wall_time.then_some(record.wall_time_ms),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepetitionStatus {
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepetitionEntry {
    pub repetition: usize,
    pub status: RepetitionStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Whether the error, if any, may go away on a rerun.
    #[serde(default)]
    pub retryable: bool,
    pub exhausted: bool,
    pub seeds: Seeds,
    pub final_test_metric: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum LogRecord {
    Header { format: String, config: Box<ExperimentConfig> },
    Iteration(IterationEntry),
    Repetition(RepetitionEntry),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub config: ExperimentConfig,
    pub iterations: Vec<IterationEntry>,
    pub repetitions: Vec<RepetitionEntry>,
}

impl RunLog {
    pub fn new(config: ExperimentConfig) -> Self {
        Self {
            config,
            iterations: Vec::new(),
            repetitions: Vec::new(),
        }
    }

    pub fn all_completed(&self) -> bool {
        !self.repetitions.is_empty() && self.repetitions.iter().all(|r| r.status == RepetitionStatus::Completed)
    }

    pub fn any_completed(&self) -> bool {
        self.repetitions.iter().any(|r| r.status == RepetitionStatus::Completed)
    }

    /// Iteration entries of one repetition, in iteration order.
    pub fn repetition(&self, repetition: usize) -> impl Iterator<Item = &IterationEntry> {
        self.iterations.iter().filter(move |e| e.repetition == repetition)
    }

    /// Sorts entries by `(repetition, iteration)`.
    pub fn normalize(&mut self) {
        self.iterations.sort_by_key(|e| (e.repetition, e.iteration));
        self.repetitions.sort_by_key(|r| r.repetition);
    }

    pub fn write_ndjson(&self, out: &mut impl Write) -> Result<()> {
        let header = LogRecord::Header {
            format: LOG_FORMAT.to_string(),
            config: Box::new(self.config.clone()),
        };
        serde_json::to_writer(&mut *out, &header)?;
        out.write_all(b"\n")?;
        for rep in &self.repetitions {
            for entry in self.repetition(rep.repetition) {
                serde_json::to_writer(&mut *out, &LogRecord::Iteration(entry.clone()))?;
                out.write_all(b"\n")?;
            }
            serde_json::to_writer(&mut *out, &LogRecord::Repetition(rep.clone()))?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_ndjson_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_ndjson(&mut buf)?;
        Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
    }

    pub fn read_ndjson(input: impl Read) -> Result<Self> {
        let mut log: Option<RunLog> = None;
        for (i, line) in BufReader::new(input).lines().enumerate() {
            let number = i + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: LogRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: number,
                message: e.to_string(),
            })?;
            match (record, log.as_mut()) {
                (LogRecord::Header { format, config }, None) => {
                    if format != LOG_FORMAT {
                        return Err(Error::Parse {
                            line: number,
                            message: format!("unsupported log format `{format}`"),
                        });
                    }
                    log = Some(RunLog::new(*config));
                }
                (LogRecord::Header { .. }, Some(_)) => {
                    return Err(Error::Parse {
                        line: number,
                        message: "second header".into(),
                    })
                }
                (_, None) => {
                    return Err(Error::Parse {
                        line: number,
                        message: "record before header".into(),
                    })
                }
                (LogRecord::Iteration(e), Some(log)) => log.iterations.push(e),
                (LogRecord::Repetition(r), Some(log)) => log.repetitions.push(r),
            }
        }
        log.ok_or_else(|| Error::Parse {
            line: 1,
            message: "empty run log".into(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write_ndjson(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_ndjson(File::open(path)?)
    }
}

//! HTTP client for remote prompted-LM workers.
//!
//! Wire protocol (HTTP/1.1, JSON, UTF-8):
//!
//! * `POST {base_url}/v1/annotate` with
//!   `{"items": [{"id", "text", "text_pair"?}], "label_set": [..], "template_id"}`
//!   answered by `{"annotations": [{"id", "logits": [N floats], "label_index"}]}`
//!   in request order. Oversized batches get `413` and malformed bodies `400`.
//! * `GET {base_url}/v1/health` answered by
//!   `{"status", "model_name", "templates": [..]}`.
//!
//! One worker is one `template_id` on a server.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::data_model::{argmax_unchecked, Annotation, Example, LabelSet};
use crate::error::{Error, Result};

use super::Worker;

/// Attempts after the first one for retryable failures.
pub const MAX_RETRIES: u32 = 3;
/// Backoff before retry `r` (1-based) is `BACKOFF_BASE_MS * 2^(r-1)`.
pub const BACKOFF_BASE_MS: u64 = 250;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkerEndpoint {
    pub base_url: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_batch")]
    pub max_batch: usize,
    pub template_id: String,
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_max_batch() -> usize {
    32
}

impl WorkerEndpoint {
    pub fn new(base_url: impl Into<String>, template_id: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            timeout_ms: default_timeout_ms(),
            max_batch: default_max_batch(),
            template_id: template_id.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_batch == 0 {
            return Err(Error::config("max_batch must be >= 1"));
        }
        if self.base_url.is_empty() {
            return Err(Error::config("empty base_url"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotateItem {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_pair: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotateRequest {
    pub items: Vec<AnnotateItem>,
    pub label_set: Vec<String>,
    pub template_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireAnnotation {
    pub id: String,
    pub logits: Vec<f64>,
    pub label_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotateResponse {
    pub annotations: Vec<WireAnnotation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthStatus {
    pub status: String,
    pub model_name: String,
    pub templates: Vec<String>,
}

pub struct RemoteWorker {
    id: String,
    endpoint: WorkerEndpoint,
    agent: ureq::Agent,
    backoff_base: Duration,
}

impl std::fmt::Debug for RemoteWorker {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteWorker")
            .field("id", &self.id)
            .field("endpoint", &self.endpoint)
            .finish()
    }
}

enum Attempt<T> {
    Done(T),
    Retry(String),
}

impl RemoteWorker {
    pub fn new(id: impl Into<String>, endpoint: WorkerEndpoint) -> Result<Self> {
        endpoint.validate()?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(endpoint.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            id: id.into(),
            endpoint,
            agent,
            backoff_base: Duration::from_millis(BACKOFF_BASE_MS),
        })
    }

    /// Overrides the retry backoff base.
    pub fn with_backoff_base(mut self, base: Duration) -> Self {
        self.backoff_base = base;
        self
    }

    pub fn endpoint(&self) -> &WorkerEndpoint {
        &self.endpoint
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.endpoint.base_url.trim_end_matches('/'))
    }

    fn unavailable(&self, message: String) -> Error {
        Error::WorkerUnavailable {
            worker: self.id.clone(),
            message,
        }
    }

    fn with_retries<T>(&self, mut attempt: impl FnMut() -> Result<Attempt<T>>) -> Result<T> {
        let mut last = String::new();
        for retry in 0..=MAX_RETRIES {
            if retry > 0 {
                thread::sleep(self.backoff_base * (1 << (retry - 1)));
            }
            match attempt()? {
                Attempt::Done(v) => return Ok(v),
                Attempt::Retry(msg) => last = msg,
            }
        }
        Err(self.unavailable(format!("gave up after {} attempts: {last}", MAX_RETRIES + 1)))
    }

    pub fn health(&self) -> Result<HealthStatus> {
        let url = self.url("/v1/health");
        self.with_retries(|| {
            let mut resp = match self.agent.get(&url).call() {
                Ok(r) => r,
                Err(e) => return Ok(Attempt::Retry(e.to_string())),
            };
            let status = resp.status().as_u16();
            if status >= 500 {
                return Ok(Attempt::Retry(format!("HTTP {status}")));
            }
            if status != 200 {
                return Err(Error::Protocol {
                    example_id: None,
                    message: format!("health check returned HTTP {status}"),
                });
            }
            let body: HealthStatus = resp.body_mut().read_json().map_err(|e| Error::Protocol {
                example_id: None,
                message: format!("malformed health response: {e}"),
            })?;
            Ok(Attempt::Done(body))
        })
    }

    fn post_chunk(&self, chunk: &[Example], labels: &LabelSet) -> Result<Vec<Annotation>> {
        let request = AnnotateRequest {
            items: chunk
                .iter()
                .map(|ex| AnnotateItem {
                    id: ex.id.clone(),
                    text: ex.text.clone().unwrap_or_default(),
                    text_pair: None,
                })
                .collect(),
            label_set: labels.names().to_vec(),
            template_id: self.endpoint.template_id.clone(),
        };
        let url = self.url("/v1/annotate");
        let response: AnnotateResponse = self.with_retries(|| {
            let mut resp = match self.agent.post(&url).send_json(&request) {
                Ok(r) => r,
                Err(e) => return Ok(Attempt::Retry(e.to_string())),
            };
            let status = resp.status().as_u16();
            if status >= 500 || status == 429 {
                return Ok(Attempt::Retry(format!("HTTP {status}")));
            }
            if status != 200 {
                let detail = resp.body_mut().read_to_string().unwrap_or_default();
                return Err(Error::Protocol {
                    example_id: None,
                    message: format!("annotate returned HTTP {status}: {}", detail.trim()),
                });
            }
            let body = resp.body_mut().read_json().map_err(|e| Error::Protocol {
                example_id: chunk.first().map(|ex| ex.id.clone()),
                message: format!("malformed annotate response: {e}"),
            })?;
            Ok(Attempt::Done(body))
        })?;
        self.decode(chunk, labels, response)
    }

    fn decode(&self, chunk: &[Example], labels: &LabelSet, response: AnnotateResponse) -> Result<Vec<Annotation>> {
        if response.annotations.len() != chunk.len() {
            return Err(Error::Protocol {
                example_id: None,
                message: format!(
                    "{} annotations returned for {} items",
                    response.annotations.len(),
                    chunk.len()
                ),
            });
        }
        chunk
            .iter()
            .zip(response.annotations)
            .map(|(ex, wire)| {
                let bad = |message: String| Error::Protocol {
                    example_id: Some(ex.id.clone()),
                    message,
                };
                if wire.id != ex.id {
                    return Err(bad(format!("response id `{}` out of order", wire.id)));
                }
                if wire.logits.len() != labels.len() {
                    return Err(bad(format!("{} logits for {} labels", wire.logits.len(), labels.len())));
                }
                if wire.logits.iter().any(|z| !z.is_finite()) {
                    return Err(bad("non-finite logit".into()));
                }
                if wire.label_index != argmax_unchecked(&wire.logits) {
                    return Err(bad(format!("label_index {} is not the argmax of the logits", wire.label_index)));
                }
                Ok(Annotation {
                    worker_id: self.id.clone(),
                    label: wire.label_index,
                    logits: wire.logits,
                })
            })
            .collect()
    }
}

impl Worker for RemoteWorker {
    fn id(&self) -> &str {
        &self.id
    }

    fn annotate_batch(&mut self, examples: &[Example], labels: &LabelSet) -> Result<Vec<Annotation>> {
        if examples.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        if let Some(ex) = examples.iter().find(|ex| ex.text.as_deref().is_none_or(str::is_empty)) {
            return Err(Error::invalid(format!("remote workers need text; example `{}` has none", ex.id)));
        }
        let mut out = Vec::with_capacity(examples.len());
        for chunk in examples.chunks(self.endpoint.max_batch) {
            out.extend(self.post_chunk(chunk, labels)?);
        }
        Ok(out)
    }
}

//! Aggregating a recorded annotation dump without running a loop.
//!
//! The dump is newline-delimited JSON with one annotation per line:
//! `{"id": "...", "worker_id": "...", "logits": [..]}`. An optional
//! `label_index` must equal the argmax of the logits. Profiles, needed by the
//! dev-score strategies, are a JSON array of `{"worker_id", "dev_score"}`.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read};

use serde::{Deserialize, Serialize};

use crate::aggregation::{aggregate, AggregationStrategy};
use crate::data_model::{argmax_tiebreak, AggregatedLabel, Annotation};
use crate::error::{Error, Result};
use crate::workers::WorkerProfile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DumpLine {
    pub id: String,
    pub worker_id: String,
    pub logits: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedRecord {
    pub id: String,
    pub label: usize,
    pub dist: Vec<f64>,
    pub entropy: f64,
    pub annotations: usize,
}

/// Groups annotations by example id, in order of first appearance.
pub fn read_dump(input: impl Read) -> Result<Vec<(String, Vec<Annotation>)>> {
    let mut groups: Vec<(String, Vec<Annotation>)> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let number = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse { line: number, message };
        let d: DumpLine = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let label = argmax_tiebreak(&d.logits).map_err(|e| parse_err(e.to_string()))?;
        if d.label_index.is_some_and(|l| l != label) {
            return Err(parse_err(format!("label_index disagrees with the logits for `{}`", d.id)));
        }
        let slot = *index.entry(d.id.clone()).or_insert_with(|| {
            groups.push((d.id.clone(), Vec::new()));
            groups.len() - 1
        });
        let group = &mut groups[slot].1;
        if group.iter().any(|a| a.worker_id == d.worker_id) {
            return Err(parse_err(format!("worker `{}` annotated `{}` twice", d.worker_id, d.id)));
        }
        group.push(Annotation {
            worker_id: d.worker_id,
            label,
            logits: d.logits,
        });
    }
    Ok(groups)
}

pub fn read_profiles(input: impl Read) -> Result<Vec<WorkerProfile>> {
    Ok(serde_json::from_reader(input)?)
}

pub fn aggregate_dump(
    groups: &[(String, Vec<Annotation>)],
    strategy: AggregationStrategy,
    profiles: Option<&[WorkerProfile]>,
) -> Result<Vec<AggregatedRecord>> {
    groups
        .iter()
        .map(|(id, anns)| {
            let AggregatedLabel { label, dist, entropy } = aggregate(strategy, anns, profiles).map_err(|e| match e {
                Error::InvalidInput(m) => Error::invalid(format!("example `{id}`: {m}")),
                other => other,
            })?;
            Ok(AggregatedRecord {
                id: id.clone(),
                label,
                dist,
                entropy,
                annotations: anns.len(),
            })
        })
        .collect()
}

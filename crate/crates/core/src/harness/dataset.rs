//! Tab-separated datasets.
//!
//! The first line is the header `id<TAB>label<TAB>text`; every further
//! non-blank line holds one example. Inside a field, `\t`, `\n`, `\r` and `\\`
//! stand for tab, newline, carriage return and backslash. An empty label
//! marks an unlabeled example.

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::data_model::{Example, LabelIndex, LabelSet, LabeledExample};
use crate::error::{Error, Result};
use crate::student::Featurizer;

pub const HEADER: &str = "id\tlabel\ttext";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub id: String,
    pub label: Option<LabelIndex>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub label_set: LabelSet,
    pub records: Vec<Record>,
}

impl Dataset {
    pub fn new(label_set: LabelSet, records: Vec<Record>) -> Result<Self> {
        let mut ids = HashSet::new();
        for r in &records {
            if !ids.insert(r.id.as_str()) {
                return Err(Error::invalid(format!("duplicate id `{}`", r.id)));
            }
            if r.label.is_some_and(|l| l >= label_set.len()) {
                return Err(Error::invalid(format!("record `{}` has an out-of-range label", r.id)));
            }
        }
        Ok(Self { label_set, records })
    }

    /// Featurizes every record. Labeled records become labeled examples, the
    /// rest plain pool examples; both keep file order.
    pub fn featurize(&self, featurizer: &Featurizer) -> (Vec<LabeledExample>, Vec<Example>) {
        let mut labeled = Vec::new();
        let mut unlabeled = Vec::new();
        for r in &self.records {
            let example = Example::new(r.id.clone(), featurizer.featurize(&r.text)).with_text(r.text.clone());
            match r.label {
                Some(label) => labeled.push(LabeledExample::new(example, label)),
                None => unlabeled.push(example),
            }
        }
        (labeled, unlabeled)
    }
}

pub fn escape_field(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    for ch in raw.chars() {
        match ch {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

pub fn unescape_field(field: &str, line: usize) -> Result<String> {
    let mut out = String::with_capacity(field.len());
    let mut chars = field.chars();
    while let Some(ch) = chars.next() {
        if ch != '\\' {
            out.push(ch);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            other => {
                return Err(Error::Parse {
                    line,
                    message: format!("bad escape sequence `\\{}`", other.map(String::from).unwrap_or_default()),
                })
            }
        }
    }
    Ok(out)
}

/// Parses a dataset. With `declared`, label names must come from it;
/// otherwise the label set is the sorted set of names seen.
pub fn read_dataset(input: impl Read, declared: Option<&LabelSet>) -> Result<Dataset> {
    let reader = BufReader::new(input);
    let mut rows: Vec<(usize, String, String, String)> = Vec::new();
    let mut saw_header = false;
    for (i, line) in reader.lines().enumerate() {
        let number = i + 1;
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if !saw_header {
            if line.trim_start_matches('\u{feff}') != HEADER {
                return Err(Error::Parse {
                    line: number,
                    message: format!("expected header `{}`", escape_field(HEADER)),
                });
            }
            saw_header = true;
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: number,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let id = unescape_field(fields[0], number)?;
        if id.is_empty() {
            return Err(Error::Parse {
                line: number,
                message: "empty id".into(),
            });
        }
        rows.push((number, id, unescape_field(fields[1], number)?, unescape_field(fields[2], number)?));
    }
    if !saw_header {
        return Err(Error::Parse {
            line: 1,
            message: "empty file".into(),
        });
    }

    let label_set = match declared {
        Some(ls) => ls.clone(),
        None => {
            let names: BTreeSet<&str> = rows.iter().map(|r| r.2.as_str()).filter(|l| !l.is_empty()).collect();
            LabelSet::new(names).map_err(|e| Error::Parse {
                line: 1,
                message: format!("cannot build a label set from the file: {e}"),
            })?
        }
    };

    let mut seen = HashSet::new();
    let mut records = Vec::with_capacity(rows.len());
    for (line, id, label, text) in rows {
        if !seen.insert(id.clone()) {
            return Err(Error::Parse {
                line,
                message: format!("duplicate id `{id}`"),
            });
        }
        let label = if label.is_empty() {
            None
        } else {
            Some(label_set.index_of(&label).ok_or_else(|| Error::Parse {
                line,
                message: format!("unknown label `{label}`"),
            })?)
        };
        records.push(Record { id, label, text });
    }
    Dataset::new(label_set, records)
}

pub fn load_dataset(path: impl AsRef<Path>, declared: Option<&LabelSet>) -> Result<Dataset> {
    read_dataset(File::open(path)?, declared)
}

pub fn write_dataset(dataset: &Dataset, out: &mut impl Write) -> Result<()> {
    writeln!(out, "{HEADER}")?;
    for r in &dataset.records {
        let label = r
            .label
            .and_then(|l| dataset.label_set.name(l))
            .map(escape_field)
            .unwrap_or_default();
        writeln!(out, "{}\t{label}\t{}", escape_field(&r.id), escape_field(&r.text))?;
    }
    Ok(())
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_dataset(dataset, &mut out)?;
    out.flush()?;
    Ok(())
}

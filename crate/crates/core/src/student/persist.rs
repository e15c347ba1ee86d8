//! Text persistence for [`StudentModel`].
//!
//! ```text
//! student-v1
//! labels<TAB>name_0<TAB>...<TAB>name_{N-1}
//! dimension<TAB>F
//! hash_seed<TAB>seed
//! ngram_range<TAB>lo<TAB>hi
//! lowercase<TAB>true|false
//! bias<TAB>b_0<TAB>...
//! row<TAB>c<TAB>w_0 w_1 ... w_{F-1}      (one line per label)
//! ```
//!
//! Floats use Rust's shortest round-trip formatting, so a loaded model
//! reproduces the saved logits exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::data_model::LabelSet;
use crate::error::{Error, Result};

use super::featurizer::FeaturizerConfig;
use super::model::StudentModel;

pub const FORMAT_TAG: &str = "student-v1";

pub fn write_model(model: &StudentModel, out: &mut impl Write) -> Result<()> {
    if !model.is_trained() {
        return Err(Error::InvalidState("refusing to save an untrained model".into()));
    }
    let names = model.label_set().names();
    if names.iter().any(|n| n.contains(['\t', '\n', '\r'])) {
        return Err(Error::Format("label names may not contain tabs or newlines".into()));
    }
    let f = model.featurizer_config();
    writeln!(out, "{FORMAT_TAG}")?;
    writeln!(out, "labels\t{}", names.join("\t"))?;
    writeln!(out, "dimension\t{}", f.dimension)?;
    writeln!(out, "hash_seed\t{}", f.hash_seed)?;
    writeln!(out, "ngram_range\t{}\t{}", f.ngram_range.0, f.ngram_range.1)?;
    writeln!(out, "lowercase\t{}", f.lowercase)?;
    let bias: Vec<String> = model.bias().iter().map(f64::to_string).collect();
    writeln!(out, "bias\t{}", bias.join("\t"))?;
    let (raw, scale) = model.raw_parts();
    debug_assert_eq!(scale, 1.0, "trained models have the decay folded in");
    let n = model.n_labels();
    for c in 0..n {
        write!(out, "row\t{c}\t")?;
        for feature in 0..model.dimension() {
            if feature > 0 {
                out.write_all(b" ")?;
            }
            let w = scale * raw[feature * n + c];
            if w == 0.0 {
                out.write_all(b"0")?;
            } else {
                write!(out, "{w:e}")?;
            }
        }
        writeln!(out)?;
    }
    Ok(())
}

struct Lines<R> {
    inner: std::io::Lines<BufReader<R>>,
    line: usize,
}

impl<R: Read> Lines<R> {
    fn next_fields(&mut self, key: &str) -> Result<Vec<String>> {
        self.line += 1;
        let line = self
            .inner
            .next()
            .ok_or_else(|| Error::Format(format!("unexpected end of file, expected `{key}`")))??;
        let mut fields = line.split('\t').map(str::to_string);
        match fields.next() {
            Some(k) if k == key => Ok(fields.collect()),
            other => Err(Error::Format(format!(
                "line {}: expected `{key}`, found `{}`",
                self.line,
                other.unwrap_or_default()
            ))),
        }
    }

    fn single<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let fields = self.next_fields(key)?;
        match fields.as_slice() {
            [v] => v
                .parse()
                .map_err(|_| Error::Format(format!("line {}: bad `{key}` value `{v}`", self.line))),
            _ => Err(Error::Format(format!("line {}: `{key}` takes one value", self.line))),
        }
    }
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    let v: f64 = s
        .parse()
        .map_err(|_| Error::Format(format!("line {line}: bad number `{s}`")))?;
    if !v.is_finite() {
        return Err(Error::Format(format!("line {line}: non-finite number")));
    }
    Ok(v)
}

pub fn read_model(input: impl Read) -> Result<StudentModel> {
    let mut lines = Lines {
        inner: BufReader::new(input).lines(),
        line: 1,
    };
    match lines.inner.next() {
        Some(Ok(tag)) if tag == FORMAT_TAG => {}
        Some(Ok(tag)) => return Err(Error::Format(format!("unknown format tag `{tag}`"))),
        Some(Err(e)) => return Err(e.into()),
        None => return Err(Error::Format("empty model file".into())),
    }
    let label_set = LabelSet::new(lines.next_fields("labels")?)?;
    let dimension: usize = lines.single("dimension")?;
    let hash_seed: u64 = lines.single("hash_seed")?;
    let range = lines.next_fields("ngram_range")?;
    let ngram_range = match range.as_slice() {
        [lo, hi] => (
            lo.parse().map_err(|_| Error::Format("bad ngram_range".into()))?,
            hi.parse().map_err(|_| Error::Format("bad ngram_range".into()))?,
        ),
        _ => return Err(Error::Format("ngram_range takes two values".into())),
    };
    let lowercase: bool = lines.single("lowercase")?;
    let featurizer = FeaturizerConfig {
        ngram_range,
        dimension,
        hash_seed,
        lowercase,
    };
    featurizer.validate()?;

    let bias = lines
        .next_fields("bias")?
        .iter()
        .map(|s| parse_f64(s, lines.line))
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::with_capacity(label_set.len());
    for c in 0..label_set.len() {
        let fields = lines.next_fields("row")?;
        let line = lines.line;
        let [index, values] = fields.as_slice() else {
            return Err(Error::Format(format!("line {line}: malformed row")));
        };
        if index.parse::<usize>().ok() != Some(c) {
            return Err(Error::Format(format!("line {line}: expected row {c}")));
        }
        let row = values
            .split(' ')
            .map(|s| parse_f64(s, line))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    StudentModel::from_parameters(label_set, featurizer, &rows, bias)
}

pub fn save_model(model: &StudentModel, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_model(model, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<StudentModel> {
    read_model(File::open(path)?)
}

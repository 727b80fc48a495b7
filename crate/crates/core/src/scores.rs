//! Model outputs, per-sample predictions, score files and dataset splits.
//!
//! Logits are the canonical representation. Probabilities are always derived
//! with a max-subtracted softmax; a score file that stores probabilities is
//! converted to log-probabilities on load, which re-softmaxes to the stored
//! row up to renormalization.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::{argmax, softmax_row, Matrix};

/// Probabilities read from disk are floored here before taking the log.
const PROB_FLOOR: f64 = 1e-300;

#[derive(Debug, Error)]
pub enum ScoresError {
    #[error("score set is empty")]
    Empty,
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("row {row}: label {label} out of range for {classes} classes")]
    LabelOutOfRange { row: usize, label: usize, classes: usize },
    #[error("row {row}: non-finite logit")]
    NonFiniteLogit { row: usize },
    #[error("{labels} labels for {rows} logit rows")]
    LengthMismatch { rows: usize, labels: usize },
    #[error("{ids} ids for {rows} rows")]
    IdCountMismatch { rows: usize, ids: usize },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("split leaves the {0} part empty")]
    EmptySplitPart(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ScoresError> = std::result::Result<T, E>;

/// Logits and labels for `n` samples over `K` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    logits: Matrix,
    labels: Vec<usize>,
    ids: Option<Vec<String>>,
}

impl ScoreSet {
    pub fn new(logits: Matrix, labels: Vec<usize>, ids: Option<Vec<String>>) -> Result<Self> {
        if logits.rows() == 0 {
            return Err(ScoresError::Empty);
        }
        if logits.cols() < 2 {
            return Err(ScoresError::TooFewClasses(logits.cols()));
        }
        if labels.len() != logits.rows() {
            return Err(ScoresError::LengthMismatch {
                rows: logits.rows(),
                labels: labels.len(),
            });
        }
        if let Some(ids) = &ids {
            if ids.len() != logits.rows() {
                return Err(ScoresError::IdCountMismatch {
                    rows: logits.rows(),
                    ids: ids.len(),
                });
            }
        }
        for (row, (z, &label)) in logits.iter_rows().zip(&labels).enumerate() {
            if z.iter().any(|v| !v.is_finite()) {
                return Err(ScoresError::NonFiniteLogit { row });
            }
            if label >= logits.cols() {
                return Err(ScoresError::LabelOutOfRange {
                    row,
                    label,
                    classes: logits.cols(),
                });
            }
        }
        Ok(Self { logits, labels, ids })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.logits.cols()
    }

    pub fn logits(&self) -> &Matrix {
        &self.logits
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn ids(&self) -> Option<&[String]> {
        self.ids.as_deref()
    }

    /// Row-wise softmax of the logits.
    pub fn probabilities(&self) -> Matrix {
        let mut out = Matrix::zeros(self.len(), self.class_count());
        for (i, z) in self.logits.iter_rows().enumerate() {
            out.row_mut(i).copy_from_slice(&softmax_row(z));
        }
        out
    }

    /// Same samples with every logit passed through `f`.
    pub fn map_logits(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.logits.map(f), self.labels.clone(), self.ids.clone())
    }

    /// Subset of rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let ids = self
            .ids
            .as_ref()
            .map(|ids| indices.iter().map(|&i| ids[i].clone()).collect());
        Self::new(
            self.logits.select_rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
            ids,
        )
    }

    pub fn accuracy(&self) -> f64 {
        let correct = self
            .logits
            .iter_rows()
            .zip(&self.labels)
            .filter(|(z, &y)| argmax(z) == y)
            .count();
        correct as f64 / self.len() as f64
    }
}

/// Predicted class, maximum softmax probability and correctness of one sample.
///
/// `sample` is the row index in the originating score set; metrics use it to
/// order samples that share a confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub sample: usize,
    pub predicted_class: usize,
    pub confidence: f64,
    pub is_correct: bool,
}

impl Prediction {
    pub fn new(sample: usize, confidence: f64, is_correct: bool) -> Self {
        Self {
            sample,
            predicted_class: 0,
            confidence,
            is_correct,
        }
    }
}

/// Prediction for a single logit row.
pub fn predict_row(sample: usize, logits: &[f64], label: usize) -> Result<Prediction> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(ScoresError::NonFiniteLogit { row: sample });
    }
    let probs = softmax_row(logits);
    let predicted_class = argmax(logits);
    Ok(Prediction {
        sample,
        predicted_class,
        confidence: probs[predicted_class],
        is_correct: predicted_class == label,
    })
}

/// One prediction per row, using the maximum softmax probability as confidence.
pub fn softmax_confidence(scores: &ScoreSet) -> Result<Vec<Prediction>> {
    scores
        .logits
        .iter_rows()
        .zip(&scores.labels)
        .enumerate()
        .map(|(i, (z, &y))| predict_row(i, z, y))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Accept,
    Reject,
}

/// Selective decision rule: accept a prediction iff its confidence is at least
/// `threshold`.
pub fn accept_reject(predictions: &[Prediction], threshold: f64) -> Vec<Decision> {
    predictions
        .iter()
        .map(|p| {
            if p.confidence >= threshold {
                Decision::Accept
            } else {
                Decision::Reject
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Score files
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ValueKind {
    Logit,
    Prob,
}

impl ValueKind {
    fn prefix(self) -> &'static str {
        match self {
            ValueKind::Logit => "logit_",
            ValueKind::Prob => "prob_",
        }
    }

    fn to_logit(self, v: f64) -> f64 {
        match self {
            ValueKind::Logit => v,
            ValueKind::Prob => v.max(PROB_FLOOR).ln(),
        }
    }
}

fn parse_err(line: u64, message: impl Into<String>) -> ScoresError {
    ScoresError::Parse {
        line,
        message: message.into(),
    }
}

/// Accumulates parsed rows and checks them as they arrive.
struct RowSink {
    classes: usize,
    logits: Vec<f64>,
    labels: Vec<usize>,
    ids: Vec<String>,
}

impl RowSink {
    fn new(classes: usize) -> Self {
        Self {
            classes,
            logits: Vec::new(),
            labels: Vec::new(),
            ids: Vec::new(),
        }
    }

    fn push(&mut self, line: u64, id: String, label: usize, values: Vec<f64>) -> Result<()> {
        if values.len() != self.classes {
            return Err(parse_err(
                line,
                format!("expected {} class values, found {}", self.classes, values.len()),
            ));
        }
        if label >= self.classes {
            return Err(parse_err(
                line,
                format!("label {label} out of range for {} classes", self.classes),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(parse_err(line, "non-finite value"));
        }
        self.logits.extend(values);
        self.labels.push(label);
        self.ids.push(id);
        Ok(())
    }

    fn finish(self) -> Result<ScoreSet> {
        let n = self.labels.len();
        if n == 0 {
            return Err(ScoresError::Empty);
        }
        let ids = if self.ids.iter().all(String::is_empty) {
            None
        } else if self.ids.iter().any(String::is_empty) {
            return Err(ScoresError::Parse {
                line: 0,
                message: "ids must be given for every row or for none".into(),
            });
        } else {
            Some(self.ids)
        };
        let logits = Matrix::from_vec(n, self.classes, self.logits).expect("row length checked");
        ScoreSet::new(logits, self.labels, ids)
    }
}

fn header_kind(columns: &[&str], line: u64) -> Result<(ValueKind, usize)> {
    if columns.len() < 4 || columns[0] != "id" || columns[1] != "label" {
        return Err(parse_err(
            line,
            "header must start with `id,label` followed by at least two class columns",
        ));
    }
    let kind = if columns[2].starts_with("prob") {
        ValueKind::Prob
    } else {
        ValueKind::Logit
    };
    for (k, col) in columns[2..].iter().enumerate() {
        let expected = format!("{}{k}", kind.prefix());
        if *col != expected {
            return Err(parse_err(line, format!("expected column `{expected}`, found `{col}`")));
        }
    }
    Ok((kind, columns.len() - 2))
}

fn parse_f64(field: &str, line: u64) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| parse_err(line, format!("not a number: `{field}`")))
}

fn parse_label(field: &str, line: u64) -> Result<usize> {
    field
        .trim()
        .parse::<usize>()
        .map_err(|_| parse_err(line, format!("invalid label `{field}`")))
}

fn is_jsonl(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("jsonl") | Some("ndjson")
    )
}

/// Reads a CSV (default) or JSON-lines (`.jsonl`) score file.
pub fn load_scores(path: impl AsRef<Path>) -> Result<ScoreSet> {
    let path = path.as_ref();
    let file = File::open(path)?;
    if is_jsonl(path) {
        read_jsonl(BufReader::new(file))
    } else {
        read_csv(file)
    }
}

pub fn read_csv<R: std::io::Read>(reader: R) -> Result<ScoreSet> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(rec) => rec.map_err(|e| csv_err(&e))?,
        None => return Err(ScoresError::Empty),
    };
    let header_line = header.position().map_or(1, |p| p.line());
    let columns: Vec<&str> = header.iter().map(str::trim).collect();
    let (kind, classes) = header_kind(&columns, header_line)?;

    let mut sink = RowSink::new(classes);
    for rec in records {
        let rec = rec.map_err(|e| csv_err(&e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != classes + 2 {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", classes + 2, rec.len()),
            ));
        }
        let label = parse_label(&rec[1], line)?;
        let values = (2..rec.len())
            .map(|j| parse_f64(&rec[j], line).map(|v| kind.to_logit(v)))
            .collect::<Result<Vec<_>>>()?;
        sink.push(line, rec[0].trim().to_string(), label, values)?;
    }
    sink.finish()
}

fn csv_err(e: &csv::Error) -> ScoresError {
    let line = e.position().map_or(0, |p| p.line());
    parse_err(line, e.to_string())
}

pub fn read_jsonl<R: BufRead>(reader: R) -> Result<ScoreSet> {
    let mut sink: Option<(ValueKind, RowSink)> = None;
    for (idx, text) in reader.lines().enumerate() {
        let line = idx as u64 + 1;
        let text = text?;
        if text.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| parse_err(line, e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| parse_err(line, "expected a JSON object"))?;

        let (kind, sink) = match &mut sink {
            Some(s) => s,
            None => {
                let kind = if obj.contains_key("prob_0") {
                    ValueKind::Prob
                } else {
                    ValueKind::Logit
                };
                let classes = (0..)
                    .take_while(|k| obj.contains_key(&format!("{}{k}", kind.prefix())))
                    .count();
                if classes < 2 {
                    return Err(parse_err(line, "need at least two class fields"));
                }
                sink.insert((kind, RowSink::new(classes)))
            }
        };
        let kind = *kind;

        let id = match obj.get("id") {
            None | Some(serde_json::Value::Null) => String::new(),
            Some(serde_json::Value::String(s)) => s.clone(),
            Some(other) => other.to_string(),
        };
        let label = obj
            .get("label")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| parse_err(line, "missing or invalid `label`"))? as usize;
        let class_fields = obj.keys().filter(|k| k.starts_with(kind.prefix())).count();
        let values = (0..class_fields)
            .map(|k| {
                obj.get(&format!("{}{k}", kind.prefix()))
                    .and_then(serde_json::Value::as_f64)
                    .map(|v| kind.to_logit(v))
                    .ok_or_else(|| parse_err(line, format!("missing `{}{k}`", kind.prefix())))
            })
            .collect::<Result<Vec<_>>>()?;
        sink.push(line, id, label, values)?;
    }
    sink.ok_or(ScoresError::Empty)?.1.finish()
}

/// Writes logits as CSV, or JSON lines when the path ends in `.jsonl`.
///
/// Values are written in shortest round-trip form, so loading the file back
/// reproduces every logit bit for bit.
pub fn save_scores(scores: &ScoreSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = BufWriter::new(File::create(path)?);
    if is_jsonl(path) {
        write_jsonl(scores, &mut out)?;
    } else {
        write_csv(scores, &mut out)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_csv<W: Write>(scores: &ScoreSet, out: &mut W) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().from_writer(out);
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((0..scores.class_count()).map(|k| format!("logit_{k}")));
    wtr.write_record(&header).map_err(io_from_csv)?;
    for (i, z) in scores.logits.iter_rows().enumerate() {
        let mut rec = Vec::with_capacity(z.len() + 2);
        rec.push(scores.ids.as_ref().map_or(String::new(), |ids| ids[i].clone()));
        rec.push(scores.labels[i].to_string());
        rec.extend(z.iter().map(|v| format!("{v:?}")));
        wtr.write_record(&rec).map_err(io_from_csv)?;
    }
    wtr.flush()?;
    Ok(())
}

fn io_from_csv(e: csv::Error) -> ScoresError {
    ScoresError::Io(std::io::Error::other(e))
}

pub fn write_jsonl<W: Write>(scores: &ScoreSet, out: &mut W) -> Result<()> {
    for (i, z) in scores.logits.iter_rows().enumerate() {
        let mut line = String::from("{");
        if let Some(ids) = &scores.ids {
            let _ = write!(line, "\"id\":{},", serde_json::Value::from(ids[i].as_str()));
        }
        let _ = write!(line, "\"label\":{}", scores.labels[i]);
        for (k, v) in z.iter().enumerate() {
            let _ = write!(line, ",\"logit_{k}\":{}", serde_json::Value::from(*v));
        }
        line.push('}');
        writeln!(out, "{line}")?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let parts = [
            ("train", self.train_fraction),
            ("val", self.val_fraction),
            ("test", self.test_fraction),
        ];
        for (name, f) in parts {
            if !(f > 0.0 && f < 1.0) {
                return Err(ScoresError::InvalidSplit(format!("{name} fraction {f} outside (0, 1)")));
            }
        }
        let total = self.train_fraction + self.val_fraction + self.test_fraction;
        if (total - 1.0).abs() > 1e-9 {
            return Err(ScoresError::InvalidSplit(format!("fractions sum to {total}, not 1")));
        }
        Ok(())
    }
}

/// Disjoint, exhaustive partition of `0..n`. Each part is sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded random partition of `n` samples. Validation and test sizes are
/// `round(n * fraction)`; training receives the remainder.
pub fn split(n: usize, spec: &SplitSpec) -> Result<SplitIndices> {
    spec.validate()?;
    let n_val = (n as f64 * spec.val_fraction).round() as usize;
    let n_test = (n as f64 * spec.test_fraction).round() as usize;
    if n_val == 0 {
        return Err(ScoresError::EmptySplitPart("val"));
    }
    if n_test == 0 {
        return Err(ScoresError::EmptySplitPart("test"));
    }
    if n_val + n_test >= n {
        return Err(ScoresError::EmptySplitPart("train"));
    }
    let n_train = n - n_val - n_test;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let mut train = order[..n_train].to_vec();
    let mut val = order[n_train..n_train + n_val].to_vec();
    let mut test = order[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices { train, val, test })
}
